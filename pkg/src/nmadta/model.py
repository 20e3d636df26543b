"""Joint log-posterior of the four network models.

Per series, the logit of a positive result at threshold ``C`` is::

    mu + z * log(c_star / C) / exp(log_sigma)

with ``mu = m[k,j] + eps[i,k,j] (+ eta[i,j])`` and
``log_sigma = s[k,j] + u[i,k,j] (+ gamma[i,j])``.

Effects are stored in 4-vectors ordered ``(loc diseased, loc non-diseased,
scale diseased, scale non-diseased)``; this is the coordinate order of every
random-effects covariance matrix.

Wishart convention: by default ``Wishart(R, nu)`` is placed on the precision
matrix of each random-effects normal (``R = wishart_scale * I`` in the
``|X|^((nu-p-1)/2) exp(-tr(R X)/2)`` form, ``nu`` = matrix dimension). With
``wishart_convention = covariance`` the covariance matrix itself gets that
density instead.
"""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum

import numpy as np
from scipy.special import expit, log_expit

from .dataset import Dataset, DiseaseGroup, TestDescriptor, ThresholdSeries, build_network_graph, validate_for_model
from .likelihood import AccuracyParams, CellTable, dataset_loglik
from .wishart import LOG_2PI, mvn_logpdf_zero_mean, wishart_logpdf

__all__ = [
    "ModelVariant",
    "CovarianceStructure",
    "WishartConvention",
    "PriorConfig",
    "ModelSpec",
    "ModelError",
    "CovarianceError",
    "Model",
    "ParameterState",
    "build_layout",
    "log_prior",
    "random_effects_logdensity",
    "log_posterior",
]

LOC = (0, 1)
SCALE = (2, 3)
# coordinate -> disease group
COORD_GROUP = (1, 0, 1, 0)
GROUP_LABEL = {1: "diseased", 0: "nondiseased"}


class ModelError(ValueError):
    """Spec/data incompatibility."""


class CovarianceError(ValueError):
    """A covariance matrix that is not symmetric positive definite."""


class ModelVariant(str, Enum):
    INDEPENDENT = "independent"
    META_REGRESSION = "meta_regression"
    ANOVA = "anova"
    ANOVA_PLUS = "anova_plus"

    @property
    def is_anova(self) -> bool:
        return self in (ModelVariant.ANOVA, ModelVariant.ANOVA_PLUS)


class CovarianceStructure(str, Enum):
    FULL4 = "full4"
    BLOCK_DIAG22 = "block_diag22"
    REDUCED2 = "reduced2"


class WishartConvention(str, Enum):
    PRECISION = "precision"
    COVARIANCE = "covariance"


@dataclass(frozen=True)
class PriorConfig:
    fixed_effect_var: float = 1000.0
    tau_upper: float = 5.0
    exp_ma_upper: float = 5.0
    sigma_a_upper: float = 20.0
    wishart_scale: float = 1.0
    wishart_df: float | None = None  # None: matrix dimension


@dataclass(frozen=True)
class ModelSpec:
    variant: ModelVariant
    cov: CovarianceStructure = CovarianceStructure.FULL4
    priors: PriorConfig = field(default_factory=PriorConfig)
    hierarchical_scale_variances: bool = False
    wishart_convention: WishartConvention = WishartConvention.PRECISION

    def __post_init__(self):
        object.__setattr__(self, "variant", ModelVariant(self.variant))
        object.__setattr__(self, "cov", CovarianceStructure(self.cov))
        object.__setattr__(self, "wishart_convention", WishartConvention(self.wishart_convention))
        if self.hierarchical_scale_variances and self.variant is not ModelVariant.ANOVA_PLUS:
            raise ModelError("hierarchical_scale_variances applies to anova_plus only")

    @classmethod
    def preset(cls, name: str) -> "ModelSpec":
        """Named configurations used in model comparisons."""
        presets = {
            "V1": cls(ModelVariant.ANOVA_PLUS, CovarianceStructure.REDUCED2),
            "V2": cls(ModelVariant.ANOVA_PLUS, CovarianceStructure.BLOCK_DIAG22),
            "V3": cls(ModelVariant.ANOVA_PLUS, CovarianceStructure.FULL4),
            "MetaRegression": cls(ModelVariant.META_REGRESSION),
            "Independent": cls(ModelVariant.INDEPENDENT),
            "Anova": cls(ModelVariant.ANOVA),
        }
        return presets[name]

    # key=value config round trip
    def to_config(self) -> str:
        cp = configparser.ConfigParser()
        cp["model"] = {
            "variant": self.variant.value,
            "covariance": self.cov.value,
            "hierarchical_scale_variances": str(self.hierarchical_scale_variances).lower(),
            "wishart_convention": self.wishart_convention.value,
        }
        cp["priors"] = {f.name: repr(getattr(self.priors, f.name)) if getattr(self.priors, f.name) is not None else "none"
                        for f in fields(PriorConfig)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_config(cls, text_or_parser, model_section: str = "model", priors_section: str = "priors") -> "ModelSpec":
        if isinstance(text_or_parser, configparser.ConfigParser):
            cp = text_or_parser
        else:
            cp = configparser.ConfigParser()
            cp.read_string(text_or_parser)
        sec = cp[model_section]
        if "preset" in sec:
            base = cls.preset(sec["preset"])
        else:
            base = cls(ModelVariant(sec.get("variant", "meta_regression")))
        kwargs = {}
        if "variant" in sec:
            kwargs["variant"] = ModelVariant(sec["variant"])
        if "covariance" in sec:
            kwargs["cov"] = CovarianceStructure(sec["covariance"])
        if "hierarchical_scale_variances" in sec:
            kwargs["hierarchical_scale_variances"] = sec.getboolean("hierarchical_scale_variances")
        if "wishart_convention" in sec:
            kwargs["wishart_convention"] = WishartConvention(sec["wishart_convention"])
        priors = base.priors
        if cp.has_section(priors_section):
            values = {}
            for f in fields(PriorConfig):
                if f.name in cp[priors_section]:
                    raw = cp[priors_section][f.name].strip()
                    values[f.name] = None if raw.lower() == "none" else float(raw)
            priors = replace(priors, **values)
        return replace(base, priors=priors, **kwargs)


@dataclass
class CovBlock:
    """One random-effects covariance matrix and the vectors it governs."""

    name: str
    level: str  # "unit" or "study"
    coords: tuple
    members: np.ndarray
    group: int  # precision group (unit level) that embeds this block

    @property
    def dim(self) -> int:
        return len(self.coords)


def _chol_to_flat(chol: np.ndarray) -> np.ndarray:
    r, c = np.tril_indices(chol.shape[-1])
    return chol[r, c].copy()


def _flat_to_chol(flat: np.ndarray, p: int) -> np.ndarray:
    r, c = np.tril_indices(p)
    chol = np.zeros((p, p))
    chol[r, c] = flat
    return chol


class ParameterState:
    """One point of the joint parameter space.

    Arrays are always full size; ``model.layout`` selects the entries that are
    parameters for the current (dataset, spec). ``chol`` holds lower Cholesky
    factors of the block covariance matrices.
    """

    def __init__(self, model: "Model"):
        self.model = model
        k, u, i = model.n_tests, model.n_units, model.n_studies
        self.fixed = np.zeros((k, 4))
        self.unit = np.zeros((u, 4))
        self.study = np.zeros((i, 4))
        self.chol = [np.eye(b.dim) for b in model.blocks]
        self.tau = np.ones((k, 4))
        self.hyper_mean = np.zeros(4)
        self.hyper_sd = np.ones(4)

    def copy(self) -> "ParameterState":
        new = ParameterState.__new__(ParameterState)
        new.model = self.model
        new.fixed = self.fixed.copy()
        new.unit = self.unit.copy()
        new.study = self.study.copy()
        new.chol = [c.copy() for c in self.chol]
        new.tau = self.tau.copy()
        new.hyper_mean = self.hyper_mean.copy()
        new.hyper_sd = self.hyper_sd.copy()
        return new

    def covariance(self, block: int | str) -> np.ndarray:
        b = self.model.block_index(block)
        return self.chol[b] @ self.chol[b].T

    def set_covariance(self, block: int | str, matrix) -> None:
        b = self.model.block_index(block)
        matrix = np.asarray(matrix, float)
        if matrix.shape != (self.model.blocks[b].dim,) * 2 or not np.allclose(matrix, matrix.T):
            raise CovarianceError(f"block {self.model.blocks[b].name}: expected a symmetric {self.model.blocks[b].dim}x{self.model.blocks[b].dim} matrix")
        try:
            self.chol[b] = np.linalg.cholesky(matrix)
        except np.linalg.LinAlgError:
            raise CovarianceError(f"block {self.model.blocks[b].name}: matrix is not positive definite") from None

    def flatten(self) -> np.ndarray:
        return self.model.layout.flatten(self)

    def __eq__(self, other):
        return isinstance(other, ParameterState) and np.array_equal(self.flatten(), other.flatten())


class Layout:
    """Fixed map between a :class:`ParameterState` and a flat real vector.

    Values are stored as they appear in the state (standard deviations, and
    covariance matrices as the lower triangle of their Cholesky factor), so the
    round trip is exact. The sampler moves positive quantities on the log scale.
    """

    _ARRAYS = ("fixed", "unit", "study", "tau")

    def __init__(self, model: "Model"):
        self.names: list[str] = []
        self.slices: dict[str, slice] = {}
        self.index: dict[str, np.ndarray] = {}
        pos = 0
        for attr in self._ARRAYS:
            mask = getattr(model, f"{attr}_param")
            idx = np.flatnonzero(mask.ravel())
            self.index[attr] = idx
            self.slices[attr] = slice(pos, pos + len(idx))
            pos += len(idx)
            self.names.extend(model.param_name(attr, int(f)) for f in idx)
        self.chol_slices = []
        for b in model.blocks:
            n = b.dim * (b.dim + 1) // 2
            self.chol_slices.append(slice(pos, pos + n))
            r, c = np.tril_indices(b.dim)
            self.names.extend(f"chol:{b.name}[{ri},{ci}]" for ri, ci in zip(r, c))
            pos += n
        idx = np.flatnonzero(model.hyper_param)
        self.index["hyper"] = idx
        self.slices["hyper_mean"] = slice(pos, pos + len(idx))
        pos += len(idx)
        self.names.extend(model.param_name("hyper_mean", int(f)) for f in idx)
        self.slices["hyper_sd"] = slice(pos, pos + len(idx))
        pos += len(idx)
        self.names.extend(model.param_name("hyper_sd", int(f)) for f in idx)
        self.dim = pos
        self.model = model
        self.position = {n: i for i, n in enumerate(self.names)}

    def flatten(self, state: ParameterState) -> np.ndarray:
        v = np.empty(self.dim)
        for attr in self._ARRAYS:
            vals = getattr(state, attr).ravel()[self.index[attr]]
            v[self.slices[attr]] = vals
        for sl, chol in zip(self.chol_slices, state.chol):
            v[sl] = _chol_to_flat(chol)
        h = self.index["hyper"]
        v[self.slices["hyper_mean"]] = state.hyper_mean[h]
        v[self.slices["hyper_sd"]] = state.hyper_sd[h]
        return v

    def unflatten(self, v: np.ndarray, into: ParameterState | None = None) -> ParameterState:
        v = np.asarray(v, float)
        if v.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}")
        state = into if into is not None else ParameterState(self.model)
        for attr in self._ARRAYS:
            getattr(state, attr).ravel()[self.index[attr]] = v[self.slices[attr]]
        for b, sl in enumerate(self.chol_slices):
            state.chol[b] = _flat_to_chol(v[sl], self.model.blocks[b].dim)
        h = self.index["hyper"]
        state.hyper_mean[h] = v[self.slices["hyper_mean"]]
        state.hyper_sd[h] = v[self.slices["hyper_sd"]]
        return state


class Model:
    """Compiled (dataset, spec) pair: index arrays, covariance blocks and layout."""

    def __init__(self, data: Dataset, spec: ModelSpec, *, check: bool = True):
        self.data = data
        self.spec = spec
        if check:
            report = validate_for_model(data, build_network_graph(data), spec.variant)
            if not report.ok:
                raise ModelError("dataset incompatible with model variant "
                                 f"{spec.variant.value}: " + "; ".join(str(f) for f in report.violations))
        tests = list(data.tests)
        self.tests: list[TestDescriptor] = tests
        self.test_ids = [t.test_id for t in tests]
        self.n_tests = len(tests)
        self.is_cont = np.array([t.is_continuous for t in tests], bool)
        test_pos = {t: k for k, t in enumerate(self.test_ids)}
        self.study_ids = sorted(data.studies)
        study_pos = {s: i for i, s in enumerate(self.study_ids)}
        self.n_studies = len(self.study_ids)

        units: dict[tuple, int] = {}
        for s in data.series:
            units.setdefault((s.study_id, s.test_id), len(units))
        self.units = list(units)
        self.n_units = len(units)
        self.unit_study = np.array([study_pos[s] for s, _ in self.units], dtype=np.intp)
        self.unit_test = np.array([test_pos[t] for _, t in self.units], dtype=np.intp)
        self.unit_cont = self.is_cont[self.unit_test]

        # series ordered by (group, unit) so each group's series are contiguous
        by_key = {(s.study_id, s.test_id, int(s.group)): s for s in data.series}
        self.series: list[ThresholdSeries] = []
        self.group_series: dict[int, np.ndarray] = {}
        for j in (1, 0):
            start = len(self.series)
            self.series.extend(by_key[(st, te, j)] for st, te in self.units)
            self.group_series[j] = np.arange(start, len(self.series))
        self.n_series = len(self.series)
        self.series_unit = np.concatenate([np.arange(self.n_units)] * 2)
        self.series_group = np.repeat([1, 0], self.n_units)
        self.series_test = self.unit_test[self.series_unit]
        self.series_study = self.unit_study[self.series_unit]
        self.series_cont = self.unit_cont[self.series_unit]
        c_star = {t.test_id: t.c_star for t in tests}
        self.tables = {j: CellTable([self.series[i] for i in self.group_series[j]], c_star) for j in (1, 0)}
        self.table = CellTable(self.series, c_star)
        self.saturated_series = self.table.saturated()
        self.saturated_total = float(np.sum(self.saturated_series))
        self._build_structure()
        self.layout = Layout(self)

    # -- structure ---------------------------------------------------------
    def _build_structure(self):
        spec, variant, cov = self.spec, self.spec.variant, self.spec.cov
        k, nu, ni = self.n_tests, self.n_units, self.n_studies
        has_unit_scale = variant.is_anova or cov is not CovarianceStructure.REDUCED2
        self.fixed_param = np.zeros((k, 4), bool)
        self.fixed_param[:, LOC] = True
        self.fixed_param[np.ix_(self.is_cont, SCALE)] = True

        self.unit_param = np.zeros((nu, 4), bool)
        self.unit_param[:, LOC] = True
        if has_unit_scale:
            self.unit_param[np.ix_(self.unit_cont, SCALE)] = True
        self.unit_latent = np.zeros((nu, 4), bool)
        if variant is ModelVariant.META_REGRESSION and cov is CovarianceStructure.FULL4:
            self.unit_latent[np.ix_(~self.unit_cont, SCALE)] = True

        self.study_param = np.zeros((ni, 4), bool)
        self.tau_param = np.zeros((k, 4), bool)
        self.hyper_param = np.zeros(4, bool)
        blocks: list[CovBlock] = []
        all_units = np.arange(nu)
        if variant is ModelVariant.INDEPENDENT:
            self.n_unit_groups = k
            self.unit_group = self.unit_test.copy()
            for t in range(k):
                members = np.flatnonzero(self.unit_test == t)
                name = self.test_ids[t]
                if cov is CovarianceStructure.FULL4 and self.is_cont[t]:
                    blocks.append(CovBlock(f"Sigma[{name}]", "unit", (0, 1, 2, 3), members, t))
                else:
                    blocks.append(CovBlock(f"Sigma_loc[{name}]", "unit", LOC, members, t))
                    if cov is CovarianceStructure.BLOCK_DIAG22 and self.is_cont[t]:
                        blocks.append(CovBlock(f"Sigma_scale[{name}]", "unit", SCALE, members, t))
        elif variant is ModelVariant.META_REGRESSION:
            self.n_unit_groups = 1
            self.unit_group = np.zeros(nu, dtype=np.intp)
            if cov is CovarianceStructure.FULL4:
                blocks.append(CovBlock("Sigma", "unit", (0, 1, 2, 3), all_units, 0))
            else:
                blocks.append(CovBlock("Sigma_loc", "unit", LOC, all_units, 0))
                if cov is CovarianceStructure.BLOCK_DIAG22 and self.unit_cont.any():
                    blocks.append(CovBlock("Sigma_scale", "unit", SCALE, np.flatnonzero(self.unit_cont), 0))
        else:
            self.n_unit_groups = k
            self.unit_group = self.unit_test.copy()
            self.tau_param[:, LOC] = True
            self.tau_param[np.ix_(self.is_cont, SCALE)] = True
            self.study_param[:, LOC] = True
            studies = np.arange(ni)
            if cov is CovarianceStructure.FULL4:
                self.study_param[:, SCALE] = True
                blocks.append(CovBlock("Sigma", "study", (0, 1, 2, 3), studies, 0))
            else:
                blocks.append(CovBlock("Sigma_loc", "study", LOC, studies, 0))
                if cov is CovarianceStructure.BLOCK_DIAG22:
                    self.study_param[:, SCALE] = True
                    blocks.append(CovBlock("Sigma_scale", "study", SCALE, studies, 0))
            if variant is ModelVariant.ANOVA_PLUS:
                self.hyper_param[list(LOC)] = True
                if spec.hierarchical_scale_variances:
                    self.hyper_param[list(SCALE)] = True
        self.blocks = blocks
        self._block_names = {b.name: i for i, b in enumerate(blocks)}
        self.unit_block_mask = self.unit_param | self.unit_latent
        # study-level coordinates that shift the likelihood of at least one unit
        self.study_lik = self.study_param.copy()
        has_cont = np.bincount(self.unit_study, weights=self.unit_cont, minlength=ni) > 0
        self.study_lik[:, SCALE] &= has_cont[:, None]

    def block_index(self, block: int | str) -> int:
        return block if isinstance(block, (int, np.integer)) else self._block_names[block]

    def wishart_df(self, dim: int) -> float:
        df = self.spec.priors.wishart_df
        return float(dim if df is None else df)

    def param_name(self, attr: str, flat: int) -> str:
        kind = ("m", "m", "s", "s")
        if attr == "fixed":
            k, c = divmod(flat, 4)
            return f"{kind[c]}[{self.test_ids[k]},{GROUP_LABEL[COORD_GROUP[c]]}]"
        if attr == "unit":
            n, c = divmod(flat, 4)
            study, test = self.units[n]
            return f"{('eps', 'eps', 'u', 'u')[c]}[{study},{test},{GROUP_LABEL[COORD_GROUP[c]]}]"
        if attr == "study":
            i, c = divmod(flat, 4)
            return f"{('eta', 'eta', 'gamma', 'gamma')[c]}[{self.study_ids[i]},{GROUP_LABEL[COORD_GROUP[c]]}]"
        if attr == "tau":
            k, c = divmod(flat, 4)
            return f"{('tau_m', 'tau_m', 'tau_s', 'tau_s')[c]}[{self.test_ids[k]},{GROUP_LABEL[COORD_GROUP[c]]}]"
        if attr == "hyper_mean":
            return f"{('m_a', 'm_a', 'm_as', 'm_as')[flat]}[{GROUP_LABEL[COORD_GROUP[flat]]}]"
        if attr == "hyper_sd":
            return f"{('sigma_a', 'sigma_a', 'sigma_as', 'sigma_as')[flat]}[{GROUP_LABEL[COORD_GROUP[flat]]}]"
        raise KeyError(attr)

    @property
    def dim(self) -> int:
        return self.layout.dim

    def test_index(self, test_id: str) -> int:
        return self.test_ids.index(test_id)

    # -- states ------------------------------------------------------------
    def new_state(self) -> ParameterState:
        return ParameterState(self)

    def initial_state(self) -> ParameterState:
        """Empirical-logit fixed effects, zero random effects, identity / 0.5 variances."""
        state = ParameterState(self)
        for k, t in enumerate(self.tests):
            for c, j in ((0, 1), (1, 0)):
                x = n = 0.0
                for s in self.series:
                    if s.test_id != t.test_id or s.group != j:
                        continue
                    if s.is_binary:
                        pos = 0
                    else:
                        pos = int(np.argmin([abs(math.log(ci / t.c_star)) for ci in s.thresholds]))
                    x += s.positives[pos]
                    n += s.group_size
                p = (x + 0.5) / (n + 1.0)
                state.fixed[k, c] = float(np.clip(np.log(p / (1 - p)), -4.0, 4.0))
        state.tau[:] = 0.5
        state.hyper_mean[:] = math.log(0.5)
        state.hyper_sd[:] = 1.0
        return state

    # -- per-series parameters -------------------------------------------
    def series_params(self, state: ParameterState) -> tuple[np.ndarray, np.ndarray]:
        """Per-series (mu, log_sigma) in model series order."""
        su, sg, st, ss = self.series_unit, self.series_group, self.series_test, self.series_study
        loc = np.where(sg == 1, 0, 1)
        scl = loc + 2
        mu = state.fixed[st, loc] + state.unit[su, loc] + state.study[ss, loc]
        log_sigma = state.fixed[st, scl] + state.unit[su, scl] + state.study[ss, scl]
        return mu, log_sigma

    def accuracy_params(self, state: ParameterState) -> dict:
        mu, log_sigma = self.series_params(state)
        out = {}
        for n, s in enumerate(self.series):
            t = self.data.test(s.test_id)
            out[(s.study_id, s.test_id, DiseaseGroup(s.group))] = AccuracyParams(
                float(mu[n]), float(log_sigma[n]), t.is_continuous, t.c_star)
        return out

    def series_loglik(self, state: ParameterState) -> np.ndarray:
        mu, log_sigma = self.series_params(state)
        return self.table.series_loglik(mu, log_sigma, self.series_cont)

    def loglik(self, state: ParameterState) -> float:
        return float(np.sum(self.series_loglik(state)))

    def residual_deviance(self, state: ParameterState) -> float:
        return -2.0 * (self.loglik(state) - self.saturated_total)

    # -- covariance bookkeeping -----------------------------------------
    def _check_chol(self, state: ParameterState):
        for b, chol in zip(self.blocks, state.chol):
            d = np.diagonal(chol)
            if chol.shape != (b.dim, b.dim) or not np.all(np.isfinite(chol)) or np.any(d <= 0) \
                    or not np.allclose(chol, np.tril(chol)):
                raise CovarianceError(f"block {b.name}: covariance is not symmetric positive definite")

    def unit_covariance_groups(self, state: ParameterState) -> np.ndarray:
        """Padded 4x4 covariance per unit precision group (identity on unused coordinates)."""
        cov = np.tile(np.eye(4), (self.n_unit_groups, 1, 1))
        if self.spec.variant.is_anova:
            cov[:] = 0.0
            for c in range(4):
                cov[:, c, c] = state.tau[:, c] ** 2
            cov[~self.is_cont, 2, 2] = 1.0
            cov[~self.is_cont, 3, 3] = 1.0
            return cov
        for b, chol in zip(self.blocks, state.chol):
            cov[b.group][np.ix_(b.coords, b.coords)] = chol @ chol.T
        return cov

    def study_covariance(self, state: ParameterState) -> np.ndarray:
        cov = np.eye(4)
        for b, chol in zip(self.blocks, state.chol):
            if b.level == "study":
                cov[np.ix_(b.coords, b.coords)] = chol @ chol.T
        return cov

    # -- densities -------------------------------------------------------
    def random_effects_logdensity(self, state: ParameterState) -> float:
        self._check_chol(state)
        if self.spec.variant.is_anova:
            total = 0.0
            mask = self.study_param[0] if self.n_studies else np.zeros(4, bool)
            cov = self.study_covariance(state)
            coords = np.flatnonzero(mask)
            total += float(np.sum(mvn_logpdf_zero_mean(state.study[:, coords], cov[np.ix_(coords, coords)])))
            sd = state.tau[self.unit_test]
            z = state.unit / sd
            dens = -0.5 * z * z - np.log(sd) - 0.5 * LOG_2PI
            return total + float(np.sum(dens[self.unit_param]))
        covs = self.unit_covariance_groups(state)
        total = 0.0
        patterns = {}
        for n in range(self.n_units):
            patterns.setdefault((int(self.unit_group[n]), tuple(self.unit_param[n])), []).append(n)
        for (g, pattern), members in patterns.items():
            coords = np.flatnonzero(pattern)
            x = state.unit[np.ix_(members, coords)]
            total += float(np.sum(mvn_logpdf_zero_mean(x, covs[g][np.ix_(coords, coords)])))
        return total

    def log_prior(self, state: ParameterState) -> float:
        pr = self.spec.priors
        v = pr.fixed_effect_var
        f = state.fixed[self.fixed_param]
        total = float(np.sum(-0.5 * f * f / v - 0.5 * math.log(2 * math.pi * v)))
        r = pr.wishart_scale
        for b, chol in zip(self.blocks, state.chol):
            cov = chol @ chol.T
            target = np.linalg.inv(cov) if self.spec.wishart_convention is WishartConvention.PRECISION else cov
            total += float(wishart_logpdf(target, self.wishart_df(b.dim), np.eye(b.dim) / r))
        if self.spec.variant.is_anova:
            tau = state.tau
            for c in range(4):
                active = self.tau_param[:, c]
                if not active.any():
                    continue
                t = tau[active, c]
                if np.any(t <= 0):
                    return -math.inf
                if self.hyper_param[c]:
                    mean, sd = state.hyper_mean[c], state.hyper_sd[c]
                    z = (np.log(t) - mean) / sd
                    total += float(np.sum(-0.5 * z * z - np.log(sd) - 0.5 * LOG_2PI - np.log(t)))
                else:
                    if np.any(t >= pr.tau_upper):
                        return -math.inf
                    total += -math.log(pr.tau_upper) * len(t)
            for c in np.flatnonzero(self.hyper_param):
                mean, sd = state.hyper_mean[c], state.hyper_sd[c]
                if mean >= math.log(pr.exp_ma_upper) or not (0 < sd < pr.sigma_a_upper):
                    return -math.inf
                total += mean - math.log(pr.exp_ma_upper) - math.log(pr.sigma_a_upper)
        return total

    def log_posterior(self, state: ParameterState) -> float:
        lp = self.log_prior(state)
        if lp == -math.inf:
            return lp
        return self.loglik(state) + self.random_effects_logdensity(state) + lp

    def components(self, state: ParameterState) -> dict:
        return {"loglik": self.loglik(state), "random_effects": self.random_effects_logdensity(state),
                "prior": self.log_prior(state)}

    # -- gradient of the log-posterior in fixed and random effects -------
    def effects_gradient(self, state: ParameterState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Analytic gradient of ``log_posterior`` in (fixed, unit, study) effect arrays.

        Entries that are not parameters are zero.
        """
        mu, log_sigma = self.series_params(state)
        g_mu, g_ls = _chain_gradient(self.table, mu, log_sigma, self.series_cont)
        loc = np.where(self.series_group == 1, 0, 1)
        scl = loc + 2
        g_fixed = np.zeros_like(state.fixed)
        g_unit = np.zeros_like(state.unit)
        g_study = np.zeros_like(state.study)
        for arr, idx in ((g_fixed, self.series_test), (g_unit, self.series_unit), (g_study, self.series_study)):
            np.add.at(arr, (idx, loc), g_mu)
            np.add.at(arr, (idx, scl), g_ls)
        g_fixed -= state.fixed / self.spec.priors.fixed_effect_var
        if self.spec.variant.is_anova:
            g_unit -= state.unit / state.tau[self.unit_test] ** 2
            cov = self.study_covariance(state)
            coords = np.flatnonzero(self.study_param[0]) if self.n_studies else []
            if len(coords):
                prec = np.linalg.inv(cov[np.ix_(coords, coords)])
                g_study[:, coords] -= state.study[:, coords] @ prec
        else:
            covs = self.unit_covariance_groups(state)
            for n in range(self.n_units):
                coords = np.flatnonzero(self.unit_param[n])
                prec = np.linalg.inv(covs[self.unit_group[n]][np.ix_(coords, coords)])
                g_unit[n, coords] -= prec @ state.unit[n, coords]
        g_fixed[~self.fixed_param] = 0.0
        g_unit[~self.unit_param] = 0.0
        g_study[~self.study_param] = 0.0
        return g_fixed, g_unit, g_study

    # -- simulation helpers ---------------------------------------------
    def draw_random_effects(self, state: ParameterState, rng: np.random.Generator) -> ParameterState:
        """Replace the random effects of ``state`` by a draw from their distribution."""
        out = state.copy()
        out.unit[:] = 0.0
        out.study[:] = 0.0
        if self.spec.variant.is_anova:
            cov = self.study_covariance(state)
            coords = np.flatnonzero(self.study_param[0]) if self.n_studies else []
            if len(coords):
                chol = np.linalg.cholesky(cov[np.ix_(coords, coords)])
                out.study[:, coords] = rng.standard_normal((self.n_studies, len(coords))) @ chol.T
            z = rng.standard_normal((self.n_units, 4)) * state.tau[self.unit_test]
            out.unit[self.unit_param] = z[self.unit_param]
        else:
            covs = self.unit_covariance_groups(state)
            z = rng.standard_normal((self.n_units, 4))
            for n in range(self.n_units):
                mask = self.unit_block_mask[n]
                coords = np.flatnonzero(mask)
                chol = np.linalg.cholesky(covs[self.unit_group[n]][np.ix_(coords, coords)])
                out.unit[n, coords] = chol @ z[n, coords]
        return out


def _chain_gradient(table: CellTable, mu, log_sigma, z):
    """Derivatives of the per-series chain log-likelihood w.r.t. mu and log_sigma."""
    slope = np.where(z, np.exp(-log_sigma), 0.0)
    cs = table.cell_series
    logit = mu[cs] + slope[cs] * table.logc
    x, prev_x, first = table.x, table.prev_x, table.first
    prev_logit = np.where(first, np.inf, logit[table.prev_cell])
    p = expit(logit)
    d_own = np.where(first, x - prev_x * p, 0.0)
    d_prev = np.zeros_like(logit)
    rest = ~first
    a, b = prev_logit[rest], logit[rest]
    xr, nr = x[rest], prev_x[rest] - x[rest]
    inv = 1.0 / np.expm1(a - b)
    d_own[rest] = xr * (1.0 - p[rest]) + nr * (-inv - p[rest])
    d_prev[rest] = -xr * (1.0 - expit(a)) + nr * inv
    d_logit = d_own.copy()
    np.add.at(d_logit, table.prev_cell[rest], d_prev[rest])
    g_mu = np.bincount(cs, weights=d_logit, minlength=table.n_series)
    g_ls = np.bincount(cs, weights=-d_logit * slope[cs] * table.logc, minlength=table.n_series)
    return g_mu, g_ls


# -- module-level operations ---------------------------------------------------

def build_layout(d: Dataset, spec: ModelSpec) -> ParameterState:
    """Zero-initialised state (identity covariances, unit variances) with its layout."""
    return Model(d, spec).new_state()


def log_prior(state: ParameterState, spec: ModelSpec | None = None) -> float:
    _same_spec(state, spec)
    return state.model.log_prior(state)


def random_effects_logdensity(state: ParameterState, spec: ModelSpec | None = None) -> float:
    _same_spec(state, spec)
    return state.model.random_effects_logdensity(state)


def log_posterior(d: Dataset, state: ParameterState, spec: ModelSpec | None = None) -> float:
    _same_spec(state, spec)
    if d is not state.model.data and d != state.model.data:
        raise ModelError("state layout was built for a different dataset")
    model = state.model
    lp = model.log_prior(state)
    if lp == -math.inf:
        return lp
    return dataset_loglik(d, model.accuracy_params(state)) + model.random_effects_logdensity(state) + lp


def _same_spec(state: ParameterState, spec: ModelSpec | None):
    if spec is not None and spec != state.model.spec:
        raise ModelError("state layout was built for a different model spec")

"""Adaptive Metropolis-within-Gibbs for the network models.

One sweep, in this order:

1. fixed effects, one coordinate at a time, vectorised over tests (random walk);
2. study-by-test random effects, one coordinate at a time, vectorised over
   units (random walk; coordinates with no likelihood term are drawn exactly
   from their normal full conditional);
3. study random effects (ANOVA variants), vectorised over studies;
4. shift moves: ``m[k] + d, eps[.,k] - d`` and ``eta[i] + d, eps[i,.] - d``
   leave the likelihood unchanged and ``d`` is drawn from its exact normal
   conditional;
5. covariance matrices: conjugate Wishart draws under the precision
   convention, otherwise a random walk on the log-diagonal Cholesky factor;
6. test-level standard deviations and their hyper-parameters (random walk on
   the log scale), each standard deviation followed by a joint move that
   rescales its random effects.

Proposal scales adapt per element during warm-up only.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..dataset import Dataset
from ..model import COORD_GROUP, Model, ModelSpec, ParameterState, WishartConvention
from ..wishart import chol_logdet, draw_wishart, wishart_logpdf

__all__ = ["SamplerConfig", "SamplingError", "PosteriorSamples", "run_mcmc", "chain_seeds"]

UPDATE_GROUPS = ("fixed", "unit", "study", "shift", "cov", "tau", "hyper")


class SamplingError(RuntimeError):
    """Sampling failed; ``partial`` holds the draws retained before the failure, if any."""

    def __init__(self, message: str, partial: "PosteriorSamples | None" = None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 3
    warmup_iters: int = 10_000
    keep_iters: int = 20_000
    thin: int = 1
    seed: int = 20250101
    target_accept: float = 0.44
    target_accept_block: float = 0.234
    adapt_window: int = 50
    use_likelihood: bool = True
    frozen: tuple = ()
    init_jitter: float = 0.5

    def __post_init__(self):
        if self.chains < 1 or self.warmup_iters < 0 or self.keep_iters < 1 or self.thin < 1 or self.adapt_window < 1:
            raise ValueError("invalid sampler configuration")
        unknown = set(self.frozen) - set(UPDATE_GROUPS)
        if unknown:
            raise ValueError(f"unknown update groups {sorted(unknown)}")
        object.__setattr__(self, "frozen", tuple(sorted(self.frozen)))

    @property
    def n_keep(self) -> int:
        return self.keep_iters // self.thin

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frozen"] = list(self.frozen)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        d = dict(d)
        d["frozen"] = tuple(d.get("frozen", ()))
        return cls(**d)


def chain_seeds(seed: int, chains: int) -> list[np.random.SeedSequence]:
    """One independent stream per chain, derived from (seed, chain index)."""
    return [np.random.SeedSequence([seed & (2**64 - 1), c]) for c in range(chains)]


@dataclass
class PosteriorSamples:
    """Retained draws per chain with the layout they refer to."""

    draws: np.ndarray  # (chains, n, dim)
    deviance: np.ndarray  # (chains, n)
    names: list
    spec: ModelSpec
    config: SamplerConfig
    data_fingerprint: str
    accept_rates: dict = field(default_factory=dict)
    final: list = field(default_factory=list)
    model: Model | None = field(default=None, repr=False, compare=False)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    def column(self, name: str) -> np.ndarray:
        """Draws of one named parameter, shape (chains, n)."""
        return self.draws[:, :, self.names.index(name)]

    def flat(self) -> np.ndarray:
        """All chains pooled, shape (chains * n, dim)."""
        return self.draws.reshape(-1, self.draws.shape[-1])

    def states(self, model: Model | None = None):
        """Iterate pooled draws as ParameterState objects."""
        model = model or self.model
        state = model.new_state()
        for v in self.flat():
            yield model.layout.unflatten(v, into=state)

    def effect_draws(self, model: Model | None = None) -> dict:
        """Pooled draws of the fixed effects ``(n, K, 4)`` and block covariances."""
        model = model or self.model
        flat = self.flat()
        lay = model.layout
        fixed = np.zeros((flat.shape[0], model.n_tests * 4))
        fixed[:, lay.index["fixed"]] = flat[:, lay.slices["fixed"]]
        covs = []
        for b, sl in zip(model.blocks, lay.chol_slices):
            r, c = np.tril_indices(b.dim)
            chol = np.zeros((flat.shape[0], b.dim, b.dim))
            chol[:, r, c] = flat[:, sl]
            covs.append(chol @ np.swapaxes(chol, -1, -2))
        tau = np.ones((flat.shape[0], model.n_tests * 4))
        tau[:, lay.index["tau"]] = flat[:, lay.slices["tau"]]
        return {"fixed": fixed.reshape(-1, model.n_tests, 4), "cov": covs,
                "tau": tau.reshape(-1, model.n_tests, 4)}


class _Chain:
    def __init__(self, model: Model, cfg: SamplerConfig, rng: np.random.Generator, state: ParameterState):
        self.m = model
        self.cfg = cfg
        self.rng = rng
        self.st = state
        self.use_lik = cfg.use_likelihood
        self.frozen = set(cfg.frozen)
        m = model
        self.prec_var = 1.0 / m.spec.priors.fixed_effect_var
        self.series_cont = {j: m.series_cont[m.group_series[j]] for j in (1, 0)}
        self.series_test = {j: m.series_test[m.group_series[j]] for j in (1, 0)}
        self.series_study = {j: m.series_study[m.group_series[j]] for j in (1, 0)}
        self.scales = {
            "fixed": np.full((m.n_tests, 4), 0.1),
            "unit": np.full((m.n_units, 4), 0.3),
            "study": np.full((m.n_studies, 4), 0.2),
            "tau": np.full((m.n_tests, 4), 0.3),
            "tau_scale": np.full((m.n_tests, 4), 0.3),
            "hyper_mean": np.full(4, 0.3),
            "hyper_sd": np.full(4, 0.3),
            "chol": np.full(len(m.blocks), 0.05),
        }
        self._reset_counts()
        self.total_acc = {k: 0.0 for k in self.scales}
        self.total_prop = {k: 0.0 for k in self.scales}
        self.batch = 0
        self.refresh()

    # -- bookkeeping ---------------------------------------------------
    def _reset_counts(self):
        self.acc = {k: np.zeros_like(v) for k, v in self.scales.items()}
        self.prop = {k: np.zeros_like(v) for k, v in self.scales.items()}

    def refresh(self):
        """Recompute cached per-series parameters, log-likelihoods and precisions from the state."""
        m, st = self.m, self.st
        mu, ls = m.series_params(st)
        self.mu = {j: mu[m.group_series[j]] for j in (1, 0)}
        self.ls = {j: ls[m.group_series[j]] for j in (1, 0)}
        self.sll = {j: self._lik(j, self.mu[j], self.ls[j]) for j in (1, 0)}
        self._refresh_precision()

    def _refresh_precision(self):
        m, st = self.m, self.st
        self.p_group = np.linalg.inv(m.unit_covariance_groups(st))
        if m.spec.variant.is_anova:
            self.q_study = np.linalg.inv(m.study_covariance(st))

    def _lik(self, j, mu, ls):
        if not self.use_lik:
            return np.zeros(len(mu))
        return self.m.tables[j].series_loglik(mu, ls, self.series_cont[j])

    def _accept(self, key, active_idx, log_ratio):
        """Metropolis decision for proposals at ``active_idx`` (flat indices into scales[key])."""
        u = self.rng.random(len(log_ratio))
        ok = np.log(u) < log_ratio
        self.acc[key].ravel()[active_idx] += ok
        self.prop[key].ravel()[active_idx] += 1
        return ok

    # -- updates -----------------------------------------------------------
    def update_fixed(self):
        m, st = self.m, self.st
        for c in range(4):
            tests = np.flatnonzero(m.fixed_param[:, c])
            if len(tests) == 0:
                continue
            j = COORD_GROUP[c]
            step = np.zeros(m.n_tests)
            step[tests] = self.scales["fixed"][tests, c] * self.rng.standard_normal(len(tests))
            old = st.fixed[tests, c]
            new = old + step[tests]
            if self.use_lik:
                mu, ls = self.mu[j], self.ls[j]
                if c < 2:
                    mu = mu + step[self.series_test[j]]
                else:
                    ls = ls + step[self.series_test[j]]
                sll = self._lik(j, mu, ls)
                d_lik = np.bincount(self.series_test[j], weights=sll - self.sll[j], minlength=m.n_tests)[tests]
            else:
                d_lik = 0.0
            ratio = d_lik - 0.5 * self.prec_var * (new * new - old * old)
            ok = self._accept("fixed", tests * 4 + c, ratio)
            st.fixed[tests[ok], c] = new[ok]
            if self.use_lik:
                keep = np.zeros(m.n_tests, bool)
                keep[tests[ok]] = True
                moved = keep[self.series_test[j]]
                if c < 2:
                    self.mu[j] = np.where(moved, mu, self.mu[j])
                else:
                    self.ls[j] = np.where(moved, ls, self.ls[j])
                self.sll[j] = np.where(moved, sll, self.sll[j])

    def update_units(self):
        m, st = self.m, self.st
        for c in range(4):
            active = np.flatnonzero(m.unit_param[:, c])
            latent = np.flatnonzero(m.unit_latent[:, c])
            if len(active) == 0 and len(latent) == 0:
                continue
            j = COORD_GROUP[c]
            prec = self.p_group[m.unit_group]
            paa = prec[:, c, c]
            lin = np.einsum("nb,nb->n", prec[:, c, :], st.unit) - paa * st.unit[:, c]
            if len(active):
                step = np.zeros(m.n_units)
                step[active] = self.scales["unit"][active, c] * self.rng.standard_normal(len(active))
                old = st.unit[active, c]
                new = old + step[active]
                d_prior = -0.5 * paa[active] * (new * new - old * old) - lin[active] * (new - old)
                if self.use_lik:
                    # series of group j are ordered by unit
                    mu, ls = (self.mu[j] + step, self.ls[j]) if c < 2 else (self.mu[j], self.ls[j] + step)
                    sll = self._lik(j, mu, ls)
                    d_lik = (sll - self.sll[j])[active]
                else:
                    d_lik = 0.0
                ok = self._accept("unit", active * 4 + c, d_lik + d_prior)
                acc_units = active[ok]
                st.unit[acc_units, c] = new[ok]
                if self.use_lik:
                    if c < 2:
                        self.mu[j][acc_units] = mu[acc_units]
                    else:
                        self.ls[j][acc_units] = ls[acc_units]
                    self.sll[j][acc_units] = sll[acc_units]
            if len(latent):
                z = self.rng.standard_normal(len(latent))
                st.unit[latent, c] = -lin[latent] / paa[latent] + z / np.sqrt(paa[latent])

    def update_studies(self):
        m, st = self.m, self.st
        if not m.spec.variant.is_anova:
            return
        q = self.q_study
        for c in range(4):
            active = np.flatnonzero(m.study_param[:, c])
            if len(active) == 0:
                continue
            j = COORD_GROUP[c]
            qaa = q[c, c]
            lin = st.study @ q[c] - qaa * st.study[:, c]
            step = np.zeros(m.n_studies)
            step[active] = self.scales["study"][active, c] * self.rng.standard_normal(len(active))
            old = st.study[active, c]
            new = old + step[active]
            d_prior = -0.5 * qaa * (new * new - old * old) - lin[active] * (new - old)
            if self.use_lik:
                sstudy = self.series_study[j]
                mu, ls = (self.mu[j] + step[sstudy], self.ls[j]) if c < 2 else (self.mu[j], self.ls[j] + step[sstudy])
                sll = self._lik(j, mu, ls)
                d_lik = np.bincount(sstudy, weights=sll - self.sll[j], minlength=m.n_studies)[active]
            else:
                d_lik = 0.0
            ok = self._accept("study", active * 4 + c, d_lik + d_prior)
            st.study[active[ok], c] = new[ok]
            if self.use_lik:
                keep = np.zeros(m.n_studies, bool)
                keep[active[ok]] = True
                moved = keep[self.series_study[j]]
                if c < 2:
                    self.mu[j] = np.where(moved, mu, self.mu[j])
                else:
                    self.ls[j] = np.where(moved, ls, self.ls[j])
                self.sll[j] = np.where(moved, sll, self.sll[j])

    def update_shifts(self):
        m, st = self.m, self.st
        prec = self.p_group[m.unit_group]
        for c in range(4):
            has_unit = np.bincount(m.unit_test, weights=m.unit_param[:, c], minlength=m.n_tests) > 0
            tests = np.flatnonzero(m.fixed_param[:, c] & has_unit)
            if len(tests) == 0:
                continue
            units = m.unit_param[:, c]
            pr = np.einsum("nb,nb->n", prec[:, c, :], st.unit)
            a = np.bincount(m.unit_test, weights=np.where(units, prec[:, c, c], 0.0), minlength=m.n_tests)
            b = np.bincount(m.unit_test, weights=np.where(units, pr, 0.0), minlength=m.n_tests)
            a = a[tests] + self.prec_var
            b = b[tests] - st.fixed[tests, c] * self.prec_var
            delta = np.zeros(m.n_tests)
            delta[tests] = b / a + self.rng.standard_normal(len(tests)) / np.sqrt(a)
            st.fixed[tests, c] += delta[tests]
            st.unit[units, c] -= delta[m.unit_test[units]]
        if not m.spec.variant.is_anova:
            return
        q = self.q_study
        for c in range(4):
            studies = np.flatnonzero(m.study_param[:, c])
            if len(studies) == 0:
                continue
            units = m.unit_param[:, c]
            pr = np.einsum("nb,nb->n", prec[:, c, :], st.unit)
            a = np.bincount(m.unit_study, weights=np.where(units, prec[:, c, c], 0.0), minlength=m.n_studies)
            b = np.bincount(m.unit_study, weights=np.where(units, pr, 0.0), minlength=m.n_studies)
            a = a[studies] + q[c, c]
            b = b[studies] - (st.study @ q[c])[studies]
            delta = np.zeros(m.n_studies)
            delta[studies] = b / a + self.rng.standard_normal(len(studies)) / np.sqrt(a)
            st.study[studies, c] += delta[studies]
            st.unit[units, c] -= delta[m.unit_study[units]]

    def _block_data(self, b):
        src = self.st.unit if b.level == "unit" else self.st.study
        return src[np.ix_(b.members, b.coords)]

    def update_covariances(self):
        m, st = self.m, self.st
        if not m.blocks:
            return
        r = m.spec.priors.wishart_scale
        if m.spec.wishart_convention is WishartConvention.PRECISION:
            for dim in (2, 4):
                idx = [i for i, b in enumerate(m.blocks) if b.dim == dim]
                if not idx:
                    continue
                df, scales = [], []
                for i in idx:
                    x = self._block_data(m.blocks[i])
                    df.append(m.wishart_df(dim) + x.shape[0])
                    scales.append(np.linalg.inv(r * np.eye(dim) + x.T @ x))
                omega = draw_wishart(self.rng, np.array(df), np.array(scales))
                chols = np.linalg.cholesky(np.linalg.inv(omega))
                for n, i in enumerate(idx):
                    st.chol[i] = chols[n]
        else:
            for i, b in enumerate(m.blocks):
                x = self._block_data(b)
                rows, cols = np.tril_indices(b.dim)
                cur = st.chol[i]
                flat = cur[rows, cols].copy()
                diag = rows == cols
                flat[diag] = np.log(flat[diag])
                prop = flat + self.scales["chol"][i] * self.rng.standard_normal(len(flat))
                new = np.zeros_like(cur)
                vals = prop.copy()
                vals[diag] = np.exp(vals[diag])
                new[rows, cols] = vals
                ratio = self._chol_target(x, new, b.dim) - self._chol_target(x, cur, b.dim)
                if self._accept("chol", np.array([i]), np.array([ratio]))[0]:
                    st.chol[i] = new
        self._refresh_precision()

    def _chol_target(self, x, chol, dim):
        cov = chol @ chol.T
        w = np.linalg.solve(chol, x.T)
        loglik = -0.5 * np.sum(w * w) - 0.5 * x.shape[0] * chol_logdet(chol)
        prior = wishart_logpdf(cov, self.m.wishart_df(dim), np.eye(dim) / self.m.spec.priors.wishart_scale)
        d = np.log(np.diagonal(chol))
        # d Sigma / d L and d L_ii / d log L_ii
        log_jac = dim * math.log(2.0) + np.sum((dim - np.arange(dim) + 1) * d)
        return float(loglik + prior + log_jac)

    def update_taus(self):
        m, st = self.m, self.st
        if not m.spec.variant.is_anova:
            return
        upper = math.log(m.spec.priors.tau_upper)
        for c in range(4):
            tests = np.flatnonzero(m.tau_param[:, c])
            if len(tests) == 0:
                continue
            units = m.unit_param[:, c]
            n = np.bincount(m.unit_test, weights=units, minlength=m.n_tests)[tests]
            ss = np.bincount(m.unit_test, weights=np.where(units, st.unit[:, c] ** 2, 0.0), minlength=m.n_tests)[tests]
            old = np.log(st.tau[tests, c])
            new = old + self.scales["tau"][tests, c] * self.rng.standard_normal(len(tests))
            if m.hyper_param[c]:
                mean, sd = st.hyper_mean[c], st.hyper_sd[c]
                prior = lambda l: -0.5 * ((l - mean) / sd) ** 2
            else:
                prior = lambda l: np.where(l < upper, l, -np.inf)
            target = lambda l: -n * l - 0.5 * ss * np.exp(-2.0 * l) + prior(l)
            ok = self._accept("tau", tests * 4 + c, target(new) - target(old))
            st.tau[tests[ok], c] = np.exp(new[ok])
            self._rescale_tau(c, tests, prior)
        self._refresh_precision()

    def _rescale_tau(self, c, tests, prior):
        """Move tau together with its random effects, ``eps -> eps * tau' / tau``.

        The normal density of the standardised effects is unchanged and cancels
        the Jacobian, leaving the prior on tau and the likelihood. This breaks
        the funnel between tau and the effects when the data are weak.
        """
        m, st = self.m, self.st
        old = np.log(st.tau[tests, c])
        new = old + self.scales["tau_scale"][tests, c] * self.rng.standard_normal(len(tests))
        factor = np.ones(m.n_tests)
        factor[tests] = np.exp(new - old)
        units = m.unit_param[:, c]
        step = np.where(units, st.unit[:, c] * (factor[m.unit_test] - 1.0), 0.0)
        ratio = prior(new) - prior(old)
        j = COORD_GROUP[c]
        if self.use_lik:
            mu, ls = (self.mu[j] + step, self.ls[j]) if c < 2 else (self.mu[j], self.ls[j] + step)
            sll = self._lik(j, mu, ls)
            ratio = ratio + np.bincount(m.unit_test, weights=np.where(units, sll - self.sll[j], 0.0),
                                        minlength=m.n_tests)[tests]
        ok = self._accept("tau_scale", tests * 4 + c, ratio)
        moved = np.zeros(m.n_tests, bool)
        moved[tests[ok]] = True
        st.tau[tests[ok], c] = np.exp(new[ok])
        hit = units & moved[m.unit_test]
        st.unit[hit, c] += step[hit]
        if self.use_lik:
            if c < 2:
                self.mu[j][hit] = mu[hit]
            else:
                self.ls[j][hit] = ls[hit]
            self.sll[j][hit] = sll[hit]

    def update_hyper(self):
        m, st = self.m, self.st
        pr = m.spec.priors
        for c in np.flatnonzero(m.hyper_param):
            lt = np.log(st.tau[m.tau_param[:, c], c])

            def target(mean, log_sd):
                sd = math.exp(log_sd)
                if mean >= math.log(pr.exp_ma_upper) or sd >= pr.sigma_a_upper:
                    return -math.inf
                return float(np.sum(-0.5 * ((lt - mean) / sd) ** 2) - len(lt) * log_sd + mean + log_sd)

            mean, log_sd = st.hyper_mean[c], math.log(st.hyper_sd[c])
            cur = target(mean, log_sd)
            prop = mean + self.scales["hyper_mean"][c] * self.rng.standard_normal()
            new = target(prop, log_sd)
            if self._accept("hyper_mean", np.array([c]), np.array([new - cur]))[0]:
                mean, cur = prop, new
            prop = log_sd + self.scales["hyper_sd"][c] * self.rng.standard_normal()
            new = target(mean, prop)
            if self._accept("hyper_sd", np.array([c]), np.array([new - cur]))[0]:
                log_sd = prop
            st.hyper_mean[c] = mean
            st.hyper_sd[c] = math.exp(log_sd)

    def sweep(self):
        f = self.frozen
        if "fixed" not in f:
            self.update_fixed()
        if "unit" not in f:
            self.update_units()
        if "study" not in f:
            self.update_studies()
        if not f & {"shift", "fixed", "unit"}:
            self.update_shifts()
        if "cov" not in f:
            self.update_covariances()
        if "tau" not in f:
            self.update_taus()
        if "hyper" not in f:
            self.update_hyper()
        self.refresh()

    def adapt(self):
        self.batch += 1
        gain = min(1.0, 2.0 / math.sqrt(self.batch))
        for key, scale in self.scales.items():
            prop = self.prop[key]
            seen = prop > 0
            if not seen.any():
                continue
            target = self.cfg.target_accept_block if key == "chol" else self.cfg.target_accept
            rate = np.where(seen, self.acc[key] / np.maximum(prop, 1), target)
            scale *= np.exp(gain * (rate - target))
        self._reset_counts()

    def collect_counts(self):
        for key in self.scales:
            self.total_acc[key] += float(self.acc[key].sum())
            self.total_prop[key] += float(self.prop[key].sum())
        self._reset_counts()

    def deviance(self) -> float:
        """Residual deviance of the current state; NaN when sampling the prior."""
        if not self.use_lik:
            return math.nan
        ll = sum(float(np.sum(self.sll[j])) for j in (1, 0))
        return -2.0 * (ll - self.m.saturated_total)

    # -- persistence -------------------------------------------------------
    def snapshot(self, post_iters: int) -> dict:
        st = self.st
        return {
            "fixed": st.fixed.tolist(), "unit": st.unit.tolist(), "study": st.study.tolist(),
            "chol": [c.tolist() for c in st.chol], "tau": st.tau.tolist(),
            "hyper_mean": st.hyper_mean.tolist(), "hyper_sd": st.hyper_sd.tolist(),
            "scales": {k: np.asarray(v).tolist() for k, v in self.scales.items()},
            "batch": self.batch,
            "rng": self.rng.bit_generator.state,
            "post_iters": post_iters,
            "accepted": self.total_acc, "proposed": self.total_prop,
        }

    @classmethod
    def restore(cls, model: Model, cfg: SamplerConfig, snap: dict) -> tuple["_Chain", int]:
        st = model.new_state()
        st.fixed[:] = snap["fixed"]
        if model.n_units:
            st.unit[:] = snap["unit"]
        if model.n_studies:
            st.study[:] = snap["study"]
        st.chol = [np.array(c, float) for c in snap["chol"]]
        st.tau[:] = snap["tau"]
        st.hyper_mean[:] = snap["hyper_mean"]
        st.hyper_sd[:] = snap["hyper_sd"]
        bitgen = np.random.PCG64()
        bitgen.state = snap["rng"]
        chain = cls(model, cfg, np.random.Generator(bitgen), st)
        for k, v in snap["scales"].items():
            chain.scales[k] = np.array(v, float).reshape(chain.scales[k].shape)
        chain.batch = snap["batch"]
        chain.total_acc = dict(snap["accepted"])
        chain.total_prop = dict(snap["proposed"])
        return chain, snap["post_iters"]


def _initial_chain(model: Model, cfg: SamplerConfig, seq: np.random.SeedSequence) -> _Chain:
    rng = np.random.Generator(np.random.PCG64(seq))
    base = model.initial_state()
    last = None
    for _ in range(100):
        st = base.copy()
        jitter = cfg.init_jitter * rng.standard_normal(st.fixed.shape)
        st.fixed[model.fixed_param] += jitter[model.fixed_param]
        parts = model.components(st)
        if all(math.isfinite(v) for v in parts.values()):
            return _Chain(model, cfg, rng, st)
        last = parts
    bad = ", ".join(k for k, v in last.items() if not math.isfinite(v))
    raise SamplingError(f"non-finite log-posterior at initialisation after 100 draws: {bad}")


def _run_chain(args):
    model, cfg, seq, snap = args
    if snap is None:
        chain = _initial_chain(model, cfg, seq)
        post = 0
        for it in range(cfg.warmup_iters):
            chain.sweep()
            if (it + 1) % cfg.adapt_window == 0:
                chain.adapt()
        chain._reset_counts()
    else:
        chain, post = _Chain.restore(model, cfg, snap)
    draws = np.empty((cfg.n_keep, model.dim))
    dev = np.empty(cfg.n_keep)
    kept = 0
    error = None
    try:
        for _ in range(cfg.keep_iters):
            chain.sweep()
            post += 1
            if post % cfg.thin == 0 and kept < cfg.n_keep:
                draws[kept] = model.layout.flatten(chain.st)
                dev[kept] = chain.deviance()
                if chain.use_lik and not math.isfinite(dev[kept]):
                    raise SamplingError(f"non-finite deviance at post-warm-up iteration {post}")
                kept += 1
    except (SamplingError, FloatingPointError, np.linalg.LinAlgError) as exc:
        error = f"{type(exc).__name__}: {exc}"
    chain.collect_counts()
    return draws[:kept], dev[:kept], chain.snapshot(post), error


def run_mcmc(d: Dataset, spec: ModelSpec, cfg: SamplerConfig, *, threads: int = 1,
             resume: PosteriorSamples | None = None, model: Model | None = None) -> PosteriorSamples:
    """Fit ``spec`` to ``d``; with ``resume``, extend each chain by ``cfg.keep_iters`` iterations."""
    model = model or Model(d, spec)
    if resume is not None:
        if resume.spec != spec or resume.data_fingerprint != d.fingerprint():
            raise SamplingError("resume container was produced for a different spec or dataset")
        cfg = replace(cfg, chains=resume.n_chains, thin=resume.config.thin)
        snaps = resume.final
    else:
        snaps = [None] * cfg.chains
    jobs = [(model, cfg, seq, snap) for seq, snap in zip(chain_seeds(cfg.seed, cfg.chains), snaps)]
    if threads > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=min(threads, cfg.chains)) as pool:
            results = list(pool.map(_run_chain, jobs))
    else:
        results = [_run_chain(job) for job in jobs]
    kept = min(len(r[1]) for r in results)
    draws = np.stack([r[0][:kept] for r in results])
    dev = np.stack([r[1][:kept] for r in results])
    finals = [r[2] for r in results]
    errors = [f"chain {c}: {r[3]}" for c, r in enumerate(results) if r[3]]
    if resume is not None:
        draws = np.concatenate([resume.draws, draws], axis=1)
        dev = np.concatenate([resume.deviance, dev], axis=1)
        cfg = replace(cfg, keep_iters=resume.config.keep_iters + cfg.keep_iters,
                      warmup_iters=resume.config.warmup_iters, seed=resume.config.seed)
    rates = {}
    for key in finals[0]["accepted"]:
        prop = sum(f["proposed"][key] for f in finals)
        if prop:
            rates[key] = sum(f["accepted"][key] for f in finals) / prop
    out = PosteriorSamples(draws, dev, list(model.layout.names), spec, cfg, d.fingerprint(),
                           rates, finals, model)
    if errors:
        raise SamplingError("; ".join(errors), partial=out)
    return out

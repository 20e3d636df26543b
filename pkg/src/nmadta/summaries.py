"""Posterior summaries: pooled accuracy, threshold curves, sROC curves and rankings.

Pooled estimates are evaluated at the fixed-effects level, per draw::

    sens = expit(m[k,1] + log(C*/C) / exp(s[k,1]))
    fpf  = expit(m[k,0] + log(C*/C) / exp(s[k,0]))

With ``predictive=True`` a fresh set of random effects is drawn for every
posterior draw and added before the transform.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import chi2, rankdata

from .model import Model

__all__ = [
    "AccuracySummary",
    "ThresholdCurve",
    "Ellipse",
    "SrocCurve",
    "PairwiseDifference",
    "RankingReport",
    "pooled_accuracy",
    "threshold_curve",
    "sroc_curve",
    "rankings",
    "summary_rows",
    "write_summary_table",
    "summary_report",
    "ExtrapolationWarning",
]

QUANTILES = (0.025, 0.5, 0.975)


class ExtrapolationWarning(UserWarning):
    pass


def _interval(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """(lower, median, upper) rows along ``axis``."""
    return np.quantile(x, QUANTILES, axis=axis)


def _triple(q) -> tuple[float, float, float]:
    lo, med, hi = (float(v) for v in q)
    return med, lo, hi


@dataclass(frozen=True)
class AccuracySummary:
    """Posterior (median, lower95, upper95) of sensitivity and FPF at one threshold."""

    test_id: str
    threshold: float | None
    sensitivity: tuple
    fpf: tuple
    extrapolated: bool = False

    @property
    def specificity(self) -> tuple:
        med, lo, hi = self.fpf
        return 1.0 - med, 1.0 - hi, 1.0 - lo


@dataclass(frozen=True)
class ThresholdCurve:
    test_id: str
    grid: np.ndarray
    points: list

    def column(self, measure: str, which: int = 0) -> np.ndarray:
        return np.array([getattr(p, measure)[which] for p in self.points])


@dataclass(frozen=True)
class Ellipse:
    """95% credible ellipse on the (logit FPF, logit sensitivity) scale."""

    center: tuple
    axes: tuple
    rotation: float
    points: np.ndarray  # (n, 2) in ROC space: (fpf, sensitivity)


@dataclass(frozen=True)
class SrocCurve:
    test_id: str
    fpf: np.ndarray
    sens_median: np.ndarray
    sens_lower: np.ndarray
    sens_upper: np.ndarray
    ellipse: Ellipse
    curve_available: bool = True
    traces: tuple | None = field(default=None, repr=False)


@dataclass(frozen=True)
class PairwiseDifference:
    test_a: str
    test_b: str
    d_sens: tuple
    d_spec: tuple
    d_log_dor: tuple


@dataclass(frozen=True)
class RankingReport:
    tests: list
    thresholds: list
    rank_probs: np.ndarray  # (K, K): test x rank
    median_rank: np.ndarray
    youden: list
    pairwise: list

    def to_rows(self) -> list[list]:
        rows = [["test_id", "threshold", "median_rank", "youden_median", "youden_lower95", "youden_upper95"]
                + [f"p_rank_{r + 1}" for r in range(len(self.tests))]]
        for k, t in enumerate(self.tests):
            rows.append([t, _fmt_threshold(self.thresholds[k]), _fmt(self.median_rank[k]),
                         *(_fmt(v) for v in self.youden[k])] + [_fmt(p) for p in self.rank_probs[k]])
        return rows


# -- draw-level transforms ------------------------------------------------
def _model(samples, model: Model | None) -> Model:
    model = model or getattr(samples, "model", None)
    if model is None:
        raise ValueError("posterior samples carry no model; pass model=")
    return model


def _fixed(samples, model: Model) -> np.ndarray:
    """Fixed effects per pooled draw, shape (n, K, 4)."""
    flat = samples.flat()
    lay = model.layout
    out = np.zeros((flat.shape[0], model.n_tests * 4))
    out[:, lay.index["fixed"]] = flat[:, lay.slices["fixed"]]
    return out.reshape(-1, model.n_tests, 4)


def _predictive_effects(samples, model: Model, k: int, seed: int) -> np.ndarray:
    """One draw of the random-effects 4-vector of a new study for test ``k``, per posterior draw."""
    eff = samples.effect_draws(model)
    n = eff["fixed"].shape[0]
    rng = np.random.default_rng(seed)
    out = np.zeros((n, 4))
    units = np.flatnonzero(model.unit_test == k)
    group = model.unit_group[units[0]] if len(units) else None
    for b, cov in zip(model.blocks, eff["cov"]):
        if b.level == "unit" and b.group != group:
            continue
        chol = np.linalg.cholesky(cov)
        z = rng.standard_normal((n, b.dim))
        out[:, list(b.coords)] += np.einsum("nij,nj->ni", chol, z)
    if model.spec.variant.is_anova:
        active = model.tau_param[k]
        z = rng.standard_normal((n, 4))
        out[:, active] += z[:, active] * eff["tau"][:, k, active]
    return out


def _logits(fixed_k: np.ndarray, c_star, thresholds) -> tuple[np.ndarray, np.ndarray]:
    """Per-draw logits (n, G) of sensitivity and FPF for one test."""
    if c_star is None:
        shape = (fixed_k.shape[0], len(thresholds))
        return np.broadcast_to(fixed_k[:, :1], shape), np.broadcast_to(fixed_k[:, 1:2], shape)
    lc = np.log(c_star / np.asarray(thresholds, float))[None, :]
    sens = fixed_k[:, 0:1] + lc / np.exp(fixed_k[:, 2:3])
    fpf = fixed_k[:, 1:2] + lc / np.exp(fixed_k[:, 3:4])
    return sens, fpf


def _test_draws(samples, model, test_id, predictive, seed) -> tuple[int, np.ndarray]:
    k = model.test_index(test_id)
    fk = _fixed(samples, model)[:, k, :]
    if predictive:
        fk = fk + _predictive_effects(samples, model, k, seed)
    return k, fk


def _summaries(test_id, thresholds, sens, fpf, extrapolated) -> list[AccuracySummary]:
    qs, qf = _interval(expit(sens)), _interval(expit(fpf))
    return [AccuracySummary(test_id, t, _triple(qs[:, g]), _triple(qf[:, g]), bool(extrapolated[g]))
            for g, t in enumerate(thresholds)]


def _observed_range(model: Model, test_id: str) -> tuple[float, float]:
    return model.data.threshold_range(test_id)


def pooled_accuracy(samples, test_id: str, threshold: float | None = None, *, model: Model | None = None,
                    predictive: bool = False, seed: int = 0) -> AccuracySummary:
    """Posterior median and 95% interval of sensitivity and FPF at ``threshold`` (default C*)."""
    model = _model(samples, model)
    test = model.data.test(test_id)
    if not test.is_continuous:
        if threshold is not None:
            raise ValueError(f"binary test {test_id} takes no threshold")
        extrapolated = [False]
    else:
        threshold = test.c_star if threshold is None else float(threshold)
        if not threshold > 0:
            raise ValueError("threshold must be positive")
        lo, hi = _observed_range(model, test_id)
        extrapolated = [not lo <= threshold <= hi]
        if extrapolated[0]:
            warnings.warn(f"{test_id}: threshold {threshold:g} outside observed range [{lo:g}, {hi:g}]",
                          ExtrapolationWarning, stacklevel=2)
    _, fk = _test_draws(samples, model, test_id, predictive, seed)
    sens, fpf = _logits(fk, test.c_star, [threshold])
    return _summaries(test_id, [threshold], sens, fpf, extrapolated)[0]


def _grid(model: Model, test_id: str, grid_size: int) -> np.ndarray:
    test = model.data.test(test_id)
    lo, hi = _observed_range(model, test_id)
    grid = np.geomspace(lo, hi, grid_size) if hi > lo else np.array([lo])
    if lo <= test.c_star <= hi and test.c_star not in grid:
        grid = np.sort(np.append(grid, test.c_star))
    return grid


def threshold_curve(samples, test_id: str, grid_size: int = 100, *, model: Model | None = None,
                    predictive: bool = False, seed: int = 0) -> ThresholdCurve:
    """Pooled accuracy on a log-spaced grid over the observed thresholds; C* is always a grid point."""
    model = _model(samples, model)
    test = model.data.test(test_id)
    if not test.is_continuous:
        raise ValueError(f"{test_id} is binary; threshold curves need a continuous test")
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    grid = _grid(model, test_id, grid_size)
    _, fk = _test_draws(samples, model, test_id, predictive, seed)
    sens, fpf = _logits(fk, test.c_star, grid)
    return ThresholdCurve(test_id, grid, _summaries(test_id, list(grid), sens, fpf, [False] * len(grid)))


def _ellipse(m0: np.ndarray, m1: np.ndarray, n_points: int = 100) -> Ellipse:
    xy = np.column_stack([m0, m1])
    center = xy.mean(axis=0)
    cov = np.cov(xy, rowvar=False) if len(xy) > 1 else np.zeros((2, 2))
    vals, vecs = np.linalg.eigh(cov)
    radius = math.sqrt(chi2.ppf(0.95, 2))
    vals = np.maximum(vals, 0.0)
    axes = radius * np.sqrt(vals[::-1])
    major = vecs[:, 1]
    rotation = float(math.atan2(major[1], major[0]) % math.pi)
    t = np.linspace(0.0, 2 * math.pi, n_points)
    local = np.column_stack([axes[0] * np.cos(t), axes[1] * np.sin(t)])
    rot = np.array([[math.cos(rotation), -math.sin(rotation)], [math.sin(rotation), math.cos(rotation)]])
    pts = expit(center + local @ rot.T)
    return Ellipse((float(center[0]), float(center[1])), (float(axes[0]), float(axes[1])), rotation, pts)


def _location_cov(samples, model: Model, k: int) -> np.ndarray | None:
    """Per-draw 2x2 between-study covariance of (logit sens, logit fpf) for test ``k``."""
    eff = samples.effect_draws(model)
    n = eff["fixed"].shape[0]
    units = np.flatnonzero(model.unit_test == k)
    out = np.zeros((n, 2, 2))
    found = False
    for b, cov in zip(model.blocks, eff["cov"]):
        if tuple(b.coords[:2]) != (0, 1):
            continue
        if b.level == "unit" and (len(units) == 0 or b.group != model.unit_group[units[0]]):
            continue
        out += cov[:, :2, :2]
        found = True
    if model.spec.variant.is_anova:
        out[:, 0, 0] += eff["tau"][:, k, 0] ** 2
        out[:, 1, 1] += eff["tau"][:, k, 1] ** 2
    return out if found else None


def sroc_curve(samples, test_id: str, grid_size: int = 100, *, model: Model | None = None,
               keep_traces: bool = False, min_coverage: float = 0.5) -> SrocCurve:
    """Summary ROC curve with pointwise 95% bands in FPF plus the credible ellipse of the pooled point."""
    model = _model(samples, model)
    test = model.data.test(test_id)
    k, fk = _test_draws(samples, model, test_id, False, 0)
    ellipse = _ellipse(fk[:, 1], fk[:, 0])
    if test.is_continuous:
        grid = _grid(model, test_id, grid_size)
        ls, lf = _logits(fk, test.c_star, grid)
        # along ascending thresholds both logits decrease; reverse for ascending fpf
        ls, lf = ls[:, ::-1], lf[:, ::-1]
        x_lo, x_hi = np.quantile(lf[:, 0], 0.5), np.quantile(lf[:, -1], 0.5)
        traces = (expit(lf[:, ::-1]), expit(ls[:, ::-1])) if keep_traces else None
    else:
        covs = _location_cov(samples, model, k)
        if covs is None:
            return SrocCurve(test_id, np.array([]), np.array([]), np.array([]), np.array([]), ellipse, False)
        slope = covs[:, 0, 1] / covs[:, 1, 1]
        emp = []
        for s in model.data.series_for(test_id):
            if s.group == 0:
                emp.append(math.log((s.positives[0] + 0.5) / (s.group_size - s.positives[0] + 0.5)))
        x_lo, x_hi = min(emp), max(emp)
        if x_hi <= x_lo:
            x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
        lf = np.broadcast_to(np.linspace(x_lo, x_hi, grid_size), (fk.shape[0], grid_size))
        ls = fk[:, 0:1] + slope[:, None] * (lf - fk[:, 1:2])
        traces = (expit(lf), expit(ls)) if keep_traces else None
    x = np.linspace(x_lo, x_hi, grid_size)
    sens = np.full((fk.shape[0], grid_size), np.nan)
    for d in range(fk.shape[0]):
        sens[d] = np.interp(x, lf[d], ls[d], left=np.nan, right=np.nan)
    covered = np.mean(np.isfinite(sens), axis=0) >= min_coverage
    x, sens = x[covered], sens[:, covered]
    lo, med, hi = np.nanquantile(sens, QUANTILES, axis=0) if sens.size else (np.array([]),) * 3
    return SrocCurve(test_id, expit(x), expit(med), expit(lo), expit(hi), ellipse, True, traces)


def rankings(samples, tests: list | None = None, thresholds: dict | None = None, *,
             model: Model | None = None) -> RankingReport:
    """Rank tests by Youden index per draw; ties share their ranks equally."""
    model = _model(samples, model)
    tests = list(tests) if tests is not None else list(model.test_ids)
    if len(tests) < 2:
        raise ValueError("rankings need at least two tests")
    thresholds = dict(thresholds or {})
    fixed = _fixed(samples, model)
    sens, fpf, used = [], [], []
    for t in tests:
        desc = model.data.test(t)
        c = thresholds.get(t, desc.c_star)
        used.append(c if desc.is_continuous else None)
        ls, lf = _logits(fixed[:, model.test_index(t), :], desc.c_star, [c if desc.is_continuous else 1.0])
        sens.append(ls[:, 0])
        fpf.append(lf[:, 0])
    ls, lf = np.column_stack(sens), np.column_stack(fpf)
    ps, pf = expit(ls), expit(lf)
    youden = ps - pf
    n, k = youden.shape
    lo_rank = rankdata(-youden, method="min", axis=1).astype(int)
    hi_rank = rankdata(-youden, method="max", axis=1).astype(int)
    counts = np.zeros((k, k))
    for d in range(n):
        for t in range(k):
            width = hi_rank[d, t] - lo_rank[d, t] + 1
            counts[t, lo_rank[d, t] - 1: hi_rank[d, t]] += 1.0 / width
    probs = counts / n
    median_rank = np.median(rankdata(-youden, method="average", axis=1), axis=0)
    you = [_triple(_interval(youden[:, t])) for t in range(k)]
    log_dor = ls - lf
    pairs = []
    for a in range(k):
        for b in range(a + 1, k):
            pairs.append(PairwiseDifference(
                tests[a], tests[b],
                _triple(_interval(ps[:, a] - ps[:, b])),
                _triple(_interval(pf[:, b] - pf[:, a])),
                _triple(_interval(log_dor[:, a] - log_dor[:, b]))))
    return RankingReport(tests, used, probs, median_rank, you, pairs)


# -- export -------------------------------------------------------------------
def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _fmt_threshold(t) -> str:
    return "NA" if t is None else _fmt(t)


def summary_rows(summaries) -> list[list[str]]:
    """One row per test x threshold x measure."""
    rows = [["test_id", "threshold", "measure", "median", "lower95", "upper95", "extrapolated"]]
    for s in summaries:
        for measure in ("sensitivity", "specificity", "fpf"):
            med, lo, hi = getattr(s, measure)
            rows.append([s.test_id, _fmt_threshold(s.threshold), measure, _fmt(med), _fmt(lo), _fmt(hi),
                         str(s.extrapolated).lower()])
    return rows


def write_summary_table(rows, stream, delimiter: str = ",") -> None:
    writer = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
    writer.writerows(rows)


def rows_to_text(rows, delimiter: str = ",") -> str:
    buf = io.StringIO()
    write_summary_table(rows, buf, delimiter)
    return buf.getvalue()


def summary_report(summaries, ranking: RankingReport | None = None) -> str:
    """Structured (JSON) report of pooled summaries and optional rankings."""
    out = {"pooled": [{"test_id": s.test_id, "threshold": s.threshold,
                       "sensitivity": list(s.sensitivity), "specificity": list(s.specificity),
                       "fpf": list(s.fpf), "extrapolated": s.extrapolated} for s in summaries]}
    if ranking is not None:
        out["rankings"] = {
            "tests": ranking.tests,
            "rank_probabilities": ranking.rank_probs.tolist(),
            "median_rank": ranking.median_rank.tolist(),
            "pairwise": [{"test_a": p.test_a, "test_b": p.test_b, "d_sens": list(p.d_sens),
                          "d_spec": list(p.d_spec), "d_log_dor": list(p.d_log_dor)} for p in ranking.pairwise],
        }
    return json.dumps(out, sort_keys=True, indent=1) + "\n"

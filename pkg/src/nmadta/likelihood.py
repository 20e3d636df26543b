"""Exact multi-threshold likelihood via the conditional-binomial chain.

At threshold ``t`` the probability of a positive result is
``expit(mu + z * log(c_star / C_t) / sigma)``. Counts at ascending thresholds
are modelled as ``x_1 ~ Bin(N, p_1)`` followed by
``x_t | x_{t-1} ~ Bin(x_{t-1}, p_t / p_{t-1})``, which is the multinomial over
the counts falling between consecutive thresholds.

The per-series scalar functions here are the reference path; :class:`CellTable`
is the vectorised path used by the sampler.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln, log_expit

from .dataset import Dataset, DiseaseGroup, ThresholdSeries

__all__ = [
    "AccuracyParams",
    "positive_prob",
    "chain_loglik",
    "multinomial_oracle",
    "dataset_loglik",
    "saturated_loglik",
    "CellTable",
]


@dataclass(frozen=True)
class AccuracyParams:
    location: float
    log_scale: float
    is_continuous: bool
    c_star: float | None = None

    def logit(self, threshold) -> float:
        if not (math.isfinite(self.location) and math.isfinite(self.log_scale)):
            raise ValueError("accuracy parameters must be finite")
        if not self.is_continuous:
            return self.location
        if threshold is None or not (threshold > 0 and math.isfinite(threshold)):
            raise ValueError(f"continuous test needs a positive threshold, got {threshold!r}")
        return self.location + math.exp(-self.log_scale) * math.log(self.c_star / threshold)


def positive_prob(a: AccuracyParams, threshold) -> float:
    """Probability of a positive result at ``threshold`` (``None`` for binary tests)."""
    return float(np.exp(log_expit(a.logit(threshold))))


def _log_binom(n, k):
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def _xlogy(x, logy):
    # 0 * log(0) = 0 and 0 * -inf = 0
    with np.errstate(invalid="ignore"):
        return np.where(x > 0, x * logy, 0.0)


def _check_probs(series: ThresholdSeries, probs) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.shape != (len(series.positives),):
        raise ValueError("probs must match the series length")
    if np.isnan(p).any():
        raise ValueError("NaN probability")
    if ((p < 0) | (p > 1)).any():
        raise ValueError("probabilities must lie in [0, 1]")
    return p


def chain_loglik(series: ThresholdSeries, probs: Sequence[float]) -> float:
    """Log-density of one series under the conditional-binomial chain.

    Impossible data (counts increasing with threshold) give ``-inf``.
    """
    p = _check_probs(series, probs)
    x = np.asarray(series.positives, dtype=float)
    prev_x = np.concatenate(([float(series.group_size)], x[:-1]))
    if (x > prev_x).any():
        return -math.inf
    prev_p = np.concatenate(([1.0], p[:-1]))
    with np.errstate(divide="ignore"):
        # differences of neighbouring probabilities are exact in floating point
        gap = np.maximum(prev_p - p, 0.0)
        log_q = np.minimum(np.log(p) - np.log(prev_p), 0.0)
        log_1mq = np.log(gap) - np.log(prev_p)
    terms = _log_binom(prev_x, x) + _xlogy(x, log_q) + _xlogy(prev_x - x, log_1mq)
    return float(np.sum(terms))


def multinomial_oracle(series: ThresholdSeries, probs: Sequence[float]) -> float:
    """Same density written as a multinomial over between-threshold interval counts."""
    p = _check_probs(series, probs)
    x = np.asarray(series.positives, dtype=float)
    n = float(series.group_size)
    upper = np.concatenate(([1.0], p))
    lower = np.concatenate((p, [0.0]))
    cell_p = upper - lower
    hi = np.concatenate(([n], x))
    lo = np.concatenate((x, [0.0]))
    counts = hi - lo
    if (counts < 0).any():
        return -math.inf
    with np.errstate(divide="ignore"):
        log_cell = np.log(np.maximum(cell_p, 0.0))
    coef = gammaln(n + 1.0) - np.sum(gammaln(counts + 1.0))
    return float(coef + np.sum(_xlogy(counts, log_cell)))


def saturated_loglik(series: ThresholdSeries) -> float:
    """Chain log-likelihood with every conditional probability at its empirical value."""
    x = np.asarray(series.positives, dtype=float)
    prev_x = np.concatenate(([float(series.group_size)], x[:-1]))
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(prev_x > 0, x / prev_x, 0.0)
        terms = _xlogy(x, np.log(q)) + _xlogy(prev_x - x, np.log1p(-q))
    return float(np.sum(_log_binom(prev_x, x) + terms))


def dataset_loglik(d: Dataset, params: Mapping[tuple, AccuracyParams]) -> float:
    """Sum of chain log-likelihoods; ``params`` is keyed by (study_id, test_id, group)."""
    total = 0.0
    for s in d.series:
        key = (s.study_id, s.test_id, DiseaseGroup(s.group))
        if key not in params:
            raise KeyError(f"no accuracy parameters for series {key}")
        a = params[key]
        logits = np.array([a.logit(c) for c in s.thresholds])
        total += _chain_from_logits(np.asarray(s.positives, float), float(s.group_size), logits)
    return total


def _log1mexp(d):
    """log(1 - exp(d)) for d <= 0."""
    with np.errstate(divide="ignore"):
        return np.where(d > -0.6931471805599453, np.log(-np.expm1(d)), np.log1p(-np.exp(d)))


def _chain_from_logits(x: np.ndarray, n: float, logits: np.ndarray) -> float:
    prev_x = np.concatenate(([n], x[:-1]))
    if (x > prev_x).any():
        return -math.inf
    first = np.zeros(len(x), bool)
    first[0] = True
    prev_logit = np.concatenate(([np.inf], logits[:-1]))
    return float(np.sum(_cell_terms(x, prev_x, logits, prev_logit, first) + _log_binom(prev_x, x)))


def _cell_terms(x, prev_x, logit, prev_logit, first):
    """Parameter-dependent part of each chain term, from logits.

    For t > 1 with logits a = eta_{t-1} > b = eta_t:
    log q = log_expit(b) - log_expit(a), log(1 - q) = log(1 - e^(b - a)) - softplus(b).
    """
    lp = log_expit(logit)
    with np.errstate(invalid="ignore"):
        diff = np.minimum(logit - prev_logit, 0.0)
    log_q = np.where(first, lp, np.minimum(lp - log_expit(prev_logit), 0.0))
    log_1mq = np.where(first, log_expit(-logit), _log1mexp(diff) - np.logaddexp(0.0, logit))
    return _xlogy(x, log_q) + _xlogy(prev_x - x, log_1mq)


class CellTable:
    """Flattened cells of a set of series for vectorised evaluation.

    ``series`` is an ordered list; cells of one series are contiguous and in
    ascending threshold order. ``c_star`` maps test ids to reference thresholds.
    """

    def __init__(self, series: Sequence[ThresholdSeries], c_star: Mapping[str, float | None]):
        cell_series, logc, x, prev_x, first = [], [], [], [], []
        for i, s in enumerate(series):
            cs = c_star[s.test_id]
            prev = s.group_size
            for t, (c, k) in enumerate(zip(s.thresholds, s.positives)):
                cell_series.append(i)
                logc.append(0.0 if c is None else math.log(cs / c))
                x.append(k)
                prev_x.append(prev)
                first.append(t == 0)
                prev = k
        self.n_series = len(series)
        self.cell_series = np.asarray(cell_series, dtype=np.intp)
        self.logc = np.asarray(logc, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.prev_x = np.asarray(prev_x, dtype=float)
        self.first = np.asarray(first, dtype=bool)
        self.prev_cell = np.arange(len(x)) - 1
        self.log_coef = _log_binom(self.prev_x, self.x)
        self.impossible = bool((self.x > self.prev_x).any())

    def series_loglik(self, mu: np.ndarray, log_sigma: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Per-series chain log-likelihood given per-series location, log-scale and slope flag."""
        # extreme scale proposals overflow; those series get -inf rather than nan
        with np.errstate(over="ignore", invalid="ignore"):
            slope = np.where(z, np.exp(-log_sigma), 0.0)
            logit = mu[self.cell_series] + slope[self.cell_series] * self.logc
            prev_logit = np.where(self.first, np.inf, logit[self.prev_cell])
            terms = _cell_terms(self.x, self.prev_x, logit, prev_logit, self.first) + self.log_coef
        out = np.bincount(self.cell_series, weights=terms, minlength=self.n_series)
        out[np.isnan(out)] = -np.inf
        if self.impossible:
            bad = np.bincount(self.cell_series, weights=(self.x > self.prev_x), minlength=self.n_series)
            out[bad > 0] = -np.inf
        return out

    def saturated(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(self.prev_x > 0, self.x / self.prev_x, 0.0)
            terms = _xlogy(self.x, np.log(q)) + _xlogy(self.prev_x - self.x, np.log1p(-q))
        return np.bincount(self.cell_series, weights=terms + self.log_coef, minlength=self.n_series)

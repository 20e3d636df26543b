"""Residual deviance and the deviance information criterion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataset import Dataset
from ..likelihood import dataset_loglik, saturated_loglik
from ..model import ModelSpec, ParameterState, _same_spec

__all__ = ["DicReport", "residual_deviance", "dic", "MIN_DRAWS"]

MIN_DRAWS = 100


@dataclass(frozen=True)
class DicReport:
    mean_residual_deviance: float
    pV: float
    dic: float
    n_draws: int = 0

    @property
    def se_mean_deviance(self) -> float:
        """Naive standard error of the mean deviance (ignores autocorrelation)."""
        if self.n_draws < 2:
            return float("nan")
        return float(np.sqrt(2.0 * self.pV / self.n_draws))


def residual_deviance(d: Dataset, state: ParameterState, spec: ModelSpec | None = None) -> float:
    """``-2 [loglik(state) - loglik(saturated)]``; zero at the empirical proportions."""
    _same_spec(state, spec)
    sat = sum(saturated_loglik(s) for s in d.series)
    return -2.0 * (dataset_loglik(d, state.model.accuracy_params(state)) - sat)


def dic(samples) -> DicReport:
    """``D-bar`` is the mean residual deviance, ``pV`` half its variance, ``dic`` their sum."""
    trace = np.asarray(samples.deviance if hasattr(samples, "deviance") else samples, float).ravel()
    if trace.size < MIN_DRAWS:
        raise ValueError(f"DIC needs at least {MIN_DRAWS} retained draws, got {trace.size}")
    if not np.all(np.isfinite(trace)):
        raise ValueError("deviance trace contains non-finite values")
    mean = float(np.mean(trace))
    pv = float(np.var(trace, ddof=1)) / 2.0
    return DicReport(mean, pv, mean + pv, int(trace.size))

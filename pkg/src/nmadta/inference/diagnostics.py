"""Rank-normalised split R-hat and bulk effective sample size."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

__all__ = ["FitDiagnostics", "diagnostics", "split_rhat", "ess_bulk", "RHAT_LIMIT"]

RHAT_LIMIT = 1.05


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def _rank_normalise(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def _rhat(x: np.ndarray) -> float:
    n = x.shape[1]
    w = np.mean(np.var(x, axis=1, ddof=1))
    b = n * np.var(np.mean(x, axis=1), ddof=1)
    if w == 0:
        return float("nan")
    return float(np.sqrt(((n - 1) / n * w + b / n) / w))


def split_rhat(x) -> float:
    """Maximum of the bulk and folded rank-normalised split R-hat; ``x`` is (chains, draws).

    Values below 1 are sampling noise and are reported as 1.
    """
    x = _split(np.asarray(x, float))
    if np.ptp(x) == 0:
        return float("nan")
    bulk = _rhat(_rank_normalise(x))
    folded = _rhat(_rank_normalise(np.abs(x - np.median(x))))
    return max(bulk, folded, 1.0)


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, size)
    return np.fft.irfft(f * np.conj(f), size)[..., :n] / n


def _ess(x: np.ndarray) -> float:
    chains, n = x.shape
    acov = _autocov(x)
    mean_var = np.mean(acov[:, 0]) * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if chains > 1:
        var_plus += np.var(np.mean(x, axis=1), ddof=1)
    if var_plus == 0:
        return 1.0
    rho = np.zeros(n)
    rho[0] = 1.0
    even, odd = 1.0, 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    rho[1] = odd
    t = 1
    while t < n - 3 and even + odd > 0:
        even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        if even + odd >= 0:
            rho[t + 1], rho[t + 2] = even, odd
        t += 2
    max_t = t - 2
    # Geyer's initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = (rho[t - 1] + rho[t]) / 2.0
        t += 2
    total = chains * n
    tau = -1.0 + 2.0 * np.sum(rho[: max(max_t, 0) + 1]) + max(0.0, rho[max_t + 1])
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def ess_bulk(x) -> float:
    """Bulk ESS on rank-normalised split chains; a constant chain gives 1."""
    x = _split(np.asarray(x, float))
    if x.shape[1] < 4:
        raise ValueError("too few draws for ESS")
    if np.ptp(x) == 0:
        return 1.0
    return _ess(_rank_normalise(x))


@dataclass
class FitDiagnostics:
    names: list
    rhat: np.ndarray
    ess: np.ndarray
    accept_rates: dict = field(default_factory=dict)
    stuck: list = field(default_factory=list)

    @property
    def flagged(self) -> list:
        return [n for n, r in zip(self.names, self.rhat) if np.isfinite(r) and r > RHAT_LIMIT]

    def to_text(self) -> str:
        lines = ["parameter\trhat\tess\tflag"]
        stuck = set(self.stuck)
        for n, r, e in zip(self.names, self.rhat, self.ess):
            flag = "stuck" if n in stuck else ("rhat" if np.isfinite(r) and r > RHAT_LIMIT else "")
            rtxt = "NA" if not np.isfinite(r) else f"{r:.4f}"
            lines.append(f"{n}\t{rtxt}\t{e:.1f}\t{flag}")
        for k in sorted(self.accept_rates):
            lines.append(f"# accept_rate {k} {self.accept_rates[k]:.4f}")
        lines.append(f"# flagged_rhat {len(self.flagged)} stuck {len(self.stuck)}")
        return "\n".join(lines) + "\n"


def diagnostics(samples) -> FitDiagnostics:
    """Per-parameter split R-hat (needs two or more chains) and bulk ESS."""
    draws = samples.draws
    chains = draws.shape[0]
    if chains < 2:
        warnings.warn("single chain: R-hat omitted", stacklevel=2)
    rhat = np.full(draws.shape[2], np.nan)
    ess = np.empty(draws.shape[2])
    stuck = []
    for p in range(draws.shape[2]):
        x = draws[:, :, p]
        if chains >= 2:
            rhat[p] = split_rhat(x)
        ess[p] = ess_bulk(x)
        if np.ptp(x) == 0:
            stuck.append(samples.names[p])
    return FitDiagnostics(list(samples.names), rhat, ess, dict(samples.accept_rates), stuck)

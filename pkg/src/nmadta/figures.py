"""SVG figures with their numeric data embedded in the file metadata."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .summaries import SrocCurve, ThresholdCurve, rows_to_text  # noqa: E402

__all__ = ["plot_threshold_curves", "plot_sroc", "curve_rows", "sroc_rows"]

_RC = {"svg.hashsalt": "nmadta", "svg.fonttype": "none", "path.simplify": False}


def curve_rows(curves) -> list[list[str]]:
    rows = [["test_id", "threshold", "sens_median", "sens_lower95", "sens_upper95",
             "fpf_median", "fpf_lower95", "fpf_upper95"]]
    for c in curves:
        for p in c.points:
            rows.append([c.test_id, f"{p.threshold:.6g}", *(f"{v:.6g}" for v in p.sensitivity),
                         *(f"{v:.6g}" for v in p.fpf)])
    return rows


def sroc_rows(curves) -> list[list[str]]:
    rows = [["test_id", "kind", "fpf", "sens_median", "sens_lower95", "sens_upper95"]]
    for c in curves:
        for x, m, lo, hi in zip(c.fpf, c.sens_median, c.sens_lower, c.sens_upper):
            rows.append([c.test_id, "curve", f"{x:.6g}", f"{m:.6g}", f"{lo:.6g}", f"{hi:.6g}"])
        for x, y in c.ellipse.points:
            rows.append([c.test_id, "ellipse", f"{x:.6g}", f"{y:.6g}", "", ""])
        cx, cy = c.ellipse.center
        rows.append([c.test_id, "pooled", f"{1 / (1 + np.exp(-cx)):.6g}", f"{1 / (1 + np.exp(-cy)):.6g}", "", ""])
    return rows


def _save(fig, path: Path, title: str, rows) -> Path:
    meta = {"Title": title, "Date": None, "Creator": "nmadta", "Description": rows_to_text(rows)}
    fig.savefig(path, format="svg", metadata=meta)
    plt.close(fig)
    return path


def plot_threshold_curves(curves: list[ThresholdCurve], path) -> Path:
    """Pooled sensitivity and FPF against threshold (log axis), one panel per test."""
    path = Path(path)
    with plt.rc_context(_RC):
        n = len(curves)
        fig, axes = plt.subplots(1, n, figsize=(4 * n, 3.5), squeeze=False)
        for ax, c in zip(axes[0], curves):
            for measure, colour in (("sensitivity", "tab:red"), ("fpf", "tab:blue")):
                med = c.column(measure, 0)
                ax.fill_between(c.grid, c.column(measure, 1), c.column(measure, 2), color=colour, alpha=0.2, lw=0)
                ax.plot(c.grid, med, color=colour, label=measure)
            ax.set_xscale("log")
            ax.set_ylim(0, 1)
            ax.set_title(c.test_id)
            ax.set_xlabel("threshold")
        axes[0][0].set_ylabel("probability")
        axes[0][0].legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path, "Pooled accuracy across thresholds", curve_rows(curves))


def plot_sroc(curves: list[SrocCurve], path) -> Path:
    """Summary ROC curves with pointwise 95% bands and 95% credible ellipses."""
    path = Path(path)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 5))
        for i, c in enumerate(curves):
            colour = f"C{i % 10}"
            if c.curve_available and len(c.fpf):
                ax.fill_between(c.fpf, c.sens_lower, c.sens_upper, color=colour, alpha=0.15, lw=0)
                ax.plot(c.fpf, c.sens_median, color=colour, label=c.test_id)
            pts = c.ellipse.points
            ax.plot(pts[:, 0], pts[:, 1], color=colour, ls="--", lw=0.8)
            cx, cy = c.ellipse.center
            ax.plot(1 / (1 + np.exp(-cx)), 1 / (1 + np.exp(-cy)), "o", color=colour, ms=4)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_xlabel("false positive fraction")
        ax.set_ylabel("sensitivity")
        ax.legend(frameon=False, fontsize="small")
        fig.tight_layout()
        return _save(fig, path, "Summary ROC", sroc_rows(curves))

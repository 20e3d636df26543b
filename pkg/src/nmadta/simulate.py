"""Synthetic datasets drawn from a model by the sequential binomial scheme."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .dataset import Dataset, DiseaseGroup, TestDescriptor, ThresholdSeries
from .model import ModelError, ModelSpec, ParameterState

__all__ = ["DesignRow", "design_dataset", "simulate_dataset"]


@dataclass(frozen=True)
class DesignRow:
    study_id: str
    test_id: str
    group: DiseaseGroup
    thresholds: tuple
    group_size: int


def design_dataset(tests: Sequence[TestDescriptor], design: Sequence[DesignRow]) -> Dataset:
    """Dataset skeleton with all counts zero, used to build the layout of a true state."""
    series = [ThresholdSeries(r.study_id, r.test_id, DiseaseGroup(r.group), r.group_size,
                              tuple(r.thresholds), (0,) * len(r.thresholds)) for r in design]
    return Dataset(tuple(tests), tuple(series))


def simulate_dataset(spec: ModelSpec, true_state: ParameterState, design: Sequence[DesignRow] | None = None,
                     rng_seed: int = 0) -> Dataset:
    """Draw counts for every design row given ``true_state``.

    ``x_1 ~ Bin(N, p_1)``, then ``x_t ~ Bin(x_{t-1}, p_t / p_{t-1})`` in ascending
    threshold order. ``true_state`` must have been built on the design's skeleton.
    """
    model = true_state.model
    if spec != model.spec:
        raise ModelError("true_state was built for a different spec")
    skeleton = model.data
    if design is not None:
        wanted = design_dataset(skeleton.tests, design)
        if {s.key for s in wanted.series} != {s.key for s in skeleton.series}:
            raise ModelError("design does not match the layout of true_state")
    rng = np.random.default_rng(rng_seed)
    params = model.accuracy_params(true_state)
    drawn = []
    for s in skeleton.series:
        a = params[(s.study_id, s.test_id, DiseaseGroup(s.group))]
        p = expit(np.array([a.logit(c) for c in s.thresholds]))
        counts = []
        prev_n, prev_p = s.group_size, 1.0
        for pt in p:
            q = min(max(pt / prev_p, 0.0), 1.0) if prev_p > 0 else 0.0
            x = int(rng.binomial(prev_n, q))
            counts.append(x)
            prev_n, prev_p = x, pt
        drawn.append(ThresholdSeries(s.study_id, s.test_id, s.group, s.group_size, s.thresholds, tuple(counts)))
    return Dataset(skeleton.tests, tuple(drawn))

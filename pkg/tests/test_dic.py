import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmadta.dataset import Dataset, DiseaseGroup, TestDescriptor, TestKind, ThresholdSeries
from nmadta.inference import dic, residual_deviance
from nmadta.inference.dic import MIN_DRAWS
from nmadta.model import CovarianceStructure, Model, ModelSpec, ModelVariant

MR = ModelSpec(ModelVariant.META_REGRESSION, CovarianceStructure.REDUCED2)


def one_binary_study(x1, n1, x0, n0):
    t = TestDescriptor("A", "A", TestKind.BINARY, None)
    return Dataset((t,), (ThresholdSeries("S1", "A", DiseaseGroup.DISEASED, n1, (None,), (x1,)),
                          ThresholdSeries("S1", "A", DiseaseGroup.NONDISEASED, n0, (None,), (x0,))))


def test_constant_trace():
    rep = dic(np.full(500, 12.5))
    assert (rep.mean_residual_deviance, rep.pV, rep.dic) == (12.5, 0.0, 12.5)
    assert rep.n_draws == 500


def test_known_trace():
    trace = np.tile([9.0, 11.0], 100)
    rep = dic(trace)
    assert rep.mean_residual_deviance == pytest.approx(10.0)
    assert rep.pV == pytest.approx(np.var(trace, ddof=1) / 2)
    assert rep.se_mean_deviance == pytest.approx(math.sqrt(2 * rep.pV / 200))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e4), min_size=MIN_DRAWS, max_size=400))
def test_dic_identity(trace):
    rep = dic(np.array(trace))
    assert rep.dic == pytest.approx(rep.mean_residual_deviance + rep.pV, rel=1e-12, abs=1e-9)
    assert rep.pV >= 0


def test_too_few_draws():
    with pytest.raises(ValueError, match="at least"):
        dic(np.ones(MIN_DRAWS - 1))


def test_non_finite_trace():
    trace = np.ones(200)
    trace[3] = np.inf
    with pytest.raises(ValueError):
        dic(trace)


def test_accepts_posterior_samples_like_objects():
    class Fake:
        deviance = np.full((2, 100), 3.0)

    assert dic(Fake()).dic == 3.0


def test_residual_deviance_single_binomial():
    # x=6 of N=10 at p=0.5: 2 [6 log 1.2 + 4 log 0.8]
    d = one_binary_study(6, 10, 5, 10)
    model = Model(d, MR)
    state = model.new_state()
    assert residual_deviance(d, state) == pytest.approx(0.40271, abs=1e-5)
    assert residual_deviance(d, state) == pytest.approx(2 * (6 * math.log(1.2) + 4 * math.log(0.8)), abs=1e-12)
    assert model.residual_deviance(state) == pytest.approx(residual_deviance(d, state), abs=1e-10)


def test_residual_deviance_zero_at_saturation():
    d = one_binary_study(8, 10, 3, 12)
    model = Model(d, MR)
    state = model.new_state()
    state.fixed[0, 0] = math.log(0.8 / 0.2)
    state.fixed[0, 1] = math.log(0.25 / 0.75)
    assert residual_deviance(d, state) == pytest.approx(0.0, abs=1e-10)


def test_residual_deviance_non_negative(bin_data):
    model = Model(bin_data, MR)
    rng = np.random.default_rng(0)
    for _ in range(20):
        state = model.initial_state()
        state.fixed[model.fixed_param] += rng.standard_normal(model.fixed_param.sum())
        assert residual_deviance(bin_data, state) >= 0.0


def test_residual_deviance_rejects_wrong_spec():
    d = one_binary_study(6, 10, 5, 10)
    state = Model(d, MR).new_state()
    with pytest.raises(Exception):
        residual_deviance(d, state, ModelSpec(ModelVariant.INDEPENDENT, CovarianceStructure.REDUCED2))

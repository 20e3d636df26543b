import numpy as np
import pytest

from nmadta.inference import PosteriorSamples, SamplerConfig, diagnostics
from nmadta.inference.diagnostics import RHAT_LIMIT, ess_bulk, split_rhat
from nmadta.model import ModelSpec


def fake_samples(draws, names=None):
    names = names or [f"p{i}" for i in range(draws.shape[2])]
    return PosteriorSamples(draws, np.zeros(draws.shape[:2]), names, ModelSpec.preset("MetaRegression"), SamplerConfig(), "x",
                            {"fixed": 0.44})


def test_identical_chains_rhat_near_one():
    x = np.random.default_rng(0).standard_normal(2000)
    r = split_rhat(np.stack([x, x, x]))
    assert 1.0 <= r <= 1.01


def test_iid_chains():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 1000))
    assert 1.0 <= split_rhat(x) < 1.01
    assert ess_bulk(x) == pytest.approx(4000, rel=0.10)


def test_shifted_chain_flagged():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 500))
    x[2] += 3.0
    assert split_rhat(x) > RHAT_LIMIT


def test_trending_chain_detected_by_split():
    x = np.tile(np.linspace(0, 5, 1000), (2, 1))
    assert split_rhat(x) > RHAT_LIMIT


def test_ar1_ess():
    rng = np.random.default_rng(3)
    phi, n = 0.8, 20_000
    x = np.empty((2, n))
    e = rng.standard_normal((2, n))
    x[:, 0] = e[:, 0]
    for t in range(1, n):
        x[:, t] = phi * x[:, t - 1] + e[:, t]
    expected = 2 * n * (1 - phi) / (1 + phi)
    assert ess_bulk(x) == pytest.approx(expected, rel=0.15)


def test_stuck_parameter():
    rng = np.random.default_rng(4)
    draws = rng.standard_normal((2, 400, 2))
    draws[:, :, 1] = 0.7
    rep = diagnostics(fake_samples(draws))
    assert rep.stuck == ["p1"]
    assert rep.ess[1] == pytest.approx(1.0)
    assert np.isnan(rep.rhat[1])
    assert "stuck" in rep.to_text()


def test_single_chain_warns():
    draws = np.random.default_rng(5).standard_normal((1, 400, 2))
    with pytest.warns(UserWarning, match="single chain"):
        rep = diagnostics(fake_samples(draws))
    assert np.all(np.isnan(rep.rhat))
    assert np.all(rep.ess > 100)


def test_report_text():
    rng = np.random.default_rng(6)
    draws = rng.standard_normal((2, 300, 2))
    draws[1, :, 0] += 5
    rep = diagnostics(fake_samples(draws, ["a", "b"]))
    assert rep.flagged == ["a"]
    text = rep.to_text()
    assert text.splitlines()[0] == "parameter\trhat\tess\tflag"
    assert "# accept_rate fixed 0.4400" in text
    assert "# flagged_rhat 1 stuck 0" in text


def test_too_few_draws():
    with pytest.raises(ValueError):
        ess_bulk(np.zeros((2, 5)) + np.arange(5))

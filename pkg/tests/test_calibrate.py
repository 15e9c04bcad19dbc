import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from propercal.calibrate import (
    IsotonicModel,
    TemperatureModel,
    golden_section,
    isotonic_apply,
    isotonic_fit,
    isotonic_fit_1d,
    isotonic_scores,
    load_model,
    mean_nll,
    pav,
    save_model,
    temperature_apply,
    temperature_fit,
)
from propercal.errors import DegenerateLabelsWarning
from propercal.simplex import LabeledPredictions
from propercal.synth import SynthConfig, generate


def brute_force_isotonic(y):
    """Minimum squared error over contiguous level sets with non-decreasing means."""
    n = len(y)
    best = math.inf
    for cuts in itertools.product([0, 1], repeat=n - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        means = [np.mean(y[a:b]) for a, b in zip(bounds, bounds[1:])]
        if any(m2 < m1 for m1, m2 in zip(means, means[1:])):
            continue
        err = sum(np.sum((y[a:b] - m) ** 2) for (a, b), m in zip(zip(bounds, bounds[1:]), means))
        best = min(best, err)
    return best


def test_pav_examples():
    np.testing.assert_array_equal(pav([0, 0, 1, 1]), [0, 0, 1, 1])
    np.testing.assert_allclose(pav([1, 0]), [0.5, 0.5])
    np.testing.assert_allclose(pav([3, 1], [1, 3]), [1.5, 1.5])


def test_isotonic_pools_violators():
    c = isotonic_fit_1d([0.2, 0.8], [1, 0])
    np.testing.assert_allclose(c(np.array([0.2, 0.8])), [0.5, 0.5])


def test_isotonic_step_function_clamps():
    c = isotonic_fit_1d([0.1, 0.5, 0.9], [0, 0, 1])
    np.testing.assert_array_equal(c(np.array([0.0, 0.1, 0.3, 0.5, 0.89, 0.9, 1.0])), [0, 0, 0, 0, 0, 1, 1])


def test_isotonic_pools_tied_scores():
    c = isotonic_fit_1d([0.3, 0.3, 0.6], [0, 1, 1])
    np.testing.assert_array_equal(c.breakpoints, [0.3, 0.6])
    np.testing.assert_allclose(c.values, [0.5, 1.0])


@pytest.mark.parametrize("seed", range(200))
def test_pav_is_optimal(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    scores = rng.random(n)
    targets = rng.integers(0, 2, n).astype(float) if seed % 2 else rng.random(n)
    fit = isotonic_fit_1d(scores, targets)(scores)
    order = np.argsort(scores)
    err = np.sum((fit - targets) ** 2)
    assert err == pytest.approx(brute_force_isotonic(targets[order]), abs=1e-9)


@settings(max_examples=100)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_pav_monotone_and_no_worse_than_identity(y):
    y = np.array(y)
    fit = pav(y)
    assert np.all(np.diff(fit) >= -1e-12)
    assert np.sum((fit - y) ** 2) <= np.sum((np.maximum.accumulate(y) - y) ** 2) + 1e-9


def test_isotonic_in_sample_brier_does_not_increase():
    d = generate(SynthConfig(2000, 4, seed=5)).dataset
    q = isotonic_scores(isotonic_fit(d), d.probs)
    Y = d.onehot
    before = np.mean((d.probs - Y) ** 2, axis=0)
    after = np.mean((q - Y) ** 2, axis=0)
    assert np.all(after <= before + 1e-12)


def test_isotonic_apply_renormalises_and_falls_back_to_uniform():
    model = IsotonicModel([isotonic_fit_1d([0.2, 0.8], [0, 1]), isotonic_fit_1d([0.2, 0.8], [0, 0])])
    out = isotonic_apply(model, LabeledPredictions([[0.1, 0.9], [0.9, 0.1]], [0, 1]))
    np.testing.assert_allclose(out.probs, [[0.5, 0.5], [1.0, 0.0]])


def test_isotonic_near_identity_on_calibrated_data():
    d = generate(SynthConfig(20000, 2, t2=1.0, seed=6)).dataset
    out = isotonic_apply(isotonic_fit(d), d)
    assert np.mean(np.abs(out.probs - d.probs)) < 0.03


def test_isotonic_tolerates_single_class():
    d = LabeledPredictions([[0.3, 0.7], [0.6, 0.4], [0.2, 0.8]], [1, 1, 1])
    out = isotonic_apply(isotonic_fit(d), d)
    np.testing.assert_allclose(out.probs, [[0, 1]] * 3)


def test_temperature_examples():
    d = LabeledPredictions.from_logits([[2.0, 0.0], [2.0, 0.0]], [0, 1])
    np.testing.assert_allclose(temperature_apply(TemperatureModel(2.0), d).probs,
                               [[math.e / (math.e + 1), 1 / (math.e + 1)]] * 2, atol=1e-6)
    np.testing.assert_allclose(temperature_apply(TemperatureModel(1.0), d).probs, d.probs, atol=1e-12)
    hot = [temperature_apply(TemperatureModel(T), d).probs[0, 0] for T in (1, 10, 100, 1000)]
    assert np.all(np.diff(hot) < 0) and hot[-1] == pytest.approx(0.5, abs=1e-3)


def test_temperature_on_calibrated_logits():
    d = generate(SynthConfig(10000, 5, t2=1.0, seed=7)).dataset
    assert temperature_fit(d).T == pytest.approx(1.0, abs=0.05)


def test_temperature_recovers_oversharpening():
    s = generate(SynthConfig(10000, 10, seed=8))
    d = LabeledPredictions.from_logits(np.log(s.truth) / 0.6, s.labels)
    assert temperature_fit(d).T == pytest.approx(1 / 0.6, abs=0.08)


def test_temperature_fit_does_not_increase_nll():
    d = generate(SynthConfig(3000, 4, seed=9)).dataset
    m = temperature_fit(d)
    assert mean_nll(d.get_logits(), d.labels, m.T) <= mean_nll(d.get_logits(), d.labels) + 1e-12


def test_temperature_degenerate_labels_warns():
    d = LabeledPredictions.from_logits([[1.0, 0.0], [2.0, 0.5], [0.3, 0.2]], [0, 0, 0])
    with pytest.warns(DegenerateLabelsWarning):
        T = temperature_fit(d).T
    assert T == pytest.approx(0.05)


def test_temperature_preserves_argmax():
    rng = np.random.default_rng(10)
    z = rng.normal(scale=3, size=(10**5, 7))
    d = LabeledPredictions.from_logits(z, rng.integers(0, 7, 10**5))
    for T in (0.05, 0.7, 3.0, 20.0):
        out = temperature_apply(TemperatureModel(T), d)
        np.testing.assert_array_equal(out.probs.argmax(axis=1), z.argmax(axis=1))


def test_golden_section_minimises():
    x = golden_section(lambda u: (u - 0.3) ** 2, -2, 2, 1e-6)
    assert x == pytest.approx(0.3, abs=1e-6)
    assert golden_section(lambda u: u, 0, 1, 1e-4) == 0


@pytest.mark.parametrize("model", [
    TemperatureModel(1.7),
    IsotonicModel([isotonic_fit_1d([0.1, 0.4, 0.9], [0, 1, 1])] * 2),
], ids=["temperature", "isotonic"])
def test_model_round_trip(tmp_path, model):
    path = tmp_path / "m.json"
    save_model(model, path)
    assert json.loads(path.read_text())["type"] in ("temperature", "isotonic")
    assert load_model(path).to_dict() == model.to_dict()

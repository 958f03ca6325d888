import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hebbian_attractors.errors import ConfigurationError, NumericDivergenceError, PersistenceError
from hebbian_attractors.network import NetworkShape, PlasticNetwork
from hebbian_attractors.plasticity import (MAX_NORM, NO_STABILIZATION, OJA, LayerCoefficients, PlasticityRule,
                                           Stabilization, UpdateSchedule, apply_stabilization, clip,
                                           condition_preset, effective_delta, hebbian_delta_matrix,
                                           hebbian_delta_scalar, load_rule, random_coefficients, rule_from_dict,
                                           rule_to_dict, save_rule, scheduled_step)


def scalar_loop(pre, post, c: LayerCoefficients):
    out = np.empty(c.shape)
    for i in range(c.shape[0]):
        for j in range(c.shape[1]):
            theta = (c.A[i, j], c.B[i, j], c.C[i, j], c.D[i, j])
            out[i, j] = hebbian_delta_scalar(pre[j], post[i], theta, c.eta[i, j])
    return out


def make_rule(shape, rng, **kw):
    return PlasticityRule(random_coefficients(shape, rng), **kw)


@pytest.mark.parametrize("pre, post, theta, eta, expected", [
    (0.3, -0.7, (0, 0, 0, 0), 1.0, 0.0),
    (0.5, 0.5, (1, 0, 0, 0), 1.0, 0.25),
    (0.2, -0.2, (0, 1, 1, 1), 0.1, 0.1),
])
def test_scalar_examples(pre, post, theta, eta, expected):
    assert hebbian_delta_scalar(pre, post, theta, eta) == pytest.approx(expected, abs=1e-15)


def test_matrix_zero_and_constant_rules():
    z = np.zeros((3, 2))
    zero = LayerCoefficients(z, z, z, z, np.ones((3, 2)))
    assert np.array_equal(hebbian_delta_matrix([0.4, -0.1], [0.2, 0.3, 0.9], zero), z)
    d_only = LayerCoefficients(z, z, z, np.full((3, 2), 0.37), np.ones((3, 2)))
    assert np.array_equal(hebbian_delta_matrix([0.4, -0.1], [0.2, 0.3, 0.9], d_only), np.full((3, 2), 0.37))


@settings(max_examples=100)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_matrix_matches_scalar_loop(n_out, n_in, seed):
    rng = np.random.default_rng(seed)
    c = random_coefficients(NetworkShape((n_in, n_out)), rng)[0]
    pre, post = rng.uniform(-1, 1, n_in), rng.uniform(-1, 1, n_out)
    assert np.max(np.abs(hebbian_delta_matrix(pre, post, c) - scalar_loop(pre, post, c))) <= 1e-12


def test_matrix_shape_mismatch():
    c = random_coefficients(NetworkShape((2, 3)), np.random.default_rng(0))[0]
    with pytest.raises(ConfigurationError):
        hebbian_delta_matrix([0.1, 0.2, 0.3], [0.1, 0.2, 0.3], c)


def test_maxnorm_example():
    W = np.array([[2.0, -4.0], [1.0, 0.5]])
    out = apply_stabilization(W, np.zeros_like(W), MAX_NORM)
    assert np.array_equal(out, W / 4.0)
    assert np.array_equal(out, [[0.5, -1.0], [0.25, 0.125]])


def test_maxnorm_identity_and_zero_guard():
    W = np.array([[1.0, -0.3], [0.2, 0.0]])
    assert np.array_equal(apply_stabilization(W, np.zeros_like(W), MAX_NORM), W)
    zeros = np.zeros((2, 2))
    assert np.array_equal(apply_stabilization(zeros, zeros, MAX_NORM), zeros)
    tiny = np.full((2, 2), 1e-14)
    assert np.array_equal(apply_stabilization(tiny, zeros, MAX_NORM), tiny)


def test_clip_example():
    W = np.zeros((1, 2))
    dW = np.array([[-7.0, 3.0]])
    assert np.array_equal(effective_delta(W, dW, clip(5)), [[-5.0, 3.0]])
    assert np.array_equal(apply_stabilization(W, dW, clip(5)), [[-5.0, 3.0]])


def test_oja_and_none_modes():
    rng = np.random.default_rng(2)
    W, dW = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    post, eta = rng.uniform(-1, 1, 3), rng.uniform(0, 1, (3, 2))
    expected = W + dW - eta * (post[:, None] ** 2) * W
    assert np.allclose(apply_stabilization(W, dW, OJA, post, eta), expected, rtol=0, atol=1e-15)
    assert np.array_equal(apply_stabilization(W, dW, NO_STABILIZATION), W + dW)
    with pytest.raises(ConfigurationError):
        apply_stabilization(W, dW, OJA)


def test_nonfinite_result_raises():
    W = np.array([[np.inf, 0.0]])
    with pytest.raises(NumericDivergenceError):
        apply_stabilization(W, np.zeros_like(W), NO_STABILIZATION)


def test_stabilization_parsing():
    assert Stabilization.parse("clip:2.5") == clip(2.5)
    assert Stabilization.parse("maxnorm") == MAX_NORM
    with pytest.raises(ConfigurationError):
        Stabilization("bogus")
    with pytest.raises(ConfigurationError):
        Stabilization("clip", -1.0)


@pytest.mark.parametrize("f_nn, f_hebb, period", [(20, 5, 4), (20, 20, 1), (50, 5, 10), (20, 1, 20), (20, 3, 6)])
def test_schedule_period(f_nn, f_hebb, period):
    assert UpdateSchedule(f_nn, f_hebb).period == period


def test_schedule_validation():
    with pytest.raises(ConfigurationError):
        UpdateSchedule(5, 20)
    with pytest.raises(ConfigurationError):
        UpdateSchedule(20, 0.5)


def test_scheduled_step_ticks():
    shape = NetworkShape((2, 3, 1))
    rng = np.random.default_rng(0)
    rule = make_rule(shape, rng, window=1, schedule=UpdateSchedule(20, 5))
    net = PlasticNetwork(shape, window=1)
    net.randomize(rng)
    ticks = []
    for t in range(13):
        before = [w.copy() for w in net.weights]
        net.forward(rng.uniform(-1, 1, 2))
        updated = scheduled_step(net, rule, t)
        if not updated:
            assert all(np.array_equal(a, b) for a, b in zip(before, net.weights))
        else:
            ticks.append(t)
    assert ticks == [4, 8, 12]


def test_every_step_schedule_updates_from_t1():
    shape = NetworkShape((2, 2))
    rng = np.random.default_rng(1)
    rule = make_rule(shape, rng, window=1, schedule=UpdateSchedule(20, 20))
    net = PlasticNetwork(shape)
    flags = []
    for t in range(5):
        net.forward([0.5, -0.5])
        flags.append(scheduled_step(net, rule, t))
    assert flags == [False, True, True, True, True]


def test_scheduled_step_window_mismatch():
    shape = NetworkShape((2, 2))
    rule = make_rule(shape, np.random.default_rng(0), window=4)
    net = PlasticNetwork(shape, window=1)
    net.forward([0.1, 0.1])
    with pytest.raises(ConfigurationError):
        scheduled_step(net, rule, 1)


def test_scheduled_step_uses_matrix_update_on_averages():
    shape = NetworkShape((2, 2))
    rng = np.random.default_rng(5)
    rule = make_rule(shape, rng, window=2, stabilization=NO_STABILIZATION)
    net = PlasticNetwork(shape, window=2)
    net.randomize(rng)
    net.forward([0.2, 0.4])
    w0 = net.weights[0].copy()
    net.forward([0.6, -0.4])
    pre = net.averaged_activations(0)
    post = net.averaged_activations(1)
    scheduled_step(net, rule, 1)
    expected = w0 + scalar_loop(pre, post, rule.layers[0])
    assert np.allclose(net.weights[0], expected, atol=1e-14, rtol=0)


def test_batched_divergence_is_flagged_per_row():
    shape = NetworkShape((1, 1))
    big = np.array([[[1e308]], [[1.0]]])
    ones = np.ones((2, 1, 1))
    rule = PlasticityRule([LayerCoefficients(0 * ones, 0 * ones, 0 * ones, big, ones)],
                          stabilization=NO_STABILIZATION)
    net = PlasticNetwork(shape, batch_shape=(2,), weights=[np.array([[[1e308]], [[0.0]]])])
    net.forward(np.zeros((2, 1)))
    net.forward(np.zeros((2, 1)))
    assert scheduled_step(net, rule, 1)
    assert net.diverged.tolist() == [True, False]
    assert net.weights[0][0, 0, 0] == 0.0 and net.weights[0][1, 0, 0] == 1.0

    single = PlasticNetwork(shape, weights=[[[1e308]]])
    single_rule = PlasticityRule([LayerCoefficients([[0.0]], [[0.0]], [[0.0]], [[1e308]], [[1.0]])],
                                 stabilization=NO_STABILIZATION)
    single.forward([0.0])
    single.forward([0.0])
    with pytest.raises(NumericDivergenceError):
        scheduled_step(single, single_rule, 1)


@pytest.mark.parametrize("name, expected", [
    ("A", (NO_STABILIZATION, 1, 1)),
    ("B", (MAX_NORM, 1, 1)),
    ("C", (MAX_NORM, 1, 4)),
    ("D", (MAX_NORM, 10, 1)),
    ("E", (MAX_NORM, 10, 4)),
])
def test_condition_presets(name, expected):
    assert condition_preset(name) == expected


def test_unknown_condition():
    with pytest.raises(ConfigurationError):
        condition_preset("F")


def test_constant_eta_mode():
    rule = make_rule(NetworkShape((3, 2)), np.random.default_rng(0), eta_mode=0.05)
    assert np.all(rule.layers[0].eta == 0.05)


def test_rule_json_round_trip(tmp_path):
    rule = make_rule(NetworkShape((3, 4, 2)), np.random.default_rng(7), stabilization=clip(5), window=10,
                     schedule=UpdateSchedule(20, 5))
    path = tmp_path / "rule.json"
    save_rule(rule, path)
    doc = json.loads(path.read_text())
    assert set(doc["layers"]["0"]) == {"A", "B", "C", "D", "eta"}
    assert np.array(doc["layers"]["1"]["A"]).shape == (2, 4)
    back = load_rule(path)
    assert back.stabilization == rule.stabilization and back.window == 10 and back.schedule == rule.schedule
    for a, b in zip(rule.layers, back.layers):
        for name in ("A", "B", "C", "D", "eta"):
            assert np.array_equal(getattr(a, name), getattr(b, name))


def test_rule_file_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(PersistenceError):
        load_rule(bad)
    with pytest.raises(PersistenceError):
        rule_from_dict({"format": "hebbian-rule", "version": 99})
    doc = rule_to_dict(make_rule(NetworkShape((2, 2)), np.random.default_rng(0)))
    del doc["layers"]["0"]["A"]
    with pytest.raises(PersistenceError):
        rule_from_dict(doc)


def test_oja_stays_bounded_with_bounded_activity():
    # linear neuron driven by bounded inputs; pure Hebbian term plus Oja decay
    shape = NetworkShape((3, 1))
    rng = np.random.default_rng(0)
    ones = np.ones((1, 3))
    rule = PlasticityRule([LayerCoefficients(ones, 0 * ones, 0 * ones, 0 * ones, 0.05 * ones)], stabilization=OJA)
    net = PlasticNetwork(shape, activation="identity", batch_shape=(1,))
    net.randomize(rng)
    peak = 0.0
    xs = rng.uniform(-1, 1, (100_000, 1, 3))
    for t in range(xs.shape[0]):
        net.forward(xs[t])
        scheduled_step(net, rule, t)
        peak = max(peak, float(np.abs(net.weights[0]).max()))
    assert np.isfinite(peak) and peak < 1e3

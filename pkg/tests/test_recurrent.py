"""Gated recurrent cell, observation unrolling, and the prediction rollout."""

import numpy as np
import pytest

from intent_graph import autodiff as ad
from intent_graph.autodiff import GradientTape, Tensor, finite_diff_check
from intent_graph.recurrent import (
    GRUCellParams,
    ReadoutParams,
    TemporalConfig,
    gru_step,
    prediction_rollout,
    run_observation,
)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _reference_gru(values, x, h):
    """The gate equations written out independently, numpy end to end."""
    xh = np.hstack([x, h])
    z = _sigmoid(xh @ values["W_z"] + values["b_z"])
    r = _sigmoid(xh @ values["W_r"] + values["b_r"])
    xrh = np.hstack([x, r * h])
    cand = np.tanh(xrh @ values["W_h"] + values["b_h"])
    return (1.0 - z) * h + z * cand


def _cell_values(rng, input_width, hidden):
    rows = input_width + hidden
    return {
        "W_z": rng.standard_normal((rows, hidden)) * 0.4,
        "W_r": rng.standard_normal((rows, hidden)) * 0.4,
        "W_h": rng.standard_normal((rows, hidden)) * 0.4,
        "b_z": rng.standard_normal((1, hidden)) * 0.1,
        "b_r": rng.standard_normal((1, hidden)) * 0.1,
        "b_h": rng.standard_normal((1, hidden)) * 0.1,
    }


def _lift(values, tape=None):
    if tape is None:
        return GRUCellParams(**{k: Tensor(v) for k, v in values.items()})
    return GRUCellParams(**{k: tape.parameter(k, v) for k, v in values.items()})


def test_gru_step_matches_reference_equations():
    rng = np.random.default_rng(0)
    values = _cell_values(rng, 3, 4)
    x = rng.standard_normal((1, 3))
    h = rng.standard_normal((1, 4))
    got = gru_step(_lift(values), Tensor(x), Tensor(h)).data
    want = _reference_gru(values, x, h)
    assert np.allclose(got, want, atol=1e-14)


def test_gru_three_steps_match_reference():
    rng = np.random.default_rng(1)
    values = _cell_values(rng, 2, 3)
    cell = _lift(values)
    inputs = [rng.standard_normal((1, 2)) for _ in range(3)]
    states = run_observation(cell, [Tensor(x) for x in inputs])
    h = np.zeros((1, 3))
    for x, got in zip(inputs, states):
        h = _reference_gru(values, x, h)
        assert np.allclose(got.data, h, atol=1e-14)


def test_hidden_starts_at_zero_unless_given():
    rng = np.random.default_rng(2)
    values = _cell_values(rng, 1, 2)
    x = [Tensor(np.array([[0.5]]))]
    default = run_observation(_lift(values), x)[-1].data
    explicit = run_observation(_lift(values), x, h0=ad.zeros(1, 2))[-1].data
    assert np.array_equal(default, explicit)
    warm = run_observation(_lift(values), x, h0=Tensor(np.ones((1, 2))))[-1].data
    assert not np.array_equal(default, warm)


def test_cell_shape_validation():
    rng = np.random.default_rng(3)
    values = _cell_values(rng, 2, 3)
    bad = dict(values, W_r=np.zeros((4, 3)))
    with pytest.raises(ValueError):
        _lift(bad)
    bad = dict(values, b_h=np.zeros((1, 2)))
    with pytest.raises(ValueError):
        _lift(bad)
    cell = _lift(values)
    with pytest.raises(ValueError):
        gru_step(cell, Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))))
    with pytest.raises(ValueError):
        gru_step(cell, Tensor(np.ones((1, 2))), Tensor(np.ones((1, 4))))


def test_gru_gradients_through_three_steps():
    rng = np.random.default_rng(4)
    values = _cell_values(rng, 2, 3)
    inputs = [rng.standard_normal((1, 2)) for _ in range(3)]

    def f(v):
        tape = GradientTape()
        cell = _lift(v, tape)
        last = run_observation(cell, [Tensor(x) for x in inputs])[-1]
        return ad.bce_with_logits(ad.dot(last, ad.constant(np.ones((1, 3)))), 1)

    report = finite_diff_check(f, values)
    assert report.passed, report.to_dict()


# -- prediction rollout --------------------------------------------------------


def test_rollout_requires_zero_input_cell():
    rng = np.random.default_rng(5)
    readout = ReadoutParams(Tensor(np.ones((3, 1))), Tensor(np.zeros((1, 1))))
    wide = _lift(_cell_values(rng, 2, 3))
    with pytest.raises(ValueError, match="width-0"):
        prediction_rollout(wide, Tensor(np.zeros((1, 3))), 2, readout)


def test_rollout_horizon_validation():
    rng = np.random.default_rng(6)
    cell = _lift(_cell_values(rng, 0, 3))
    readout = ReadoutParams(Tensor(np.ones((3, 1))), Tensor(np.zeros((1, 1))))
    with pytest.raises(ValueError):
        prediction_rollout(cell, Tensor(np.zeros((1, 3))), 0, readout)


def test_rollout_matches_reference_and_evolves():
    rng = np.random.default_rng(7)
    values = _cell_values(rng, 0, 3)
    h0 = rng.standard_normal((1, 3))
    readout_w = rng.standard_normal((3, 1))
    readout_b = np.array([[0.25]])
    cell = _lift(values)
    logits = prediction_rollout(
        cell, Tensor(h0), 4, ReadoutParams(Tensor(readout_w), Tensor(readout_b))
    )
    assert len(logits) == 4
    h = h0
    empty = np.zeros((1, 0))
    expected = []
    for _ in range(4):
        h = _reference_gru(values, empty, h)
        expected.append(float((h @ readout_w + readout_b)[0, 0]))
    got = [t.item() for t in logits]
    assert np.allclose(got, expected, atol=1e-14)
    assert len(set(np.round(got, 12))) > 1  # the zero-input state keeps moving


def test_rollout_gradients():
    rng = np.random.default_rng(8)
    values = _cell_values(rng, 0, 3)
    values["w"] = rng.standard_normal((3, 1))
    values["b"] = np.zeros((1, 1))
    h0 = rng.standard_normal((1, 3))

    def f(v):
        tape = GradientTape()
        cell = GRUCellParams(**{k: tape.parameter(k, v[k]) for k in ("W_z", "W_r", "W_h", "b_z", "b_r", "b_h")})
        readout = ReadoutParams(tape.parameter("w", v["w"]), tape.parameter("b", v["b"]))
        logits = prediction_rollout(cell, Tensor(h0), 3, readout)
        total = ad.bce_with_logits(logits[0], 1)
        for z in logits[1:]:
            total = total + ad.bce_with_logits(z, 0)
        return total

    report = finite_diff_check(f, values)
    assert report.passed, report.to_dict()


def test_temporal_config_defaults():
    tc = TemporalConfig()
    assert tc.use_temporal and tc.use_ped_gru and not tc.use_ctxt_gru


def test_hidden_state_stays_strictly_inside_the_unit_box():
    # convex blend of the previous state and a tanh candidate: starting from
    # zeros the state can never leave (-1, 1) no matter the inputs
    rng = np.random.default_rng(9)
    params = _lift(_cell_values(rng, 6, 4))
    h = ad.constant(np.zeros((1, 4)))
    for _ in range(50):
        x = Tensor(rng.standard_normal((1, 6)) * 10.0)
        h = gru_step(params, x, h)
        assert np.all(np.abs(h.data) < 1.0)

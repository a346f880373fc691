import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cpl import autodiff as ad
from cpl.autodiff import ParameterStore, Tape
from cpl.errors import ConfigError, LifecycleError, NumericError
from cpl.gradcheck import OP_NAMES, TOLERANCE, check_op


@pytest.mark.parametrize("name", OP_NAMES)
def test_each_op_matches_finite_differences(name):
    res = check_op(name, trials=5, seed=7)
    assert res.worst <= TOLERANCE, (name, res.worst)


def test_adam_first_step_moves_by_learning_rate():
    # bias correction makes the first step lr * g / (|g| + eps)
    s = ParameterStore()
    s.add("w", np.array([1.0, -2.0, 0.5]))
    s.grads["w"][...] = [0.3, -4.0, 1e-3]
    ad.adam_update(s, 0.001)
    expected = np.array([1.0, -2.0, 0.5]) - 0.001 * np.array([0.3, -4.0, 1e-3]) / (
        np.abs([0.3, -4.0, 1e-3]) + 1e-8)
    np.testing.assert_allclose(s.tensors["w"], expected, rtol=0, atol=1e-15)
    np.testing.assert_allclose(s.tensors["w"] - [1.0, -2.0, 0.5], [-0.001, 0.001, -0.001], atol=1e-7)
    assert s.step == 1
    assert not s.grads["w"].any()


def test_adam_rejects_nonpositive_rate():
    s = ParameterStore()
    s.add("w", np.zeros(2))
    with pytest.raises(ConfigError):
        ad.adam_update(s, 0.0)


def test_tape_cannot_be_reused():
    s = ParameterStore()
    s.add("w", np.ones(3))
    tape = Tape()
    loss = ad.total(ad.mul(s.var("w", tape), s.var("w", tape)))
    tape.backward(loss)
    np.testing.assert_array_equal(s.grads["w"], 2 * np.ones(3))
    with pytest.raises(LifecycleError):
        tape.backward(loss)
    with pytest.raises(LifecycleError):
        ad.total(s.var("w", tape))


def test_backward_needs_recorded_loss():
    with pytest.raises(LifecycleError):
        Tape().backward(ad.const(1.0))


def test_constants_build_no_graph():
    s = ParameterStore()
    s.add("w", np.ones((2, 2)))
    out = ad.matmul(s.var("w", None), ad.const(np.ones(2)))
    assert out.tape is None
    np.testing.assert_array_equal(out.value, [2.0, 2.0])


def test_nonfinite_forward_raises():
    s = ParameterStore()
    s.add("w", np.array([1e308, 1e308]))
    tape = Tape()
    with pytest.raises(NumericError), np.errstate(over="ignore"):
        ad.scale(s.var("w", tape), 10.0)


def test_duplicate_parameter_rejected():
    s = ParameterStore()
    s.add("w", np.zeros(1))
    with pytest.raises(ConfigError):
        s.add("w", np.zeros(1))


def test_snapshot_restore_and_fingerprint():
    s = ParameterStore()
    s.add("w", np.arange(4.0))
    fp = s.fingerprint()
    snap = s.snapshot()
    s.tensors["w"] += 1.0
    assert s.fingerprint() != fp
    s.restore(snap)
    assert s.fingerprint() == fp


def test_recurrent_step_matches_reference_cell():
    rng = np.random.default_rng(0)
    H, D = 3, 2
    Wx, Wh, b = rng.normal(size=(4 * H, D)), rng.normal(size=(4 * H, H)), rng.normal(size=4 * H)
    h, c, x = rng.normal(size=H), rng.normal(size=H), rng.normal(size=D)
    cell = {"Wx": ad.const(Wx), "Wh": ad.const(Wh), "b": ad.const(b)}
    h2, c2 = ad.recurrent_step(cell, ad.const(h), ad.const(c), ad.const(x))
    z = Wx @ x + Wh @ h + b
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    i, f, g, o = sig(z[:H]), sig(z[H:2 * H]), np.tanh(z[2 * H:3 * H]), sig(z[3 * H:])
    c_ref = f * c + i * g
    np.testing.assert_allclose(c2.value, c_ref, atol=1e-12)
    np.testing.assert_allclose(h2.value, o * np.tanh(c_ref), atol=1e-12)


def test_piecewise_max_pool_segments():
    x = np.array([[1.0, 9.0], [5.0, 2.0], [3.0, 4.0], [0.0, 7.0], [8.0, 1.0]])
    out = ad.piecewise_max_pool(ad.const(x), 1, 3).value
    # segments rows 0-1, 2-3 and 4, each column maxed, segment-major
    ref = np.concatenate([x[0:2].max(0), x[2:4].max(0), x[4:5].max(0)])
    np.testing.assert_array_equal(out, ref)
    # entity at the last token leaves the third segment empty
    tail = ad.piecewise_max_pool(ad.const(x), 1, 4).value
    np.testing.assert_array_equal(tail[4:], [0.0, 0.0])


def test_windows_pads_and_stacks():
    x = np.arange(6.0).reshape(3, 2)
    w = ad.windows(ad.const(x), 3).value
    assert w.shape == (3, 6)
    np.testing.assert_array_equal(w[0], [0, 0, 0, 1, 2, 3])
    np.testing.assert_array_equal(w[2], [2, 3, 4, 5, 0, 0])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-300, 300)))
def test_log_softmax_is_stable_and_normalised(v):
    out = ad.log_softmax(ad.const(v)).value
    assert np.all(np.isfinite(out))
    assert np.all(out <= 1e-12)
    assert abs(np.exp(out).sum() - 1.0) < 1e-9
    p = ad.softmax(ad.const(v)).value
    np.testing.assert_allclose(p, np.exp(out), atol=1e-12)

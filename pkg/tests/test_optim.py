import numpy as np
import pytest

from ehrembed.checkpoint import load_checkpoint, save_checkpoint
from ehrembed.errors import NumericError, ParseError
from ehrembed.optim import AdamState, adam_step, parameter_digest
from ehrembed.tensor import Tensor


def make_param(value):
    p = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True, dtype=np.float64)
    return p


def test_zero_grads_leave_params_unchanged():
    p = make_param([1.0, -2.0])
    state = AdamState()
    adam_step({"w": p}, state, lr=0.1)
    assert np.array_equal(p.data, [1.0, -2.0])
    assert state.step == 1


def test_first_step_matches_hand_evaluated_recurrence():
    # single scalar, constant gradient g: after bias correction the first
    # update is -lr * g/(|g| + eps) ~= -lr * sign(g)
    for g in (0.7, -2.5):
        p = make_param([0.0])
        p.grad = np.array([g])
        lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
        m_hat = (1 - b1) * g / (1 - b1)
        v_hat = (1 - b2) * g * g / (1 - b2)
        expected = -lr * m_hat / (np.sqrt(v_hat) + eps)
        adam_step({"w": p}, AdamState(), lr=lr, beta1=b1, beta2=b2, eps=eps)
        assert p.data[0] == pytest.approx(expected, rel=1e-12)
        assert p.data[0] == pytest.approx(-lr * np.sign(g), rel=1e-6)


def test_lr_zero_is_identity():
    p = make_param([3.0])
    p.grad = np.array([123.0])
    adam_step({"w": p}, AdamState(), lr=0.0)
    assert p.data[0] == 3.0


def test_nan_gradient_aborts_without_partial_update():
    a = make_param([1.0])
    b = make_param([2.0])
    a.grad = np.array([0.5])
    b.grad = np.array([np.nan])
    state = AdamState()
    with pytest.raises(NumericError):
        adam_step({"a": a, "b": b}, state, lr=0.1)
    assert a.data[0] == 1.0 and b.data[0] == 2.0
    assert state.step == 0


def test_parameter_digest_tracks_content():
    p = make_param([1.0, 2.0])
    d1 = parameter_digest({"w": p})
    p.data[0] = 5.0
    assert parameter_digest({"w": p}) != d1
    p.data[0] = 1.0
    assert parameter_digest({"w": p}) == d1


# ------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip(tmp_path):
    tensors = {
        "w": np.arange(6, dtype=np.float32).reshape(2, 3),
        "b": np.array([1.5, -2.5], dtype=np.float64),
        "ids": np.array([[1, 2], [3, 4]], dtype=np.int64),
    }
    meta = {"kind": "demo", "dims": {"h": 3}}
    path = tmp_path / "model.etck"
    save_checkpoint(path, tensors, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta == meta
    for name, arr in tensors.items():
        assert loaded[name].dtype == arr.dtype
        assert np.array_equal(loaded[name], arr)


def test_checkpoint_bytes_stable(tmp_path):
    tensors = {"b": np.ones(3, dtype=np.float32), "a": np.zeros(2, dtype=np.float32)}
    p1, p2 = tmp_path / "a.etck", tmp_path / "b.etck"
    save_checkpoint(p1, tensors, {"k": 1})
    save_checkpoint(p2, dict(reversed(list(tensors.items()))), {"k": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.etck"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ParseError):
        load_checkpoint(path)

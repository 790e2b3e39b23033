import math

import numpy as np
import pytest

from ehrembed import tensor as T
from ehrembed.errors import ConfigurationError, ContractError, DimensionError
from ehrembed.gradcheck import check_gradients
from ehrembed.rng import purpose_rng
from ehrembed.tensor import Tensor


def t64(data):
    return Tensor(np.asarray(data, dtype=np.float64), dtype=np.float64)


def rand(rng, *shape):
    return t64(rng.normal(size=shape))


def test_matmul_identity():
    x = t64([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    out = T.matmul(t64(np.eye(3)), x)
    assert np.allclose(out.data, x.data)


def test_softmax_symmetry():
    out = T.softmax(t64([0.0, 0.0]))
    assert np.allclose(out.data, [0.5, 0.5])


def test_softmax_rows_sum_to_one():
    rng = purpose_rng(3, "softmax")
    out = T.softmax(t64(rng.normal(size=(7, 11)) * 30.0), axis=-1)
    assert np.all(out.data >= 0) and np.all(out.data <= 1)
    assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)


def test_bce_with_logits_closed_form():
    loss = T.bce_with_logits(t64([0.0]), t64([1.0]))
    assert loss.item() == pytest.approx(math.log(2), abs=1e-9)


def test_backward_sum_gives_ones():
    w = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3), requires_grad=True,
               dtype=np.float64)
    T.backward(T.tensor_sum(w))
    assert np.array_equal(w.grad, np.ones((2, 3)))


def test_backward_sigmoid_derivative_at_zero():
    w = Tensor([0.0], requires_grad=True, dtype=np.float64)
    T.backward(T.tensor_sum(T.sigmoid(w)))
    assert w.grad[0] == pytest.approx(0.25, abs=1e-12)


def test_backward_requires_scalar_loss():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        T.backward(T.relu(w))


def test_shape_error_names_both_shapes():
    with pytest.raises(DimensionError) as err:
        T.add(t64(np.zeros((2, 3))), t64(np.zeros((4, 5))))
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)
    with pytest.raises(DimensionError):
        T.matmul(t64(np.zeros((2, 3))), t64(np.zeros((2, 3))))


def test_no_broadcasting_beyond_bias_add():
    a = t64(np.zeros((4, 3)))
    assert T.add(a, t64(np.zeros(3))).shape == (4, 3)  # bias form allowed
    with pytest.raises(DimensionError):
        T.mul(a, t64(np.zeros(3)))
    with pytest.raises(DimensionError):
        T.add(a, t64(np.zeros((4, 1))))


def test_dropout_semantics():
    rng = purpose_rng(0, "dropout")
    x = t64(np.ones((50, 50)))
    assert T.dropout(x, 0.4, False, rng) is x  # identity when not training
    out = T.dropout(x, 0.4, True, purpose_rng(0, "dropout"))
    kept = out.data[out.data > 0]
    assert np.allclose(kept, 1.0 / 0.6)  # inverted scaling
    assert abs(out.data.mean() - 1.0) < 0.05
    with pytest.raises(ConfigurationError):
        T.dropout(x, 1.0, True, rng)


def test_dropout_deterministic_given_stream():
    x = t64(np.ones((8, 8)))
    a = T.dropout(x, 0.5, True, purpose_rng(7, "d"))
    b = T.dropout(x, 0.5, True, purpose_rng(7, "d"))
    assert np.array_equal(a.data, b.data)


def test_embedding_lookup_scatters_gradient():
    table = Tensor(np.arange(12, dtype=np.float64).reshape(4, 3),
                   requires_grad=True, dtype=np.float64)
    out = T.embedding_lookup(table, np.array([1, 1, 3]))
    T.backward(T.tensor_sum(out))
    expected = np.zeros((4, 3))
    expected[1] = 2.0
    expected[3] = 1.0
    assert np.array_equal(table.grad, expected)


def test_intermediate_gradients_retained():
    w = Tensor(np.ones((2, 2)), requires_grad=True, dtype=np.float64)
    mid = T.tanh(w)
    T.backward(T.tensor_sum(mid))
    assert mid.grad is not None and np.allclose(mid.grad, 1.0)
    assert mid._parents == ()  # tape cleared


def test_no_grad_suppresses_tape():
    w = Tensor(np.ones(3), requires_grad=True, dtype=np.float64)
    with T.no_grad():
        out = T.tanh(w)
    assert out._parents == () and not out.requires_grad


# ----------------------------------------------------------- gradient checks

OP_CASES = {
    "matmul": lambda ts: T.tensor_sum(T.matmul(ts[0], ts[1])),
    "matmul_batched": lambda ts: T.tensor_sum(T.matmul(ts[0], ts[1])),
    "add": lambda ts: T.tensor_sum(T.mul(T.add(ts[0], ts[1]), ts[0])),
    "add_bias": lambda ts: T.tensor_sum(T.mul(T.add(ts[0], ts[1]), ts[0])),
    "sub": lambda ts: T.tensor_sum(T.mul(T.sub(ts[0], ts[1]), ts[0])),
    "mul": lambda ts: T.tensor_sum(T.mul(ts[0], ts[1])),
    "concat": lambda ts: T.tensor_sum(T.mul(T.concat([ts[0], ts[1]], axis=1), ts[2])),
    "slice": lambda ts: T.tensor_sum(T.mul(ts[0][:, 1:3], ts[1])),
    "reshape": lambda ts: T.tensor_sum(T.mul(T.reshape(ts[0], (6, 2)), ts[1])),
    "transpose": lambda ts: T.tensor_sum(T.mul(T.transpose(ts[0], (1, 0)), ts[1])),
    "embedding": lambda ts: T.tensor_sum(T.mul(
        T.embedding_lookup(ts[0], np.array([0, 2, 2, 1])), ts[1])),
    "tanh": lambda ts: T.tensor_sum(T.mul(T.tanh(ts[0]), ts[1])),
    "sigmoid": lambda ts: T.tensor_sum(T.mul(T.sigmoid(ts[0]), ts[1])),
    "relu": lambda ts: T.tensor_sum(T.mul(T.relu(ts[0]), ts[1])),
    "softmax": lambda ts: T.tensor_sum(T.mul(T.softmax(ts[0], axis=-1), ts[1])),
    "layer_norm": lambda ts: T.tensor_sum(T.mul(
        T.layer_norm(ts[0], ts[1], ts[2]), ts[3])),
    "mean": lambda ts: T.mean(T.mul(ts[0], ts[1])),
    "mean_axis": lambda ts: T.tensor_sum(T.mul(T.mean(ts[0], axis=0), ts[1])),
    "sum_axis": lambda ts: T.tensor_sum(T.mul(T.tensor_sum(ts[0], axis=1), ts[1])),
    # labels are closed over: losses are differentiable in logits only
    "bce": lambda ts: T.bce_with_logits(
        ts[0], t64(np.array([[1, 0, 1, 0], [0, 0, 1, 1], [1, 1, 0, 0]], dtype=float))),
    "softmax_ce": lambda ts: T.softmax_cross_entropy(ts[0], np.array([0, 2, 1])),
    "multilabel_bce": lambda ts: T.multilabel_bce(
        ts[0], t64((np.arange(18).reshape(3, 6) % 3 == 0).astype(float))),
}


def _inputs_for(name, rng):
    if name == "matmul":
        return [rand(rng, 3, 4), rand(rng, 4, 2)]
    if name == "matmul_batched":
        return [rand(rng, 2, 3, 4), rand(rng, 2, 4, 2)]
    if name in ("add", "sub", "mul"):
        return [rand(rng, 3, 4), rand(rng, 3, 4)]
    if name == "add_bias":
        return [rand(rng, 3, 4), rand(rng, 4)]
    if name == "concat":
        return [rand(rng, 3, 2), rand(rng, 3, 3), rand(rng, 3, 5)]
    if name == "slice":
        return [rand(rng, 3, 5), rand(rng, 3, 2)]
    if name == "reshape":
        return [rand(rng, 3, 4), rand(rng, 6, 2)]
    if name == "transpose":
        return [rand(rng, 3, 4), rand(rng, 4, 3)]
    if name == "embedding":
        return [rand(rng, 4, 3), rand(rng, 4, 3)]
    if name in ("tanh", "sigmoid", "relu", "softmax"):
        return [rand(rng, 3, 4), rand(rng, 3, 4)]
    if name == "layer_norm":
        return [rand(rng, 3, 5), rand(rng, 5), rand(rng, 5), rand(rng, 3, 5)]
    if name in ("mean",):
        return [rand(rng, 3, 4), rand(rng, 3, 4)]
    if name == "mean_axis":
        return [rand(rng, 3, 4), rand(rng, 4)]
    if name == "sum_axis":
        return [rand(rng, 3, 4), rand(rng, 3)]
    if name == "bce":
        return [rand(rng, 3, 4), t64(purpose_rng(9, "y").random((3, 4)) < 0.5)]
    if name == "softmax_ce":
        return [rand(rng, 3, 5)]
    if name == "multilabel_bce":
        return [rand(rng, 3, 6), t64(purpose_rng(9, "y2").random((3, 6)) < 0.5)]
    raise KeyError(name)


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_match_finite_differences(name):
    for seed in range(20):
        rng = purpose_rng(seed, f"gradcheck-{name}")
        check_gradients(OP_CASES[name], _inputs_for(name, rng))


def test_three_layer_net_gradcheck():
    rng = purpose_rng(11, "net")
    x = rand(rng, 4, 5)
    y = t64((purpose_rng(11, "labels").random(4) < 0.5).astype(float))

    def net(ts):
        w1, b1, w2, b2, w3, b3 = ts
        h = T.relu(T.add(T.matmul(x, w1), b1))
        h = T.tanh(T.add(T.matmul(h, w2), b2))
        logits = T.reshape(T.add(T.matmul(h, w3), b3), (4,))
        return T.bce_with_logits(logits, y)

    params = [rand(rng, 5, 6), rand(rng, 6), rand(rng, 6, 6), rand(rng, 6),
              rand(rng, 6, 1), rand(rng, 1)]
    check_gradients(net, params)


def test_forward_backward_bitwise_deterministic():
    def run():
        rng = purpose_rng(5, "det")
        w = Tensor(rng.normal(size=(6, 6)), requires_grad=True, dtype=np.float64)
        x = Tensor(rng.normal(size=(3, 6)), dtype=np.float64)
        loss = T.mean(T.tanh(T.matmul(x, w)))
        T.backward(loss)
        return loss.item(), w.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2 and np.array_equal(g1, g2)

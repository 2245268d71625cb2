import numpy as np
import pytest

from cddsalign.core.errors import ContractError, DimensionError, NumericError, TapeError
from cddsalign.tensor import ops
from cddsalign.tensor.layers import Linear, Module, Parameter, SelfAttentionBlock
from cddsalign.tensor.tape import Tape, current_tape, no_record
from cddsalign.tensor.tensor import Tensor


def test_elementwise_gradients(check_gradients, rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    positive = rng.uniform(0.5, 2.0, size=(3, 4))
    check_gradients(ops.add, a, b)
    check_gradients(ops.sub, a, b)
    check_gradients(ops.mul, a, b)
    check_gradients(ops.div, a, positive)
    check_gradients(lambda x: ops.scalar_mul(x, -2.5), a)
    check_gradients(ops.neg, a)
    check_gradients(ops.square, a)
    check_gradients(ops.sqrt, positive)
    check_gradients(ops.exp, a)
    check_gradients(ops.log, positive)
    check_gradients(ops.sigmoid, a)
    check_gradients(ops.gelu, a)


def test_broadcast_gradients(check_gradients, rng):
    x = rng.normal(size=(2, 3, 4))
    bias = rng.normal(size=4)
    scalar = rng.normal(size=())
    check_gradients(ops.add, x, bias)
    check_gradients(ops.mul, bias, x)
    check_gradients(ops.mul, x, scalar)
    check_gradients(ops.sub, scalar, x)


def test_shape_gradients(check_gradients, rng):
    x = rng.normal(size=(2, 3, 4))
    square = rng.normal(size=(4, 4))
    check_gradients(lambda t: ops.reshape(t, (6, 4)), x)
    check_gradients(ops.transpose, x)
    check_gradients(lambda t, u: ops.concat([t, u], axis=0), x, x[:1])
    check_gradients(lambda t: ops.take_rows(t, [0, 2, 2, 1]), square)
    check_gradients(ops.diagonal, square)


def test_product_and_reduction_gradients(check_gradients, rng):
    a2 = rng.normal(size=(3, 4))
    b2 = rng.normal(size=(4, 5))
    a3 = rng.normal(size=(2, 3, 4))
    b3 = rng.normal(size=(2, 4, 3))
    check_gradients(ops.matmul, a2, b2)
    check_gradients(ops.matmul, a3, b2)
    check_gradients(ops.matmul, a3, b3)
    check_gradients(ops.sum, a3)
    check_gradients(lambda t: ops.sum(t, axis=1), a3)
    check_gradients(lambda t: ops.mean(t, axis=-1, keepdims=True), a3)
    check_gradients(lambda t: ops.mean(t, axis=(0, 2)), a3)


def test_normalizing_gradients(check_gradients, rng):
    x = rng.normal(size=(4, 5))
    mask = rng.uniform(size=(4, 5)) > 0.4
    mask[:, 0] = True
    check_gradients(ops.softmax, x)
    check_gradients(ops.log_softmax, x)
    check_gradients(ops.logsumexp, x)
    check_gradients(lambda t: ops.logsumexp(t, mask=mask), x)
    check_gradients(ops.l2_norm, x)
    check_gradients(ops.cosine_similarity, x, rng.normal(size=(3, 5)))


def test_layer_gradients(check_gradients, rng):
    x = rng.normal(size=(2, 3, 4))
    check_gradients(ops.layer_norm, x, rng.normal(size=4), rng.normal(size=4))
    check_gradients(ops.layer_norm, x, rng.normal(size=4))
    block = SelfAttentionBlock(4, np.random.default_rng(0))
    check_gradients(block, x)
    bare = SelfAttentionBlock(4, np.random.default_rng(0), bias=False, norm=False)
    assert bare.norm_attn is None and bare.norm_ffn is None
    check_gradients(bare, x)
    check_gradients(Linear(4, 2, np.random.default_rng(1)), x)


def test_values_match_numpy(rng):
    x = rng.normal(size=(3, 5))
    mask = np.ones_like(x, dtype=bool)
    mask[:, 1] = False
    expected = np.log(np.exp(x[:, mask[0]]).sum(axis=1))
    np.testing.assert_allclose(ops.logsumexp(x, mask=mask).data, expected, rtol=1e-12)
    y = rng.normal(size=(2, 5))
    cos = x @ y.T / np.outer(np.linalg.norm(x, axis=1), np.linalg.norm(y, axis=1))
    np.testing.assert_allclose(ops.cosine_similarity(x, y).data, cos, rtol=1e-12)


def test_tape_replays_in_reverse_order():
    w = Parameter(np.array([1.0, 2.0]))
    with Tape() as tape:
        loss = ops.sum(ops.square(ops.scalar_mul(w, 3.0)))
    tape.backward(loss)
    assert tape.visited == ["sum", "square", "scalar_mul"]
    np.testing.assert_allclose(w.grad, 18.0 * w.data)


def test_gradients_accumulate_over_shared_inputs():
    w = Parameter(np.array(2.0))
    with Tape() as tape:
        loss = ops.add(ops.mul(w, w), w)
    tape.backward(loss)
    assert w.grad == pytest.approx(5.0)


def test_second_backward_is_rejected():
    w = Parameter(np.ones(3))
    with Tape() as tape:
        loss = ops.sum(w)
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)
    with pytest.raises(TapeError):
        with tape:
            pass


def test_loss_from_another_tape_is_rejected():
    w = Parameter(np.ones(3))
    with Tape() as first:
        loss = ops.sum(w)
    with Tape() as second:
        ops.sum(w)
    with pytest.raises(TapeError):
        second.backward(loss)
    with pytest.raises(TapeError):
        Tensor(1.0).backward()
    first.backward(loss)


def test_backward_needs_a_scalar():
    w = Parameter(np.ones(3))
    with Tape() as tape:
        out = ops.scalar_mul(w, 2.0)
    with pytest.raises(ContractError):
        tape.backward(out)


def test_watched_leaf_gets_zero_gradient():
    used = Parameter(np.ones(2))
    unused = Parameter(np.ones((2, 2)))
    with Tape() as tape:
        tape.watch(used, unused)
        loss = ops.sum(used)
    tape.backward(loss)
    np.testing.assert_array_equal(unused.grad, np.zeros((2, 2)))
    with pytest.raises(ContractError):
        tape.watch(Tensor(1.0))


def test_no_record_suspends_the_tape():
    w = Parameter(np.ones(2))
    with Tape() as tape:
        with no_record():
            assert current_tape() is None
            detached = ops.sum(w)
        assert current_tape() is tape
    assert detached.tape is None
    assert tape.entries == []


def test_non_finite_values_raise_with_op_name():
    with pytest.raises(NumericError) as info:
        ops.log(Tensor([-1.0, 1.0]))
    assert info.value.op_name == "log"
    with pytest.raises(NumericError):
        Tensor([np.nan])
    with pytest.raises(DimensionError):
        Tensor(np.zeros((0, 3)))


def test_shape_errors():
    with pytest.raises(DimensionError):
        ops.add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(DimensionError):
        ops.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DimensionError):
        ops.diagonal(np.ones((2, 3)))
    with pytest.raises(ContractError):
        ops.logsumexp(np.ones((2, 2)), mask=np.array([[True, False], [False, False]]))


def test_tensors_are_immutable():
    t = Tensor(np.ones(3))
    with pytest.raises(ValueError):
        t.data[0] = 5.0
    copy = t.numpy()
    copy[0] = 5.0
    assert t.data[0] == 1.0


def test_module_discovers_parameters_in_order():
    class Pair(Module):
        def __init__(self):
            self.first = Linear(2, 3, np.random.default_rng(0))
            self.scale = Parameter(np.array(1.0))
            self.layers = [Linear(3, 1, np.random.default_rng(1), bias=False)]

    model = Pair()
    names = [name for name, _ in model.named_parameters()]
    assert names == ["first.weight", "first.bias", "scale", "layers.0.weight"]
    state = model.state_dict()
    state["scale"] = np.array(4.0)
    model.load_state_dict(state)
    assert model.scale.item() == 4.0
    with pytest.raises(DimensionError):
        model.scale.assign(np.ones(2))

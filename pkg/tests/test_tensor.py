"""Tensor core: op semantics, broadcasting, tape backward, FD gradients."""

import numpy as np
import pytest

from simba import gradcheck as gc
from simba import tensor as T
from simba.errors import ParameterError, ShapeError
from simba.tensor import Tensor


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    eye = Tensor(np.eye(2))
    assert np.array_equal(T.matmul(a, eye).numpy(), a.numpy())


def test_add_constant_shift():
    out = T.add(Tensor([1.0, 2.0, 3.0]), Tensor([1.0, 1.0, 1.0]))
    assert np.array_equal(out.numpy(), [2.0, 3.0, 4.0])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as e:
        T.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((5, 2))))
    assert "(3, 4)" in str(e.value) and "(5, 2)" in str(e.value)


def test_broadcast_mismatch_names_both_shapes():
    with pytest.raises(ShapeError) as e:
        T.add(Tensor(np.zeros((3, 4))), Tensor(np.zeros((5,))))
    assert "(3, 4)" in str(e.value) and "(5,)" in str(e.value)


def test_silu_values():
    assert T.silu(Tensor(0.0)).item() == 0.0
    assert T.silu(Tensor(50.0)).item() == pytest.approx(50.0, rel=1e-12)
    # hand-evaluated x * sigmoid(x) at x = 1
    assert T.silu(Tensor(1.0)).item() == pytest.approx(1.0 / (1.0 + np.exp(-1.0)), abs=1e-12)


def test_silu_rejects_complex():
    c = T.ComplexTensor(Tensor([1.0]), Tensor([2.0]))
    with pytest.raises(ShapeError):
        T.silu(c)


def test_softplus_at_zero_and_positivity():
    assert T.softplus(Tensor(0.0)).item() == pytest.approx(np.log(2.0), abs=1e-12)
    x = np.linspace(-40.0, 40.0, 101)
    out = T.softplus(Tensor(x)).numpy()
    assert (out > 0).all()


def test_layer_norm_constant_vector_is_zero():
    out = T.layer_norm(Tensor([5.0, 5.0, 5.0]))
    assert np.allclose(out.numpy(), 0.0)


def test_layer_norm_rejects_bad_eps():
    with pytest.raises(ParameterError):
        T.layer_norm(Tensor([1.0, 2.0]), eps=0.0)


def test_dropout_contracts():
    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(-1, 1, (50,)))
    # eval mode: identity bit for bit (same object)
    assert T.dropout(x, 0.7, train=False) is x
    # p = 0 in train mode: identity values
    assert np.array_equal(T.dropout(x, 0.0, train=True, rng=rng).numpy(), x.numpy())
    with pytest.raises(ParameterError):
        T.dropout(x, 1.0, train=True, rng=rng)
    with pytest.raises(ParameterError):
        T.dropout(x, -0.1, train=True, rng=rng)


def test_dropout_train_scaling():
    rng = np.random.default_rng(3)
    x = Tensor(np.ones(20000))
    out = T.dropout(x, 0.25, train=True, rng=rng).numpy()
    kept = out != 0.0
    assert np.allclose(out[kept], 1.0 / 0.75)
    assert abs(kept.mean() - 0.75) < 0.02


def test_backward_quadratic():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    T.backward(T.sum_(T.mul(x, x)))
    assert np.allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        T.backward(T.mul(x, x))
    T.clear_tape()


def test_backward_unused_leaf_grad_zero():
    x = Tensor([1.0], requires_grad=True)
    y = Tensor([2.0], requires_grad=True)
    T.backward(T.sum_(T.mul(x, x)))
    assert np.array_equal(y.grad, [0.0])


def test_backward_accumulates_across_uses():
    x = Tensor([3.0], requires_grad=True)
    T.backward(T.sum_(T.add(T.mul(x, x), T.mul(x, x))))
    assert np.allclose(x.grad, [12.0])


def test_backward_of_empty_tape_is_noop():
    T.clear_tape()
    loss = Tensor(1.0)  # no recorded ops
    T.backward(loss)


def test_matmul_grads_match_finite_differences():
    rng = np.random.default_rng(1)
    a = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, (4, 2)), requires_grad=True)
    err = gc.max_rel_error(lambda: T.sum_(T.matmul(a, b)), [a, b])
    assert err < 1e-4


@pytest.mark.parametrize("seed", range(4))
def test_elementwise_grads_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.uniform(-1, 1, (4, 5)), requires_grad=True)
    b = Tensor(rng.uniform(0.5, 1.5, (5,)), requires_grad=True)

    def f():
        h = T.div(T.mul(T.add(a, b), T.sub(a, b)), b)
        h = T.silu(h)
        h = T.sigmoid(h)
        return T.sum_(T.mul(h, h))

    assert gc.max_rel_error(f, [a, b]) < 1e-4


def test_reduction_and_layout_grads():
    rng = np.random.default_rng(7)
    a = Tensor(rng.uniform(-1, 1, (2, 3, 4)), requires_grad=True)

    def f():
        h = T.transpose(a, (1, 0, 2))
        h = T.reshape(h, (3, 8))
        h = T.concat([h, T.mul(h, h)], axis=1)
        h = h[:, 1:12]
        return T.mean(T.mul(h, h))

    assert gc.max_rel_error(f, [a]) < 1e-4


def test_reshape_roundtrip_exact():
    rng = np.random.default_rng(2)
    x = Tensor(rng.uniform(-1, 1, (3, 8)))
    back = T.reshape(T.reshape(x, (4, 6)), (3, 8))
    assert np.array_equal(back.numpy(), x.numpy())


def test_logsumexp_matches_direct():
    rng = np.random.default_rng(4)
    x = rng.uniform(-5, 5, (6, 9))
    out = T.logsumexp(Tensor(x), axis=-1).numpy()
    ref = np.log(np.exp(x).sum(axis=-1))
    assert np.allclose(out, ref, atol=1e-12)


def test_pow_and_abs_grads():
    rng = np.random.default_rng(5)
    a = Tensor(rng.uniform(0.3, 1.5, (8,)), requires_grad=True)
    assert gc.max_rel_error(lambda: T.sum_(T.pow_(a, 3.0)), [a]) < 1e-4
    b = Tensor(rng.uniform(0.2, 1.0, (8,)) * rng.choice([-1.0, 1.0], 8), requires_grad=True)
    assert gc.max_rel_error(lambda: T.sum_(T.mul(T.abs_(b), T.abs_(b))), [b]) < 1e-4


def test_grad_dtype_follows_leaf():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    T.backward(T.sum_(T.mul(x, x)))
    assert x.grad.dtype == np.float32


def test_no_grad_suppresses_recording():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with T.no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad


def test_complex_tensor_part_extraction():
    re = Tensor(np.ones((2, 3)))
    im = Tensor(np.zeros((2, 3)))
    c = T.ComplexTensor(re, im)
    assert c.real is re and c.imag is im and c.shape == (2, 3)
    with pytest.raises(ShapeError):
        T.ComplexTensor(re, Tensor(np.zeros((3, 2))))

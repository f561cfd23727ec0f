"""Finite-difference checks of every tape op."""

import numpy as np
import pytest

import relightkit.autodiff as ad


def numeric_grad(f, x0, h=1e-6):
    g = np.zeros_like(x0)
    flat = x0.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x0)
        flat[i] = orig - h
        fm = f(x0)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def check(build, shape, seed=0, tol=1e-6):
    """`build` maps a Var to a scalar Var; compare tape grad and FD grad."""
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(shape)
    v = ad.Var(x0.copy(), requires_grad=True)
    loss = build(v)
    loss.backward()

    def f(arr):
        return float(build(ad.Var(arr)).data)

    want = numeric_grad(f, x0.copy())
    assert np.allclose(v.grad, want, rtol=1e-4, atol=tol), (
        f"max err {np.abs(v.grad - want).max()}"
    )


def test_arithmetic_chain():
    rng = np.random.default_rng(1)
    other = rng.standard_normal((3, 4)) + 2.0
    check(lambda v: ad.mean((v * 3.0 + 1.0 - v / ad.Var(other)) * v), (3, 4))


def test_div_both_sides():
    rng = np.random.default_rng(2)
    num = rng.standard_normal((2, 5))
    check(lambda v: ad.mean(ad.Var(num) / (v * v + 1.5)), (2, 5))


def test_absolute_and_square():
    check(lambda v: ad.total(ad.absolute(v)) + ad.mean(ad.square(v)), (4, 4))


def test_leaky_relu():
    check(lambda v: ad.mean(ad.leaky_relu(v, 0.2)), (5, 5))


def test_broadcast_bias_add():
    check(lambda v: ad.mean(ad.Var(np.ones((2, 3, 4))) + v), (4,))


def test_conv2d_grads():
    rng = np.random.default_rng(3)
    w0 = rng.standard_normal((3, 3, 2, 3)) * 0.3
    x0 = rng.standard_normal((1, 6, 6, 2))
    b0 = rng.standard_normal(3) * 0.1
    # wrt input
    check(lambda v: ad.mean(ad.conv2d(v, ad.Var(w0), ad.Var(b0), stride=1, pad=1)), (1, 6, 6, 2))
    # wrt weights and bias
    for shape, build in [
        ((3, 3, 2, 3), lambda v: ad.mean(ad.conv2d(ad.Var(x0), v, ad.Var(b0), stride=2, pad=1))),
        ((3,), lambda v: ad.mean(ad.conv2d(ad.Var(x0), ad.Var(w0), v, stride=2, pad=1))),
    ]:
        check(build, shape)


def test_conv_transpose2d_grads():
    rng = np.random.default_rng(4)
    w0 = rng.standard_normal((4, 4, 3, 2)) * 0.3  # (kh, kw, c_out, c_in)
    x0 = rng.standard_normal((1, 3, 3, 2))
    check(lambda v: ad.mean(ad.square(ad.conv_transpose2d(v, ad.Var(w0), stride=2, pad=1))), (1, 3, 3, 2))
    check(lambda v: ad.mean(ad.square(ad.conv_transpose2d(ad.Var(x0), v, stride=2, pad=1))), (4, 4, 3, 2))


def test_conv_transpose2d_shape():
    x = ad.Var(np.zeros((1, 5, 7, 4)))
    w = ad.Var(np.zeros((4, 4, 6, 4)))
    assert ad.conv_transpose2d(x, w, stride=2, pad=1).shape == (1, 10, 14, 6)


def test_resampling_grads():
    check(lambda v: ad.mean(ad.square(ad.upsample2x(v))), (1, 3, 4, 2))
    check(lambda v: ad.mean(ad.square(ad.avgpool2x(v))), (1, 4, 6, 2))


def test_blur_grad():
    k = np.array([0.25, 0.5, 0.25])
    check(lambda v: ad.mean(ad.square(ad.blur_hw_valid(v, k))), (1, 6, 5, 2))
    check(lambda v: ad.mean(ad.square(ad.blur_hw_valid(v, k))), (6, 5, 2))


def test_forward_diff_grad():
    check(lambda v: ad.mean(ad.square(ad.forward_diff(v, axis=-3))), (5, 4, 2))
    check(lambda v: ad.mean(ad.square(ad.forward_diff(v, axis=-2))), (5, 4, 2))


def test_shared_subgraph_accumulates():
    # y = mean(v*v + v): grad contributions from both uses of v must add up
    check(lambda v: ad.mean(v * v + v), (3, 3))


def test_no_grad_suppresses_graph():
    v = ad.Var(np.ones((2, 2)), requires_grad=True)
    with ad.no_grad():
        out = ad.mean(v * 2.0)
    assert not out.requires_grad and out._parents == ()


def test_backward_requires_scalar():
    v = ad.Var(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(Exception):
        (v * 2.0).backward()

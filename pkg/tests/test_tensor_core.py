import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adaspatial.tensor_core import (
    NonFiniteError,
    ShapeError,
    Tensor,
    check_gradients,
    clamp,
    concat,
    conv2d,
    dwconv2d,
    expand,
    matmul,
    maxpool2x2,
    mean_spatial,
    sigmoid,
    softmax,
    spatial_map,
    adaptive_pool_matrix,
    nearest_matrix,
    upsample_nearest,
)
from adaspatial.tensor_core import ops


def naive_conv2d(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for i in range(n):
        for o in range(co):
            for y in range(ho):
                for xx in range(wo):
                    acc = b[o]
                    for ci in range(c):
                        for p in range(k):
                            for q in range(k):
                                acc += xp[i, ci, y * stride + p, xx * stride + q] * w[o, ci, p, q]
                    out[i, o, y, xx] = acc
    return out


def naive_dwconv(x, w):
    n, c, h, wd = x.shape
    k = w.shape[2]
    pad = (k - 1) // 2
    out = np.zeros_like(x)
    for i in range(n):
        for ch in range(c):
            for y in range(h):
                for xx in range(wd):
                    acc = 0.0
                    for p in range(k):
                        for q in range(k):
                            yy, qq = y + p - pad, xx + q - pad
                            if 0 <= yy < h and 0 <= qq < wd:
                                acc += x[i, ch, yy, qq] * w[ch, 0, p, q]
                    out[i, ch, y, xx] = acc
    return out


# --- conv2d ---------------------------------------------------------------

def test_conv2d_scalar_affine():
    out = conv2d(Tensor([[[[3.0]]]]), Tensor([[[[2.0]]]]), Tensor([1.0]))
    assert out.data.tolist() == [[[[7.0]]]]


def test_conv2d_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 1, 4, 4))
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor([0.0]))
    np.testing.assert_array_equal(out.data, x)


@pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 3), (1, 2, 5), (1, 0, 3), (2, 0, 1)])
def test_conv2d_matches_loop_oracle(stride, pad, k):
    rng = np.random.default_rng(stride * 10 + pad + k)
    x = rng.normal(size=(2, 4, 8, 8))
    w = rng.normal(size=(3, 4, k, k))
    b = rng.normal(size=3)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
    np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, stride, pad), rtol=0, atol=1e-12)


def test_conv2d_spec_shape_case():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), pad=1)
    np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, 1, 1), atol=1e-12)


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError, match="channels"):
        conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 3, 3))))


# --- dwconv2d -------------------------------------------------------------

def test_dwconv_unit_kernel_is_identity():
    x = np.random.default_rng(2).normal(size=(1, 3, 5, 5))
    np.testing.assert_array_equal(dwconv2d(Tensor(x), Tensor(np.ones((3, 1, 1, 1)))).data, x)


def test_dwconv_single_channel_equals_conv2d():
    rng = np.random.default_rng(3)
    x, w = rng.normal(size=(2, 1, 6, 6)), rng.normal(size=(1, 1, 3, 3))
    a = dwconv2d(Tensor(x), Tensor(w)).data
    b = conv2d(Tensor(x), Tensor(w), pad=1).data
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_dwconv_matches_loop_oracle(k):
    rng = np.random.default_rng(k)
    x, w = rng.normal(size=(2, 4, 8, 8)), rng.normal(size=(4, 1, k, k))
    np.testing.assert_allclose(dwconv2d(Tensor(x), Tensor(w)).data, naive_dwconv(x, w), atol=1e-12)


def test_dwconv_channels_are_independent():
    rng = np.random.default_rng(4)
    x, w = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(2, 1, 3, 3))
    base = dwconv2d(Tensor(x), Tensor(w)).data
    x2 = x.copy()
    x2[:, 1] += 10.0
    moved = dwconv2d(Tensor(x2), Tensor(w)).data
    np.testing.assert_array_equal(base[:, 0], moved[:, 0])


def test_dwconv_channel_mismatch():
    with pytest.raises(ShapeError):
        dwconv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 1, 3, 3))))


# --- pointwise / reductions ----------------------------------------------

def test_softmax_symmetric():
    np.testing.assert_array_equal(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_softmax_empty_axis_raises():
    with pytest.raises(ShapeError):
        softmax(Tensor(np.zeros((3, 0))))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 7), elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    y = softmax(Tensor(x)).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


def test_sigmoid_zero():
    assert sigmoid(Tensor(0.0)).item() == 0.5


def test_clamp_default_bounds():
    out = clamp(Tensor([-1.0, 0.5, 3.0]), 1e-3, 2.0)
    np.testing.assert_array_equal(out.data, [1e-3, 0.5, 2.0])


def test_clamp_gradient_passes_only_inside():
    x = Tensor([-1.0, 0.5, 3.0, 2.0], requires_grad=True)
    clamp(x, 1e-3, 2.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0, 0.0])


def test_clamp_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        clamp(Tensor([1.0]), 2.0, 1.0)


def test_elementwise_shapes_must_match():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros((3,)))


def test_non_finite_forward_is_an_error():
    with pytest.raises(NonFiniteError):
        Tensor([0.0]).log()


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-1e3, 1e3)))
def test_finite_inputs_give_finite_outputs(x):
    t = Tensor(x)
    for y in (sigmoid(t), softmax(t), t.relu(), clamp(t, -1, 1), t * t, t.mean()):
        assert np.all(np.isfinite(y.data))


def test_upsample_and_pool_shapes():
    x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
    assert upsample_nearest(x).shape == (1, 1, 8, 8)
    assert maxpool2x2(x).data.ravel().tolist() == [5.0, 7.0, 13.0, 15.0]
    assert mean_spatial(x).data.ravel().tolist() == [7.5]


def test_adaptive_pool_matrix_rows_average_bins():
    m = adaptive_pool_matrix(5, 3)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)
    np.testing.assert_allclose(m @ np.arange(5.0), [0.5, 2.0, 3.5])
    np.testing.assert_array_equal(nearest_matrix(2, 4) @ np.array([1.0, 2.0]), [1, 1, 2, 2])


# --- backward --------------------------------------------------------------

def test_backward_mean_square():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * x).mean().backward()
    np.testing.assert_allclose(x.grad, [1.0, 2.0])


def test_backward_fan_out_accumulates():
    x = Tensor([3.0, -1.0], requires_grad=True)
    y = x + x
    (y * Tensor([1.0, 5.0])).sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 10.0])


def test_repeated_backward_accumulates():
    x = Tensor([2.0], requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    loss.backward()
    np.testing.assert_array_equal(x.grad, [8.0])


def test_backward_errors():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()
    with pytest.raises(RuntimeError):
        Tensor([1.0]).sum().backward()


def test_backward_visits_each_node_once_in_deep_chain():
    x = Tensor([1.0], requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.sum().backward()
    assert x.grad[0] == 1.0


def _rand(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


GRAD_CASES = {
    "add_sub_mul_div": lambda r: (lambda a, b: ((a + b) * (a - b) / (b * b + 1.0)).sum(), (_rand(r, 3, 4), _rand(r, 3, 4))),
    "scalar_ops": lambda r: (lambda a: (3.0 - a * 2.0 + 1.5 / (a * a + 2.0)).sum(), (_rand(r, 5),)),
    "pow_exp_log": lambda r: (lambda a: ((a * a + 1.0).log() + (a * 0.3).exp() + (a * a + 0.5) ** 1.5).sum(), (_rand(r, 6),)),
    "sigmoid_relu": lambda r: (lambda a: (sigmoid(a) * a.relu()).sum(), (_rand(r, 3, 3),)),
    "clamp": lambda r: (lambda a: (clamp(a, -0.5, 0.7) * a).sum(), (_rand(r, 8),)),
    "matmul": lambda r: (lambda a, b: (matmul(a, b) ** 2).sum(), (_rand(r, 2, 3, 4), _rand(r, 2, 4, 5))),
    "softmax": lambda r: (lambda a, b: (softmax(a) * b).sum(), (_rand(r, 3, 5), _rand(r, 3, 5))),
    "reductions": lambda r: (lambda a: (a.sum(axis=1) ** 2).mean() + (mean_spatial(a) ** 2).sum(), (_rand(r, 2, 3, 2, 2),)),
    "reshape_transpose": lambda r: (lambda a: (a.transpose(1, 0, 2).reshape(4, 6) ** 2 * Tensor(np.arange(24.0).reshape(4, 6))).sum(), (_rand(r, 2, 4, 3),)),
    "expand": lambda r: (lambda a, b: (expand(a, (2, 3, 4, 4)) * b).sum(), (_rand(r, 2, 1, 1, 1), _rand(r, 2, 3, 4, 4))),
    "concat": lambda r: (lambda a, b: (concat([a, b], 1) ** 2 * Tensor(np.arange(60.0).reshape(1, 5, 3, 4))).sum(), (_rand(r, 1, 2, 3, 4), _rand(r, 1, 3, 3, 4))),
    "conv2d_pad": lambda r: (lambda x, w, b: (conv2d(x, w, b, pad=1) ** 2).sum(), (_rand(r, 2, 2, 5, 5), _rand(r, 3, 2, 3, 3), _rand(r, 3))),
    "conv2d_stride": lambda r: (lambda x, w, b: (conv2d(x, w, b, stride=2, pad=1) ** 2).sum(), (_rand(r, 1, 2, 6, 6), _rand(r, 2, 2, 3, 3), _rand(r, 2))),
    "conv2d_1x1": lambda r: (lambda x, w, b: (conv2d(x, w, b) ** 2).sum(), (_rand(r, 2, 3, 4, 4), _rand(r, 2, 3, 1, 1), _rand(r, 2))),
    "dwconv": lambda r: (lambda x, w: (dwconv2d(x, w) ** 2).sum(), (_rand(r, 2, 3, 5, 5), _rand(r, 3, 1, 5, 5))),
    "maxpool": lambda r: (lambda x: (maxpool2x2(x) ** 2).sum(), (_rand(r, 1, 2, 4, 4),)),
    "upsample": lambda r: (lambda x: (upsample_nearest(x) ** 2 * Tensor(np.arange(32.0).reshape(1, 2, 4, 4))).sum(), (_rand(r, 1, 2, 2, 2),)),
    "spatial_map": lambda r: (lambda x: (spatial_map(x, adaptive_pool_matrix(5, 3), nearest_matrix(4, 6)) ** 2).sum(), (_rand(r, 1, 2, 5, 4),)),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_gradients_match_finite_differences(name):
    fn, params = GRAD_CASES[name](np.random.default_rng(zlib.crc32(name.encode())))
    err = check_gradients(lambda: fn(*params), params, h=1e-5)
    assert err < 1e-4, f"{name}: relative error {err:.2e}"


def test_ops_module_exposes_all_named_primitives():
    for name in ("matmul", "softmax_lastdim", "sigmoid", "clamp", "mean_all", "mean_spatial",
                 "add", "mul", "global_avg_pool", "upsample_nearest", "relu"):
        assert callable(getattr(ops, name))

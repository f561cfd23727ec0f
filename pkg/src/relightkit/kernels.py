"""Numeric kernels: 2-D correlation (convolution) and resampling primitives.

Everything here works on NHWC float arrays and is purely functional.
The three convolution entry points dispatch between two implementations:

* numpy: im2col + BLAS matmul, chunked over output rows so the unrolled
  patch matrix never exceeds a fixed memory budget;
* numba: direct JIT-compiled loops (see RELIGHT_KERNELS in
  relightkit.backend).

Weight layout is (kh, kw, c_in, c_out).  `conv2d_input_grad` is the exact
adjoint of `conv2d`, which is also what a stride-s transposed convolution
computes, so the decoder's upsampling layers reuse it directly.

Resampling (2x bilinear up, 2x average-pool down) and the separable valid
windowed correlation used by SSIM are numpy-only: they are memory-bound
and never dominate runtime.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import backend
from .errors import DimensionError

# Upper bound for the unrolled im2col buffer of one chunk.
_CHUNK_BYTES = 96 * 2**20


def out_hw(h, w, kh, kw, stride, pad):
    """Spatial output size of a stride-s, pad-p valid correlation."""
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


def tconv_out_hw(h, w, kh, kw, stride, pad):
    """Spatial output size of the transposed (adjoint) correlation."""
    return stride * (h - 1) + kh - 2 * pad, stride * (w - 1) + kw - 2 * pad


def _pad_hw(x, pad):
    if pad == 0:
        return x
    n, h, w, c = x.shape
    out = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    out[:, pad : pad + h, pad : pad + w] = x
    return out


def _row_chunk(n, wo, kh, kw, ci, itemsize, ho):
    rows = _CHUNK_BYTES // max(1, n * wo * kh * kw * ci * itemsize)
    return max(1, min(int(rows), ho))


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _conv2d_np(x, w, stride, pad):
    n, h, wd, ci = x.shape
    kh, kw, _, co = w.shape
    ho, wo = out_hw(h, wd, kh, kw, stride, pad)
    xp = _pad_hw(x, pad)
    # patch rows end with the unit-stride channel axis so the im2col
    # copy runs contiguous inner loops
    wm = w.reshape(kh * kw * ci, co)
    out = np.empty((n, ho, wo, co), dtype=x.dtype)
    step = _row_chunk(n, wo, kh, kw, ci, x.dtype.itemsize, ho)
    for h0 in range(0, ho, step):
        h1 = min(h0 + step, ho)
        sl = xp[:, h0 * stride : (h1 - 1) * stride + kh]
        win = sliding_window_view(sl, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
        col = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * (h1 - h0) * wo, kh * kw * ci)
        out[:, h0:h1] = (col @ wm).reshape(n, h1 - h0, wo, co)
    return out


def _flip_weights(w):
    # adjoint of a stride-1 same-size correlation is a correlation with
    # spatially flipped, channel-transposed weights
    return np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))


def _conv2d_input_grad_np(dy, w, stride, pad, hw):
    n, ho, wo, co = dy.shape
    kh, kw, ci, _ = w.shape
    h, wd = hw
    if stride == 1 and kh - 1 - pad >= 0 and kw - 1 - pad >= 0:
        # gemm-only fast path; the scatter below is memory-bound
        return _conv2d_np(dy, _flip_weights(w), 1, kh - 1 - pad)
    xg = np.zeros((n, h + 2 * pad, wd + 2 * pad, ci), dtype=dy.dtype)
    wm = w.reshape(kh * kw * ci, co)
    step = _row_chunk(n, wo, kh, kw, ci, dy.dtype.itemsize, ho)
    wstop = (wo - 1) * stride + 1
    for h0 in range(0, ho, step):
        h1 = min(h0 + step, ho)
        dcol = (dy[:, h0:h1].reshape(-1, co) @ wm.T).reshape(n, h1 - h0, wo, kh, kw, ci)
        hstop = (h1 - h0 - 1) * stride + 1
        for i in range(kh):
            hi = h0 * stride + i
            for j in range(kw):
                xg[:, hi : hi + hstop : stride, j : j + wstop : stride] += dcol[:, :, :, i, j]
    if pad == 0:
        return xg
    return xg[:, pad : pad + h, pad : pad + wd]


def _conv2d_weight_grad_np(x, dy, kh, kw, stride, pad):
    n, h, wd, ci = x.shape
    _, ho, wo, co = dy.shape
    xp = _pad_hw(x, pad)
    dwm = np.zeros((kh * kw * ci, co), dtype=x.dtype)
    step = _row_chunk(n, wo, kh, kw, ci, x.dtype.itemsize, ho)
    for h0 in range(0, ho, step):
        h1 = min(h0 + step, ho)
        sl = xp[:, h0 * stride : (h1 - 1) * stride + kh]
        win = sliding_window_view(sl, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
        col = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * (h1 - h0) * wo, kh * kw * ci)
        dwm += col.T @ dy[:, h0:h1].reshape(-1, co)
    return dwm.reshape(kh, kw, ci, co)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if backend.HAVE_NUMBA:
    from numba import njit

    @njit(cache=True, fastmath=True, boundscheck=False)
    def _conv2d_nb(xp, w, stride, out):  # pragma: no cover - exercised via dispatch
        n, _, _, ci = xp.shape
        kh, kw, _, co = w.shape
        _, ho, wo, _ = out.shape
        acc = np.zeros(co, dtype=xp.dtype)
        for b in range(n):
            for y in range(ho):
                hi0 = y * stride
                for x in range(wo):
                    wi0 = x * stride
                    for c in range(co):
                        acc[c] = 0.0
                    for i in range(kh):
                        for j in range(kw):
                            for c1 in range(ci):
                                v = xp[b, hi0 + i, wi0 + j, c1]
                                for c in range(co):
                                    acc[c] += v * w[i, j, c1, c]
                    for c in range(co):
                        out[b, y, x, c] = acc[c]

    @njit(cache=True, fastmath=True, boundscheck=False)
    def _conv2d_input_grad_nb(dy, w, stride, pad, xg):  # pragma: no cover
        n, ho, wo, co = dy.shape
        kh, kw, ci, _ = w.shape
        _, h, wd, _ = xg.shape
        for b in range(n):
            for y in range(h):
                for x in range(wd):
                    for i in range(kh):
                        hh = y + pad - i
                        if hh < 0 or hh % stride != 0:
                            continue
                        yo = hh // stride
                        if yo >= ho:
                            continue
                        for j in range(kw):
                            ww = x + pad - j
                            if ww < 0 or ww % stride != 0:
                                continue
                            xo = ww // stride
                            if xo >= wo:
                                continue
                            for c1 in range(ci):
                                t = 0.0
                                for c in range(co):
                                    t += dy[b, yo, xo, c] * w[i, j, c1, c]
                                xg[b, y, x, c1] += t

    @njit(cache=True, fastmath=True, boundscheck=False)
    def _conv2d_weight_grad_nb(xp, dy, stride, dw):  # pragma: no cover
        n, ho, wo, co = dy.shape
        kh, kw, ci, _ = dw.shape
        for b in range(n):
            for y in range(ho):
                hi0 = y * stride
                for x in range(wo):
                    wi0 = x * stride
                    for i in range(kh):
                        for j in range(kw):
                            for c1 in range(ci):
                                v = xp[b, hi0 + i, wi0 + j, c1]
                                for c in range(co):
                                    dw[i, j, c1, c] += v * dy[b, y, x, c]


# ---------------------------------------------------------------------------
# dispatching entry points
# ---------------------------------------------------------------------------


def conv2d(x, w, stride=1, pad=1):
    """Cross-correlate NHWC `x` with weights (kh, kw, c_in, c_out).

    Returns the (n, ho, wo, c_out) response; no bias, no activation.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D arrays, got {x.shape} and {w.shape}")
    if x.shape[3] != w.shape[2]:
        raise DimensionError(f"channel mismatch: input has {x.shape[3]}, weights expect {w.shape[2]}")
    if backend.current() == "numba":
        kh, kw, _, co = w.shape
        ho, wo = out_hw(x.shape[1], x.shape[2], kh, kw, stride, pad)
        out = np.empty((x.shape[0], ho, wo, co), dtype=x.dtype)
        _conv2d_nb(np.ascontiguousarray(_pad_hw(x, pad)), np.ascontiguousarray(w), stride, out)
        return out
    return _conv2d_np(x, w, stride, pad)


def conv2d_input_grad(dy, w, stride, pad, hw):
    """Adjoint of conv2d with respect to its input.

    Maps a (n, ho, wo, c_out) array back to input space (n, *hw, c_in).
    This is exactly a stride-s transposed convolution, so it doubles as
    the forward pass of the decoder's upsampling layers.
    """
    if dy.shape[3] != w.shape[3]:
        raise DimensionError(f"channel mismatch: got {dy.shape[3]}, weights produce {w.shape[3]}")
    expect = out_hw(hw[0], hw[1], w.shape[0], w.shape[1], stride, pad)
    if expect != tuple(dy.shape[1:3]):
        raise DimensionError(f"spatial mismatch: {tuple(dy.shape[1:3])} does not map back to {hw}")
    if backend.current() == "numba":
        xg = np.zeros((dy.shape[0], hw[0], hw[1], w.shape[2]), dtype=dy.dtype)
        _conv2d_input_grad_nb(np.ascontiguousarray(dy), np.ascontiguousarray(w), stride, pad, xg)
        return xg
    return _conv2d_input_grad_np(dy, w, stride, pad, hw)


def conv2d_weight_grad(x, dy, kh, kw, stride, pad):
    """Gradient of conv2d(x, w) with respect to w, given upstream dy."""
    if backend.current() == "numba":
        dw = np.zeros((kh, kw, x.shape[3], dy.shape[3]), dtype=x.dtype)
        _conv2d_weight_grad_nb(
            np.ascontiguousarray(_pad_hw(x, pad)), np.ascontiguousarray(dy), stride, dw
        )
        return dw
    return _conv2d_weight_grad_np(x, dy, kh, kw, stride, pad)


# ---------------------------------------------------------------------------
# resampling (numpy-only)
# ---------------------------------------------------------------------------


def _sl(ndim, axis, s):
    ix = [slice(None)] * ndim
    ix[axis] = s
    return tuple(ix)


def _up2x_axis(a, axis):
    # Bilinear x2 without corner alignment: output centres sit at +/-0.25
    # of the source grid, so each output is a 0.75/0.25 blend with edge clamp.
    nd = a.ndim
    length = a.shape[axis]
    prev = np.concatenate([a[_sl(nd, axis, slice(0, 1))], a[_sl(nd, axis, slice(0, length - 1))]], axis)
    nxt = np.concatenate([a[_sl(nd, axis, slice(1, length))], a[_sl(nd, axis, slice(length - 1, length))]], axis)
    even = 0.75 * a + 0.25 * prev
    odd = 0.75 * a + 0.25 * nxt
    out = np.stack([even, odd], axis=axis + 1)
    shape = list(a.shape)
    shape[axis] = 2 * length
    return out.reshape(shape)


def _up2x_axis_adjoint(g, axis):
    nd = g.ndim
    length = g.shape[axis] // 2
    ge = g[_sl(nd, axis, slice(0, None, 2))]
    go = g[_sl(nd, axis, slice(1, None, 2))]
    dx = 0.75 * (ge + go)
    dx[_sl(nd, axis, slice(0, length - 1))] += 0.25 * ge[_sl(nd, axis, slice(1, length))]
    dx[_sl(nd, axis, slice(0, 1))] += 0.25 * ge[_sl(nd, axis, slice(0, 1))]
    dx[_sl(nd, axis, slice(1, length))] += 0.25 * go[_sl(nd, axis, slice(0, length - 1))]
    dx[_sl(nd, axis, slice(length - 1, length))] += 0.25 * go[_sl(nd, axis, slice(length - 1, length))]
    return dx


def up2x(x):
    """Bilinear 2x upsampling of NHWC arrays (align-corners-off)."""
    if x.ndim != 4:
        raise DimensionError(f"up2x expects NHWC, got shape {x.shape}")
    return _up2x_axis(_up2x_axis(x, 1), 2)


def up2x_adjoint(g):
    return _up2x_axis_adjoint(_up2x_axis_adjoint(g, 2), 1)


def avgpool2x(x):
    """2x2 average pooling of NHWC arrays; requires even spatial dims."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"avgpool2x needs even spatial dims, got {h}x{w}")
    return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def avgpool2x_adjoint(g):
    return 0.25 * np.repeat(np.repeat(g, 2, axis=1), 2, axis=2)


# ---------------------------------------------------------------------------
# separable valid correlation (SSIM window)
# ---------------------------------------------------------------------------


def corr1d_valid(a, k, axis):
    """Valid-mode correlation of `a` with 1-D kernel `k` along `axis`."""
    win = sliding_window_view(a, k.size, axis=axis)
    return win @ k.astype(a.dtype)


def corr1d_valid_adjoint(g, k, axis):
    """Adjoint of corr1d_valid: zero-pad then correlate with the flipped kernel."""
    t = k.size
    nd = g.ndim
    widths = [(0, 0)] * nd
    widths[axis] = (t - 1, t - 1)
    return corr1d_valid(np.pad(g, widths), k[::-1], axis)

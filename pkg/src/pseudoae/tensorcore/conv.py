"""3D convolution and transposed convolution over ``[N, T, C, H, W]`` tensors.

Kernels use the usual layouts: ``conv3d`` takes ``[C_out, C_in, kT, kH, kW]``,
``conv_transpose3d`` takes ``[C_in, C_out, kT, kH, kW]`` (the adjoint's view of
the same weight). Both are built from three dense primitives:

* ``_gather``  -- strided window view + one GEMM (forward conv)
* ``_scatter`` -- one GEMM + one strided accumulate per kernel tap (adjoint)
* ``_wgrad``   -- window view contracted with the upstream gradient

Each primitive reduces in a fixed order, so results are deterministic for a
given BLAS thread count.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor

# spatial axes of an [N, T, C, H, W] array
_AX = (1, 3, 4)


def _triple(v, name: str) -> tuple[int, int, int]:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ValueError(f"{name} must be an int or a triple, got {v}")
    return v


def _pad(x: np.ndarray, pad: tuple[int, int, int]) -> np.ndarray:
    if not any(pad):
        return x
    pt, ph, pw = pad
    return np.pad(x, ((0, 0), (pt, pt), (0, 0), (ph, ph), (pw, pw)))


def _windows(xp: np.ndarray, k: tuple[int, int, int], stride: tuple[int, int, int]) -> np.ndarray:
    """[N, T, C, H, W] -> strided view [N, To, C, Ho, Wo, kT, kH, kW]."""
    v = sliding_window_view(xp, k, axis=_AX)
    st, sh, sw = stride
    return v[:, ::st, :, ::sh, ::sw]


def _gather(xp: np.ndarray, w: np.ndarray, stride) -> np.ndarray:
    """Correlate padded input with ``w[C_res, C_x, k...]`` -> ``[N, To, C_res, Ho, Wo]``."""
    win = _windows(xp, w.shape[2:], stride)
    out = np.tensordot(win, w, axes=([2, 5, 6, 7], [1, 2, 3, 4]))  # [N, To, Ho, Wo, C_res]
    return np.ascontiguousarray(out.transpose(0, 1, 4, 2, 3))


def _scatter(g: np.ndarray, w: np.ndarray, stride, full: tuple[int, int, int]) -> np.ndarray:
    """Adjoint of ``_gather``: spread ``g[N, Ti, C_g, Hi, Wi]`` through ``w[C_g, C_res, k...]``.

    Returns the full (still padded) buffer ``[N, full_t, C_res, full_h, full_w]``.
    """
    n, ti, _, hi, wi = g.shape
    c_res = w.shape[1]
    kt, kh, kw = w.shape[2:]
    st, sh, sw = stride
    cols = np.tensordot(g, w, axes=([2], [0]))  # [N, Ti, Hi, Wi, C_res, kT, kH, kW]
    cols = cols.transpose(0, 1, 4, 2, 3, 5, 6, 7)  # [N, Ti, C_res, Hi, Wi, kT, kH, kW]
    out = np.zeros((n, full[0], c_res, full[1], full[2]), dtype=g.dtype)
    for a in range(kt):
        ts = slice(a, a + st * (ti - 1) + 1, st)
        for b in range(kh):
            hs = slice(b, b + sh * (hi - 1) + 1, sh)
            for c in range(kw):
                out[:, ts, :, hs, slice(c, c + sw * (wi - 1) + 1, sw)] += cols[..., a, b, c]
    return out


def _wgrad(xp: np.ndarray, g: np.ndarray, k, stride) -> np.ndarray:
    """Gradient of ``_gather`` w.r.t. its weight: ``[C_g, C_x, k...]``."""
    win = _windows(xp, k, stride)
    return np.tensordot(g, win, axes=([0, 1, 3, 4], [0, 1, 3, 4]))


def _check_input(x: Tensor, op: str) -> None:
    if x.data.ndim != 5:
        raise ShapeError(f"{op}: expected input [N, T, C, H, W], got shape {x.shape}")


def _check_bias(bias: Tensor | None, channels: int, op: str) -> None:
    if bias is not None and bias.shape != (channels,):
        raise ShapeError(f"{op}: bias shape {bias.shape} does not match {channels} output channels")


def conv_output_extent(n_in: int, k: int, stride: int, pad: int) -> int:
    return (n_in + 2 * pad - k) // stride + 1


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlate ``x[N, T, C_in, H, W]`` with ``kernel[C_out, C_in, kT, kH, kW]``.

    Output extent per axis is ``floor((in + 2*pad - k) / stride) + 1``.
    """
    _check_input(x, "conv3d")
    stride, padding = _triple(stride, "stride"), _triple(padding, "padding")
    if kernel.data.ndim != 5:
        raise ShapeError(f"conv3d: kernel must be [C_out, C_in, kT, kH, kW], got {kernel.shape}")
    c_out, c_in, *k = kernel.shape
    k = tuple(k)
    if x.shape[2] != c_in:
        raise ShapeError(f"conv3d: input has {x.shape[2]} channels, kernel expects {c_in}")
    in_ext = (x.shape[1], x.shape[3], x.shape[4])
    for dim, n_in, kk, s, p in zip("THW", in_ext, k, stride, padding):
        if s < 1 or p < 0:
            raise ShapeError(f"conv3d: invalid stride {s} / padding {p} on axis {dim}")
        if n_in + 2 * p < kk:
            raise ShapeError(
                f"conv3d: axis {dim} extent {n_in} with padding {p} is smaller than kernel {kk}")
    _check_bias(bias, c_out, "conv3d")

    xp = _pad(x.data, padding)
    out = _gather(xp, kernel.data, stride)
    if bias is not None:
        out += bias.data[None, None, :, None, None]
    full = xp.shape[1], xp.shape[3], xp.shape[4]

    def _bw(g):
        gw = _wgrad(xp, g, k, stride) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gxp = _scatter(g, kernel.data, stride, full)
            pt, ph, pw = padding
            gx = gxp[:, pt:pt + in_ext[0], :, ph:ph + in_ext[1], pw:pw + in_ext[2]]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1, 3, 4))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor(out, _parents=parents, _backward=_bw, op="conv3d")


def conv_transpose3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride=1, padding=0,
                     output_padding=0) -> Tensor:
    """Adjoint of :func:`conv3d` with ``kernel[C_in, C_out, kT, kH, kW]``.

    Output extent per axis is ``(in - 1) * stride - 2*pad + k + output_padding``;
    ``output_padding`` (< stride) resolves the extent ambiguity of strided convs.
    """
    _check_input(x, "conv_transpose3d")
    stride, padding = _triple(stride, "stride"), _triple(padding, "padding")
    output_padding = _triple(output_padding, "output_padding")
    if kernel.data.ndim != 5:
        raise ShapeError(
            f"conv_transpose3d: kernel must be [C_in, C_out, kT, kH, kW], got {kernel.shape}")
    c_in, c_out, *k = kernel.shape
    k = tuple(k)
    if x.shape[2] != c_in:
        raise ShapeError(f"conv_transpose3d: input has {x.shape[2]} channels, kernel expects {c_in}")
    in_ext = (x.shape[1], x.shape[3], x.shape[4])
    full = []
    for dim, n_in, kk, s, p, op in zip("THW", in_ext, k, stride, padding, output_padding):
        if s < 1 or p < 0 or not 0 <= op < s:
            raise ShapeError(
                f"conv_transpose3d: invalid stride {s} / padding {p} / output_padding {op} on axis {dim}")
        f = (n_in - 1) * s + kk + op
        if f - 2 * p < 1:
            raise ShapeError(f"conv_transpose3d: axis {dim} output extent would be {f - 2 * p}")
        full.append(f)
    _check_bias(bias, c_out, "conv_transpose3d")

    buf = _scatter(x.data, kernel.data, stride, tuple(full))
    pt, ph, pw = padding
    out_ext = (full[0] - 2 * pt, full[1] - 2 * ph, full[2] - 2 * pw)
    out = np.ascontiguousarray(buf[:, pt:pt + out_ext[0], :, ph:ph + out_ext[1], pw:pw + out_ext[2]])
    if bias is not None:
        out += bias.data[None, None, :, None, None]

    def _bw(g):
        gfull = np.zeros_like(buf)
        gfull[:, pt:pt + out_ext[0], :, ph:ph + out_ext[1], pw:pw + out_ext[2]] = g
        gx = _gather(gfull, kernel.data, stride) if x.requires_grad else None
        gw = _wgrad(gfull, x.data, k, stride) if kernel.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1, 3, 4))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor(out, _parents=parents, _backward=_bw, op="conv_transpose3d")

"""Layer primitives on NHWC tensors.

Convolution filters are laid out ``(kh, kw, in_channels, out_channels)``.
Transposed convolution reuses the same layout read backwards, i.e. a filter
``(kh, kw, out_channels, in_channels)``, so that it is exactly the input
gradient of :func:`conv2d` with that filter.

"same" padding yields ``ceil(in / stride)`` outputs; the total zero pad is
split symmetrically with any odd remainder on the bottom/right.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_result

LEAKY_SLOPE = 0.2


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return v, v
    a, b = v
    return int(a), int(b)


def conv_output_size(size: int, k: int, s: int, padding: str) -> int:
    if padding == "same":
        return -(-size // s)
    if padding == "valid":
        if size < k:
            raise ShapeError(f"valid conv: input extent {size} smaller than kernel {k}")
        return (size - k) // s + 1
    raise ValueError(f"unknown padding mode {padding!r}")


def _pads(size: int, k: int, s: int, padding: str) -> tuple[int, int, int]:
    out = conv_output_size(size, k, s, padding)
    if padding == "valid":
        return out, 0, 0
    total = max((out - 1) * s + k - size, 0)
    return out, total // 2, total - total // 2


def transpose_output_size(size: int, k: int, s: int, padding: str) -> int:
    if padding == "same":
        return size * s
    if padding == "valid":
        return (size - 1) * s + k
    raise ValueError(f"unknown padding mode {padding!r}")


def _batched(x: Tensor) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ShapeError(f"expected HxWxC or NxHxWxC input, got shape {x.shape}")


# -- raw numpy kernels ----------------------------------------------------

def _corr(xp: np.ndarray, w: np.ndarray, s: tuple[int, int], oh: int, ow: int) -> np.ndarray:
    n, _, _, c = xp.shape
    kh, kw, _, f = w.shape
    out = np.zeros((n, oh, ow, f), dtype=np.result_type(xp, w))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + s[0] * (oh - 1) + 1 : s[0], j : j + s[1] * (ow - 1) + 1 : s[1], :]
            out += patch @ w[i, j]
    return out


def _corr_input_grad(g: np.ndarray, w: np.ndarray, s: tuple[int, int], padded_hw: tuple[int, int]) -> np.ndarray:
    n, oh, ow, _ = g.shape
    kh, kw, c, _ = w.shape
    dxp = np.zeros((n, padded_hw[0], padded_hw[1], c), dtype=np.result_type(g, w))
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + s[0] * (oh - 1) + 1 : s[0], j : j + s[1] * (ow - 1) + 1 : s[1], :] += g @ w[i, j].T
    return dxp


def _corr_filter_grad(xp: np.ndarray, g: np.ndarray, s: tuple[int, int], k: tuple[int, int]) -> np.ndarray:
    n, oh, ow, f = g.shape
    c = xp.shape[-1]
    dw = np.zeros((k[0], k[1], c, f), dtype=np.result_type(xp, g))
    g2 = g.reshape(-1, f)
    for i in range(k[0]):
        for j in range(k[1]):
            patch = xp[:, i : i + s[0] * (oh - 1) + 1 : s[0], j : j + s[1] * (ow - 1) + 1 : s[1], :]
            dw[i, j] = patch.reshape(-1, c).T @ g2
    return dw


# -- differentiable ops ---------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding: str = "same") -> Tensor:
    """Discrete cross-correlation of ``x`` with ``w`` plus optional bias."""
    w = as_tensor(w)
    xd, squeeze = _batched(x)
    if w.ndim != 4:
        raise ShapeError(f"conv2d filters must be rank 4 (kh, kw, cin, cout), got {w.shape}")
    kh, kw, cin, cout = w.shape
    if xd.shape[-1] != cin:
        raise ShapeError(f"conv2d: input has {xd.shape[-1]} channels, filters expect {cin}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({cout},)")
    s = _pair(stride)
    oh, pt, pb = _pads(xd.shape[1], kh, s[0], padding)
    ow, pl, pr = _pads(xd.shape[2], kw, s[1], padding)
    xp = np.pad(xd, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else xd
    out = _corr(xp, w.data, s, oh, ow)
    if b is not None:
        out = out + b.data
    h_in, w_in = xd.shape[1], xd.shape[2]

    def bw(g):
        g4 = g[None] if squeeze else g
        dx = None
        if x.requires_grad:
            dxp = _corr_input_grad(g4, w.data, s, xp.shape[1:3])
            dx = dxp[:, pt : pt + h_in, pl : pl + w_in, :]
            if squeeze:
                dx = dx[0]
        dw = _corr_filter_grad(xp, g4, s, (kh, kw)) if w.requires_grad else None
        db = g4.sum(axis=(0, 1, 2)) if b is not None and b.requires_grad else None
        return (dx, dw, db) if b is not None else (dx, dw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_result(out[0] if squeeze else out, parents, bw)


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding: str = "same") -> Tensor:
    """Transposed convolution: the input-gradient of :func:`conv2d`.

    ``w`` has shape ``(kh, kw, out_channels, in_channels)``.
    """
    w = as_tensor(w)
    xd, squeeze = _batched(x)
    if w.ndim != 4:
        raise ShapeError(f"conv2d_transpose filters must be rank 4, got {w.shape}")
    kh, kw, cout, cin = w.shape
    if xd.shape[-1] != cin:
        raise ShapeError(f"conv2d_transpose: input has {xd.shape[-1]} channels, filters expect {cin}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d_transpose: bias shape {b.shape} != ({cout},)")
    s = _pair(stride)
    ih, iw = xd.shape[1], xd.shape[2]
    oh = transpose_output_size(ih, kh, s[0], padding)
    ow = transpose_output_size(iw, kw, s[1], padding)
    _, pt, pb = _pads(oh, kh, s[0], padding)
    _, pl, pr = _pads(ow, kw, s[1], padding)
    padded = (oh + pt + pb, ow + pl + pr)
    full = _corr_input_grad(xd, w.data, s, padded)
    out = full[:, pt : pt + oh, pl : pl + ow, :]
    if b is not None:
        out = out + b.data

    def bw(g):
        g4 = g[None] if squeeze else g
        gp = np.pad(g4, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else g4
        dx = None
        if x.requires_grad:
            dx = _corr(gp, w.data, s, ih, iw)
            if squeeze:
                dx = dx[0]
        dw = _corr_filter_grad(gp, xd, s, (kh, kw)) if w.requires_grad else None
        db = g4.sum(axis=(0, 1, 2)) if b is not None and b.requires_grad else None
        return (dx, dw, db) if b is not None else (dx, dw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_result(out[0] if squeeze else out, parents, bw)


def maxpool2d(x: Tensor, window=2, stride=None) -> Tensor:
    """Max pooling with floor semantics: trailing rows/cols that do not fill a
    whole window are dropped. Gradient flows to the first maximal cell only."""
    xd, squeeze = _batched(x)
    k = _pair(window)
    s = _pair(stride if stride is not None else window)
    n, h, wd, c = xd.shape
    if k[0] > h or k[1] > wd:
        raise ShapeError(f"maxpool window {k} larger than input {(h, wd)}")
    oh = (h - k[0]) // s[0] + 1
    ow = (wd - k[1]) // s[1] + 1
    win = np.lib.stride_tricks.sliding_window_view(xd, k, axis=(1, 2))
    win = win[:, : s[0] * (oh - 1) + 1 : s[0], : s[1] * (ow - 1) + 1 : s[1]]
    flat = win.reshape(n, oh, ow, c, k[0] * k[1])
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        g4 = g[None] if squeeze else g
        dx = np.zeros_like(xd, dtype=g4.dtype)
        for i in range(k[0]):
            for j in range(k[1]):
                mask = arg == i * k[1] + j
                dx[:, i : i + s[0] * (oh - 1) + 1 : s[0], j : j + s[1] * (ow - 1) + 1 : s[1], :] += g4 * mask
        return (dx[0] if squeeze else dx,)

    return make_result(out[0] if squeeze else out, (x,), bw)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ w + b``; rank-1 inputs are treated as a batch of one."""
    w = as_tensor(w)
    single = x.ndim == 1
    xd = x.data[None] if single else x.data
    if xd.ndim != 2 or w.ndim != 2 or xd.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias shape {b.shape} != ({w.shape[1]},)")
    out = xd @ w.data
    if b is not None:
        out = out + b.data

    def bw(g):
        g2 = g[None] if single else g
        dx = g2 @ w.data.T if x.requires_grad else None
        if single and dx is not None:
            dx = dx[0]
        dw = xd.T @ g2 if w.requires_grad else None
        db = g2.sum(axis=0) if b is not None and b.requires_grad else None
        return (dx, dw, db) if b is not None else (dx, dw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_result(out[0] if single else out, parents, bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, alpha: float = LEAKY_SLOPE) -> Tensor:
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)
    return make_result(x.data * slope, (x,), lambda g: (g * slope,))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype)


def sigmoid(x: Tensor) -> Tensor:
    y = _stable_sigmoid(x.data)
    return make_result(y, (x,), lambda g: (g * y * (1 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: (g * (1 - y * y),))


ACTIVATIONS = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def activation_apply(x: Tensor, kind: str) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}") from None
    return fn(x)


def same_pad_amounts(size: int, k: int, s: int) -> tuple[int, int]:
    """(before, after) zero pad used by "same" mode for one axis."""
    _, a, b = _pads(size, k, s, "same")
    return a, b


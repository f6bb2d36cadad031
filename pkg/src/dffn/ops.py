"""Differentiable primitives on NCHW tensors.

Each function computes its forward result with numpy and registers a
hand-written backward rule through :func:`dffn.tensor.record`.
Reductions (means, sums, weight gradients) accumulate in the working dtype;
``mean`` and ``sum`` to a scalar accumulate in float64 and cast back.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from dffn.tensor import ShapeError, Tensor, default_dtype, record

__all__ = [
    "as_tensor", "conv2d", "relu", "sigmoid", "add", "sub", "mul", "scale",
    "abs", "mean", "sum", "concat", "resample", "global_avg_pool", "pixel_filter",
    "elementwise",
]


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _check4(x: Tensor, what: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{what}: expected NCHW tensor, got shape {x.shape}")


# --------------------------------------------------------------------- conv


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(dcols: np.ndarray, shape_padded, kh, kw, stride, ho, wo) -> np.ndarray:
    n, c = shape_padded[:2]
    dcols = dcols.reshape(n, c, kh, kw, ho, wo)
    dxp = np.zeros(shape_padded, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2D cross-correlation with zero padding.

    Output extent is ``(H + 2*pad - kh) // stride + 1`` per spatial axis.
    """
    _check4(x, "conv2d")
    n, cin, h, w = x.shape
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d: weight must be [Cout,Cin,kh,kw], got {weight.shape}")
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels but weight expects {wcin} (weight {weight.shape}, input {x.shape})")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d: bad stride={stride} / pad={pad}")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(f"conv2d: input {h}x{w} with pad {pad} is smaller than kernel {kh}x{kw}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")

    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    w2 = weight.data.reshape(cout, cin * kh * kw)
    pointwise = kh == 1 and kw == 1 and stride == 1 and pad == 0
    if pointwise:
        cols = x.data.reshape(n, cin, h * w)
        xp_shape = None
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
        xp_shape = xp.shape
        cols = _im2col(xp, kh, kw, stride, ho, wo)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, cout, ho, wo)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(grads):
        g = grads[0].reshape(n, cout, ho * wo)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g)
            if pointwise:
                gx = dcols.reshape(x.shape)
            else:
                dxp = _col2im(dcols, xp_shape, kh, kw, stride, ho, wo)
                gx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
                gx = np.ascontiguousarray(gx)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return record("conv2d", inputs, [out], backward)[0]


# -------------------------------------------------------------- elementwise


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)
    return record("relu", (x,), [out], lambda g: (g[0] * mask,))[0]


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)
    return record("sigmoid", (x,), [out], lambda g: (g[0] * out * (1 - out),))[0]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} cannot be broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    out = a.data + b.data
    return record("add", (a, b), [out],
                  lambda g: (_unbroadcast(g[0], a.shape), _unbroadcast(g[0], b.shape)))[0]


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    out = a.data - b.data
    return record("sub", (a, b), [out],
                  lambda g: (_unbroadcast(g[0], a.shape), _unbroadcast(-g[0], b.shape)))[0]


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g[0] * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g[0] * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record("mul", (a, b), [out], backward)[0]


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return record("scale", (x,), [x.data * c], lambda g: (g[0] * c,))[0]


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    sign = np.sign(x.data)
    return record("abs", (x,), [np.abs(x.data)], lambda g: (g[0] * sign,))[0]


def mean(x: Tensor) -> Tensor:
    """Mean of every element, as a 0-d tensor."""
    n = x.data.size
    out = np.asarray(x.data.mean(dtype=np.float64), dtype=x.dtype)
    return record("mean", (x,), [out],
                  lambda g: (np.full(x.shape, g[0] / n, dtype=x.dtype),))[0]


def sum(x: Tensor) -> Tensor:  # noqa: A001
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype)
    return record("sum", (x,), [out], lambda g: (np.full(x.shape, g[0], dtype=x.dtype),))[0]


def concat(tensors, axis: int = 1) -> Tensor:
    """Stack along the channel axis; all other extents must agree."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} disagree off axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        index = [slice(None)] * g[0].ndim
        res = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[axis] = slice(lo, hi)
            res.append(np.ascontiguousarray(g[0][tuple(index)]))
        return res

    return record("concat", tensors, [out], backward)[0]


def elementwise(kind: str, *operands) -> Tensor:
    """Dispatch by name: relu, sigmoid, add, multiply, concat-channels."""
    table = {
        "relu": lambda: relu(*operands),
        "sigmoid": lambda: sigmoid(*operands),
        "add": lambda: add(*operands),
        "multiply": lambda: mul(*operands),
        "concat-channels": lambda: concat(operands, axis=1),
    }
    if kind not in table:
        raise ValueError(f"unknown elementwise kind {kind!r}; expected one of {sorted(table)}")
    return table[kind]()


# ---------------------------------------------------------------- resample


@lru_cache(maxsize=128)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the bilinear weights for output sample i (half-pixel centers)."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale_ = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale_ - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1 - frac
        m[i, hi] += frac
    m.setflags(write=False)
    return m


def resample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with half-pixel sample centers and edge clamping."""
    _check4(x, "resample")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resample: output extents must be >= 1, got {out_h}x{out_w}")
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return record("resample", (x,), [x.data.copy()], lambda g: (g[0],))[0]
    rh = _interp_matrix(h, out_h).astype(x.dtype)
    rw = _interp_matrix(w, out_w).astype(x.dtype)
    out = np.matmul(np.matmul(rh, x.data), rw.T)
    return record("resample", (x,), [out],
                  lambda g: (np.matmul(np.matmul(rh.T, g[0]), rw),))[0]


def global_avg_pool(x: Tensor) -> Tensor:
    _check4(x, "global_avg_pool")
    hw = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(x.dtype)
    return record("global_avg_pool", (x,), [out],
                  lambda g: (np.broadcast_to(g[0] / hw, x.shape).copy(),))[0]


# ------------------------------------------------------- per-pixel filtering


def pixel_filter(u: Tensor, kernels: Tensor, k: int) -> Tensor:
    """Filter every pixel of ``u`` with its own k x k kernel.

    ``kernels`` has shape (N, C*k*k, H, W); channel ``c*k*k + dy*k + dx``
    holds tap (dy, dx) of channel c. Borders are zero padded.
    """
    _check4(u, "pixel_filter")
    n, c, h, w = u.shape
    if kernels.shape != (n, c * k * k, h, w):
        raise ShapeError(f"pixel_filter: kernels {kernels.shape} != {(n, c * k * k, h, w)} for k={k}")
    r = k // 2
    up = np.pad(u.data, ((0, 0), (0, 0), (r, r), (r, r))) if r else u.data
    kern = kernels.data.reshape(n, c, k * k, h, w)
    out = np.zeros_like(u.data)
    for t in range(k * k):
        dy, dx = divmod(t, k)
        out += up[:, :, dy:dy + h, dx:dx + w] * kern[:, :, t]

    def backward(g):
        g = g[0]
        gu = gk = None
        if kernels.requires_grad:
            gk = np.empty_like(kern)
            for t in range(k * k):
                dy, dx = divmod(t, k)
                np.multiply(g, up[:, :, dy:dy + h, dx:dx + w], out=gk[:, :, t])
            gk = gk.reshape(kernels.shape)
        if u.requires_grad:
            gup = np.zeros_like(up)
            for t in range(k * k):
                dy, dx = divmod(t, k)
                gup[:, :, dy:dy + h, dx:dx + w] += g * kern[:, :, t]
            gu = np.ascontiguousarray(gup[:, :, r:r + h, r:r + w]) if r else gup
        return gu, gk

    return record("pixel_filter", (u, kernels), [out], backward)[0]


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=default_dtype()))

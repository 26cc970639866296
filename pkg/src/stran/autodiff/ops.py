"""Differentiable primitives.

Adjoints are expressed through other primitives in this module (conv2d,
its input- and weight-gradient companions, elementwise ops, reductions,
channel concat/slice, pixel shuffle, fixed linear maps), so the set is closed
under differentiation.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Function, ShapeError, Tensor


def _const(arr) -> Tensor:
    return Tensor(arr)


def _check_same(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------
class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, g):
        return g, g


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, g):
        return g, (scale(g, -1.0) if self.needs_input_grad[1] else None)


class Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, g):
        a, b = self.inputs
        ga = mul(g, b) if self.needs_input_grad[0] else None
        gb = mul(g, a) if self.needs_input_grad[1] else None
        return ga, gb


class Scale(Function):
    def forward(self, a):
        return a * np.asarray(self.s, dtype=a.dtype)

    def backward(self, g):
        return (scale(g, self.s),)


class AddScalar(Function):
    def forward(self, a):
        return a + np.asarray(self.s, dtype=a.dtype)

    def backward(self, g):
        return (g,)


class Abs(Function):
    def forward(self, a):
        self.sign = np.sign(a)
        return np.abs(a)

    def backward(self, g):
        return (mul(g, _const(self.sign)),)


class Pow(Function):
    def forward(self, a):
        return a ** self.p

    def backward(self, g):
        (a,) = self.inputs
        if self.p == 1:
            return (g,)
        return (mul(g, scale(power(a, self.p - 1), self.p)),)


class LeakyReLU(Function):
    def forward(self, a):
        return np.maximum(a, a * np.asarray(self.slope, a.dtype))

    def backward(self, g):
        a = self.inputs[0].data
        # the kink itself takes the positive branch
        mask = np.where(a < 0, np.asarray(self.slope, a.dtype), np.asarray(1, a.dtype))
        return (mul(g, _const(mask)),)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same("mul", a, b)
    return Mul.apply(a, b)


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    try:
        return {"add": add, "sub": sub, "mul": mul}[kind](a, b)
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None


def scale(a: Tensor, s: float) -> Tensor:
    return Scale.apply(a, s=float(s))


def add_scalar(a: Tensor, s: float) -> Tensor:
    return AddScalar.apply(a, s=float(s))


def absolute(a: Tensor) -> Tensor:
    return Abs.apply(a)


def power(a: Tensor, p: float) -> Tensor:
    return Pow.apply(a, p=p)


def square(a: Tensor) -> Tensor:
    return mul(a, a)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in [0, 1), got {slope}")
    return LeakyReLU.apply(a, slope=slope)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------
class Reduce(Function):
    """sum/mean over everything (scalar out) or over all but the batch axis."""

    def forward(self, a):
        self.in_shape = a.shape
        axes = tuple(range(1, a.ndim)) if self.per_sample else None
        count = a[0].size if self.per_sample else a.size
        out = a.sum(axis=axes)
        if self.kind == "mean":
            out = out / np.asarray(count, a.dtype)
        self.factor = 1.0 / count if self.kind == "mean" else 1.0
        return np.asarray(out, dtype=a.dtype)

    def backward(self, g):
        return (Broadcast.apply(g, shape=self.in_shape, per_sample=self.per_sample, factor=self.factor),)


class Broadcast(Function):
    """Adjoint of Reduce: spread a scalar (or per-sample vector) over ``shape``."""

    def forward(self, g):
        f = np.asarray(self.factor, g.dtype)
        if self.per_sample:
            g = g.reshape((-1,) + (1,) * (len(self.shape) - 1))
        return np.ascontiguousarray(np.broadcast_to(g * f, self.shape))

    def backward(self, u):
        out = Reduce.apply(u, kind="sum", per_sample=self.per_sample)
        return (scale(out, self.factor) if self.factor != 1.0 else out,)


def reduce(a: Tensor, kind: str = "sum", per_sample: bool = False) -> Tensor:
    if kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {kind!r}")
    if per_sample and a.ndim < 2:
        raise ShapeError("reduce", a.shape, (), "per-sample reduction needs a batch axis")
    return Reduce.apply(a, kind=kind, per_sample=per_sample)


class SampleNorm(Function):
    """Per-sample L2 norm over all non-batch axes; zero norm gets zero gradient.

    First-order only: the backward treats 1/norm as a constant.
    """

    def forward(self, a):
        n = a.shape[0]
        self.norm = np.sqrt((a.reshape(n, -1) ** 2).sum(axis=1))
        return self.norm

    def backward(self, g):
        (a,) = self.inputs
        inv = np.where(self.norm > 0, 1.0 / np.where(self.norm > 0, self.norm, 1.0), 0.0)
        coef = mul(g, _const(inv.astype(a.dtype)))
        return (mul(Broadcast.apply(coef, shape=a.shape, per_sample=True, factor=1.0), a),)


def sample_norm(a: Tensor) -> Tensor:
    return SampleNorm.apply(a)


# ---------------------------------------------------------------------------
# channel concat / slice
# ---------------------------------------------------------------------------
class Concat(Function):
    def forward(self, *parts):
        self.sizes = [p.shape[1] for p in parts]
        return np.concatenate(parts, axis=1)

    def backward(self, g):
        out, start = [], 0
        for need, size in zip(self.needs_input_grad, self.sizes):
            out.append(slice_channels(g, start, start + size) if need else None)
            start += size
        return out


class SliceChannels(Function):
    def forward(self, a):
        self.in_shape = a.shape
        return np.ascontiguousarray(a[:, self.start:self.stop])

    def backward(self, g):
        n, c, h, w = self.in_shape
        parts = []
        if self.start > 0:
            parts.append(_const(np.zeros((n, self.start, h, w), g.dtype)))
        parts.append(g)
        if self.stop < c:
            parts.append(_const(np.zeros((n, c - self.stop, h, w), g.dtype)))
        return (Concat.apply(*parts) if len(parts) > 1 else g,)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ValueError("concat_channels needs at least one part")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != 4 or (p.shape[0], p.shape[2], p.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError("concat_channels", ref, p.shape, "n, h, w must agree")
    if len(parts) == 1:
        return parts[0]
    return Concat.apply(*parts)


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError("slice_channels", a.shape, (start, stop))
    return SliceChannels.apply(a, start=start, stop=stop)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------
def _out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    """Columns laid out (c*kh*kw, n*oh*ow) so the copy keeps rows contiguous."""
    n, c, h, w = x.shape
    oh, ow = _out_size(h, kh, stride, padding), _out_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((c, kh, kw, n, oh, ow), dtype=x.dtype)
    xt = x.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride]
    return cols.reshape(c * kh * kw, n * oh * ow), oh, ow


def _to_nchw(mat: np.ndarray, n: int, oh: int, ow: int) -> np.ndarray:
    c = mat.shape[0]
    if n == 1:
        return mat.reshape(1, c, oh, ow)
    return np.ascontiguousarray(mat.reshape(c, n, oh, ow).transpose(1, 0, 2, 3))


def _to_cmat(g: np.ndarray) -> np.ndarray:
    n, c, h, w = g.shape
    if n == 1:
        return g.reshape(c, h * w)
    return g.transpose(1, 0, 2, 3).reshape(c, n * h * w)


def _conv_forward(x, w, stride, padding):
    n = x.shape[0]
    oc, ic, kh, kw = w.shape
    cols, oh, ow = _im2col(x, kh, kw, stride, padding)
    return _to_nchw(w.reshape(oc, -1) @ cols, n, oh, ow)


def _conv_input_grad(g, w, stride, padding, in_hw):
    n, oc, oh, ow = g.shape
    _, ic, kh, kw = w.shape
    h, wd = in_hw
    dcols = (w.reshape(oc, -1).T @ _to_cmat(g)).reshape(ic, kh, kw, n, oh, ow)
    hp, wp = h + 2 * padding, wd + 2 * padding
    dxp = np.zeros((ic, n, hp, wp), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride] += dcols[:, i, j]
    dxp = dxp[:, :, padding : padding + h, padding : padding + wd]
    return np.ascontiguousarray(dxp.transpose(1, 0, 2, 3))


def _conv_weight_grad(x, g, stride, padding, kernel):
    oc = g.shape[1]
    kh, kw = kernel
    cols, _, _ = _im2col(x, kh, kw, stride, padding)
    return (_to_cmat(g) @ cols.T).reshape(oc, x.shape[1], kh, kw)


class Conv2d(Function):
    def forward(self, x, w):
        return _conv_forward(x, w, self.stride, self.padding)

    def backward(self, g):
        x, w = self.inputs
        gx = gw = None
        if self.needs_input_grad[0]:
            gx = ConvInputGrad.apply(g, w, stride=self.stride, padding=self.padding, in_hw=x.shape[2:])
        if self.needs_input_grad[1]:
            gw = ConvWeightGrad.apply(x, g, stride=self.stride, padding=self.padding, kernel=w.shape[2:])
        return gx, gw


class ConvInputGrad(Function):
    """Transposed convolution: the adjoint of Conv2d with respect to its input."""

    def forward(self, g, w):
        return _conv_input_grad(g, w, self.stride, self.padding, self.in_hw)

    def backward(self, u):
        g, w = self.inputs
        gg = gw = None
        if self.needs_input_grad[0]:
            gg = Conv2d.apply(u, w, stride=self.stride, padding=self.padding)
        if self.needs_input_grad[1]:
            gw = ConvWeightGrad.apply(u, g, stride=self.stride, padding=self.padding, kernel=w.shape[2:])
        return gg, gw


class ConvWeightGrad(Function):
    """Adjoint of Conv2d with respect to its weight (bilinear in x and g)."""

    def forward(self, x, g):
        return _conv_weight_grad(x, g, self.stride, self.padding, self.kernel)

    def backward(self, u):
        x, g = self.inputs
        gx = gg = None
        if self.needs_input_grad[0]:
            gx = ConvInputGrad.apply(g, u, stride=self.stride, padding=self.padding, in_hw=x.shape[2:])
        if self.needs_input_grad[1]:
            gg = Conv2d.apply(x, u, stride=self.stride, padding=self.padding)
        return gx, gg


class BiasAdd(Function):
    def forward(self, x, b):
        return x + b.reshape(1, -1, 1, 1)

    def backward(self, g):
        gb = ChannelSum.apply(g) if self.needs_input_grad[1] else None
        return g, gb


class ChannelSum(Function):
    def forward(self, g):
        self.in_shape = g.shape
        return g.sum(axis=(0, 2, 3))

    def backward(self, u):
        zeros = _const(np.zeros(self.in_shape, dtype=u.dtype))
        return (BiasAdd.apply(zeros, u),)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d", x.shape, weight.shape, "expected NCHW input and OIHW weight")
    oc, ic, kh, kw = weight.shape
    if x.shape[1] != ic:
        raise ShapeError("conv2d", x.shape, weight.shape, "input channels differ from weight in-channels")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d", x.shape, weight.shape, "kernel sizes must be odd")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    if _out_size(x.shape[2], kh, stride, padding) < 1 or _out_size(x.shape[3], kw, stride, padding) < 1:
        raise ShapeError("conv2d", x.shape, weight.shape, "kernel larger than padded input")
    out = Conv2d.apply(x, weight, stride=stride, padding=padding)
    if bias is not None:
        if bias.shape != (oc,):
            raise ShapeError("conv2d", weight.shape, bias.shape, "bias must have one entry per output channel")
        out = BiasAdd.apply(out, bias)
    return out


# ---------------------------------------------------------------------------
# pixel shuffle
# ---------------------------------------------------------------------------
def _shuffle(x, r):
    n, c, h, w = x.shape
    oc = c // (r * r)
    return x.reshape(n, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, oc, h * r, w * r)


def _unshuffle(x, r):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)


class PixelShuffle(Function):
    def forward(self, x):
        return np.ascontiguousarray(_shuffle(x, self.r))

    def backward(self, g):
        return (PixelUnshuffle.apply(g, r=self.r),)


class PixelUnshuffle(Function):
    def forward(self, x):
        return np.ascontiguousarray(_unshuffle(x, self.r))

    def backward(self, g):
        return (PixelShuffle.apply(g, r=self.r),)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    if x.ndim != 4 or r < 1 or x.shape[1] % (r * r):
        raise ShapeError("pixel_shuffle", x.shape, (r,), "channels must be divisible by r^2")
    return x if r == 1 else PixelShuffle.apply(x, r=r)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    if x.ndim != 4 or r < 1 or x.shape[2] % r or x.shape[3] % r:
        raise ShapeError("pixel_unshuffle", x.shape, (r,), "spatial dims must be divisible by r")
    return x if r == 1 else PixelUnshuffle.apply(x, r=r)


# ---------------------------------------------------------------------------
# fixed linear spatial maps
# ---------------------------------------------------------------------------
class SeparableMap(Function):
    """y = Mh @ x @ Mw^T over the two spatial axes, for fixed matrices."""

    def forward(self, x):
        mh = self.mh.astype(x.dtype, copy=False)
        mw = self.mw.astype(x.dtype, copy=False)
        return np.ascontiguousarray(np.matmul(mh, np.matmul(x, mw.T)))

    def backward(self, g):
        return (SeparableMap.apply(g, mh=self.mh.T, mw=self.mw.T),)


def separable_map(x: Tensor, mh: np.ndarray, mw: np.ndarray) -> Tensor:
    if x.ndim != 4 or mh.shape[1] != x.shape[2] or mw.shape[1] != x.shape[3]:
        raise ShapeError("separable_map", x.shape, (mh.shape, mw.shape))
    return SeparableMap.apply(x, mh=mh, mw=mw)


class BlockMap(Function):
    """Per-sample sparse linear map acting on r x r spatial blocks.

    ``mats[i]`` has shape (out_cells, in_cells); cells index the block grid of
    sample i row-major.  Every channel and every pixel inside a block uses the
    same coefficients.
    """

    def forward(self, x):
        n, c, h, w = x.shape
        r = self.r
        hb, wb = h // r, w // r
        oh, ow = self.out_grid
        out = np.empty((n, c, oh * r, ow * r), dtype=x.dtype)
        for i, m in enumerate(self.mats):
            cells = x[i].reshape(c, hb, r, wb, r).transpose(1, 3, 0, 2, 4).reshape(hb * wb, c * r * r)
            res = np.asarray(m @ cells, dtype=x.dtype)
            out[i] = res.reshape(oh, ow, c, r, r).transpose(2, 0, 3, 1, 4).reshape(c, oh * r, ow * r)
        return out

    def backward(self, g):
        (x,) = self.inputs
        in_grid = (x.shape[2] // self.r, x.shape[3] // self.r)
        return (BlockMap.apply(g, mats=[m.T.tocsr() for m in self.mats], r=self.r, out_grid=in_grid),)


def block_map(x: Tensor, mats, r: int, out_grid) -> Tensor:
    if x.ndim != 4 or x.shape[2] % r or x.shape[3] % r or len(mats) != x.shape[0]:
        raise ShapeError("block_map", x.shape, (r, len(mats)))
    cells = (x.shape[2] // r) * (x.shape[3] // r)
    for m in mats:
        if m.shape != (out_grid[0] * out_grid[1], cells):
            raise ShapeError("block_map", m.shape, (out_grid[0] * out_grid[1], cells), "matrix/grid mismatch")
    return BlockMap.apply(x, mats=list(mats), r=r, out_grid=tuple(out_grid))

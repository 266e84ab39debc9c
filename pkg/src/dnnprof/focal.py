"""Sigmoid focal loss: reference, closed-form and simplified kernels.

Three forward paths compute the same loss:

* ``focal_forward_reference`` follows the torchvision op sequence
  (sigmoid, BCE-with-logits, p_t, modulating factor, alpha weighting), one
  full-buffer pass per op.
* ``focal_forward_general`` evaluates the closed form for real-valued targets,
  ``w(y) * b(x, y)**gamma * (softplus(x) - x*y)``.
* ``focal_forward_simplified`` evaluates the binary-target form
  ``b(x, y)**gamma * (w(y) * softplus(x) - alpha*x*y)``.

Here ``w(y) = alpha*(2y - 1) - y + 1`` and
``b(x, y) = (-e^x y + e^x + y) / (e^x + 1) = y*sigmoid(-x) + (1 - y)*sigmoid(x)``.
The closed forms are evaluated through softplus and sigmoid so nothing
overflows for large ``|x|``.

Every kernel runs as a sequence of *stages*. A stage is one blockwise pass
over the buffer; intermediates inside a stage live only for the current
block. ``KernelStats`` records how many passes and full-size buffers a call
used.

A negative ``alpha`` disables class weighting, as in torchvision: ``w(y) = 1``
and the ``alpha*x*y`` term becomes ``x*y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .bf16 import is_bf16, round_bf16

PRECISIONS = ("f64", "f32", "bf16_emulated")
REDUCTIONS = ("none", "mean", "sum")
BLOCK = 1 << 15


class ShapeError(ValueError):
    pass


class EmptyReduction(ValueError):
    pass


class BinaryTargetRequired(ValueError):
    pass


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0
    reduction: str = "none"

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")

    @property
    def class_weights(self) -> tuple[float, float]:
        """(positive, negative) class weights."""
        if self.alpha < 0:
            return 1.0, 1.0
        return self.alpha, 1.0 - self.alpha


@dataclass(frozen=True, eq=False)
class ElementBuffer:
    """Dense buffer with a shape and an arithmetic precision mode."""

    values: np.ndarray
    precision: str = "f64"

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {PRECISIONS}")
        dtype = np.float64 if self.precision == "f64" else np.float32
        arr = np.array(self.values, dtype=dtype)
        if self.precision == "bf16_emulated":
            arr = round_bf16(arr) if arr.ndim else np.asarray(round_bf16(arr))
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_flat(cls, shape, values, precision: str = "f64") -> "ElementBuffer":
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ShapeError("shape entries must be positive")
        flat = np.asarray(values, dtype=np.float64).reshape(-1)
        if flat.size != math.prod(shape):
            raise ShapeError(f"{flat.size} values do not fill shape {shape}")
        return cls(flat.reshape(shape), precision)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def numel(self) -> int:
        return self.values.size

    def flat(self) -> list[float]:
        return [float(v) for v in self.values.reshape(-1)]

    def is_representable(self) -> bool:
        if self.precision != "bf16_emulated":
            return True
        return bool(np.all(is_bf16(self.values)))


@dataclass
class KernelStats:
    passes: int = 0
    buffers: int = 0


class _Arith:
    """Elementwise primitives at a given precision.

    In ``bf16_emulated`` mode every primitive rounds its result to bf16,
    modelling a datapath that stores each intermediate in bf16.
    """

    def __init__(self, precision: str):
        self.precision = precision
        self.dtype = np.float64 if precision == "f64" else np.float32
        self._bf16 = precision == "bf16_emulated"

    def r(self, v):
        v = np.asarray(v, dtype=self.dtype)
        return round_bf16(v) if self._bf16 else v

    def c(self, s: float):
        """A scalar constant at working precision."""
        return self.r(s)

    def sigmoid(self, v):
        return self.r(expit(v))

    def softplus(self, v):
        return self.r(np.logaddexp(self.dtype(0), v))

    def bce_logits(self, x, y):
        # max(x, 0) - x*y + log1p(exp(-|x|)), one fused kernel
        return self.r(np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x))))

    def mul(self, a, b):
        return self.r(a * b)

    def add(self, a, b):
        return self.r(a + b)

    def sub(self, a, b):
        return self.r(a - b)

    def rsub(self, s, a):
        return self.r(self.c(s) - a)

    def scale(self, a, s):
        return self.r(self.c(s) * a)

    def affine(self, a, s, t):
        return self.r(self.c(s) * a + self.c(t))

    def addcmul(self, u, v, w, s):
        return self.r(u + self.c(s) * v * w)

    def pow(self, a, g):
        # 0**0 == 1 keeps gamma=0 continuous with plain cross-entropy
        return self.r(np.power(a, self.c(g)))

    def div(self, a, s):
        return self.r(a / self.c(s))


class _Kernel:
    def __init__(self, ar: _Arith, stats: Optional[KernelStats]):
        self.ar = ar
        self.stats = stats if stats is not None else KernelStats()

    def stage(self, fn: Callable, *arrays: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
        """One pass over the buffer, applying ``fn`` block by block."""
        n = arrays[0].size
        if out is None:
            out = np.empty(n, dtype=self.ar.dtype)
            self.stats.buffers += 1
        self.stats.passes += 1
        for lo in range(0, n, BLOCK):
            hi = min(lo + BLOCK, n)
            out[lo:hi] = fn(*(a[lo:hi] for a in arrays))
        return out


def _as_buffer(v, precision: Optional[str] = None) -> ElementBuffer:
    if isinstance(v, ElementBuffer):
        if precision is None or v.precision == precision:
            return v
        return ElementBuffer(v.values, precision)
    return ElementBuffer(np.asarray(v, dtype=np.float64), precision or "f64")


def _prepare(x, y):
    xb = _as_buffer(x)
    yb = _as_buffer(y, xb.precision)
    if xb.shape != yb.shape:
        raise ShapeError(f"input shape {xb.shape} != target shape {yb.shape}")
    ar = _Arith(xb.precision)
    return xb, ar, xb.values.reshape(-1), yb.values.reshape(-1)


def _check_unit_interval(y: np.ndarray) -> None:
    if y.size and not (np.all(y >= 0) and np.all(y <= 1)):
        raise ValueError("targets must lie in [0, 1]")


def _binary_targets(y: np.ndarray, tol: float) -> np.ndarray:
    if tol > 0:
        hi = np.abs(y - 1) <= tol
        lo = np.abs(y) <= tol
        if not np.all(hi | lo):
            raise BinaryTargetRequired("targets must be 0 or 1")
        return np.where(hi, 1, 0).astype(y.dtype)
    if not np.all((y == 0) | (y == 1)):
        raise BinaryTargetRequired("targets must be exactly 0 or 1")
    return y


def pairwise_sum(v: np.ndarray, ar: Optional[_Arith] = None) -> float:
    """Sum in a fixed pairwise tree; rounds each level at the working precision."""
    ar = ar or _Arith("f64")
    a = np.asarray(v, dtype=ar.dtype).reshape(-1)
    if a.size == 0:
        return 0.0
    while a.size > 1:
        tail = a[-1:] if a.size % 2 else a[:0]
        body = a[: a.size - tail.size]
        a = np.concatenate([ar.add(body[0::2], body[1::2]), tail])
    return float(a[0])


def _reduce(k: _Kernel, loss: np.ndarray, xb: ElementBuffer, reduction: str):
    if reduction == "none":
        return ElementBuffer(loss.reshape(xb.shape), xb.precision)
    if reduction == "mean" and loss.size == 0:
        raise EmptyReduction("mean over an empty buffer")
    k.stats.passes += 1
    total = pairwise_sum(loss, k.ar)
    if reduction == "sum":
        return total
    return float(k.ar.div(total, loss.size))


def _base(ar: _Arith, x, y):
    # (-e^x y + e^x + y) / (e^x + 1) without forming e^x
    return ar.add(ar.mul(y, ar.sigmoid(-x)), ar.mul(ar.rsub(1, y), ar.sigmoid(x)))


def focal_forward_reference(x, y, params: FocalParams = FocalParams(), stats: Optional[KernelStats] = None):
    """Focal loss computed op by op like the torchvision implementation."""
    xb, ar, xv, yv = _prepare(x, y)
    _check_unit_interval(yv)
    k = _Kernel(ar, stats)
    p = k.stage(ar.sigmoid, xv)
    ce = k.stage(ar.bce_logits, xv, yv)
    p_t = k.stage(ar.mul, p, yv)
    q = k.stage(lambda a: ar.rsub(1, a), p)
    r = k.stage(lambda a: ar.rsub(1, a), yv)
    q = k.stage(ar.mul, q, r)
    p_t = k.stage(ar.add, p_t, q)
    m = k.stage(lambda a: ar.rsub(1, a), p_t)
    m = k.stage(lambda a: ar.pow(a, params.gamma), m)
    loss = k.stage(ar.mul, ce, m)
    if params.alpha >= 0:
        alpha_t = k.stage(lambda a: ar.scale(a, params.alpha), yv)
        r = k.stage(lambda a: ar.rsub(1, a), yv)
        r = k.stage(lambda a: ar.scale(a, 1 - params.alpha), r)
        alpha_t = k.stage(ar.add, alpha_t, r)
        loss = k.stage(ar.mul, alpha_t, loss)
    return _reduce(k, loss, xb, params.reduction)


def focal_forward_general(x, y, params: FocalParams = FocalParams(), stats: Optional[KernelStats] = None):
    """Closed form valid for real-valued targets in [0, 1]."""
    xb, ar, xv, yv = _prepare(x, y)
    _check_unit_interval(yv)
    k = _Kernel(ar, stats)
    a_pos, a_neg = params.class_weights
    g = params.gamma

    def weighted_ce(xs, ys):
        ce = ar.addcmul(ar.softplus(xs), xs, ys, -1.0)
        return ar.mul(ar.affine(ys, a_pos - a_neg, a_neg), ce)

    out = k.stage(weighted_ce, xv, yv)
    out = k.stage(lambda o, xs, ys: ar.mul(o, ar.pow(_base(ar, xs, ys), g)), out, xv, yv, out=out)
    return _reduce(k, out, xb, params.reduction)


def focal_forward_simplified(
    x,
    y,
    params: FocalParams = FocalParams(),
    stats: Optional[KernelStats] = None,
    binary_tol: float = 0.0,
):
    """Binary-target closed form; two passes, one full-size buffer."""
    xb, ar, xv, yv = _prepare(x, y)
    yv = _binary_targets(yv, binary_tol)
    k = _Kernel(ar, stats)
    a_pos, a_neg = params.class_weights
    g = params.gamma

    def linear(xs, ys):
        # w(y)*softplus(x) - alpha*x*y
        return ar.addcmul(ar.mul(ar.affine(ys, a_pos - a_neg, a_neg), ar.softplus(xs)), xs, ys, -a_pos)

    out = k.stage(linear, xv, yv)
    out = k.stage(lambda o, xs, ys: ar.mul(o, ar.pow(_base(ar, xs, ys), g)), out, xv, yv, out=out)
    return _reduce(k, out, xb, params.reduction)


def _grad_scale(grad, xb: ElementBuffer, ar: _Arith, reduction: str) -> np.ndarray:
    if reduction == "none":
        g = _as_buffer(grad, xb.precision)
        if g.shape != xb.shape:
            raise ShapeError(f"grad shape {g.shape} != input shape {xb.shape}")
        return g.values.reshape(-1)
    if isinstance(grad, ElementBuffer):
        if grad.numel != 1:
            raise ShapeError("reduced loss takes a scalar upstream gradient")
        grad = float(grad.values.reshape(-1)[0])
    else:
        arr = np.asarray(grad, dtype=np.float64)
        if arr.size != 1:
            raise ShapeError("reduced loss takes a scalar upstream gradient")
        grad = float(arr.reshape(-1)[0])
    return np.full(xb.numel, ar.c(grad), dtype=ar.dtype)


def focal_backward(
    grad,
    x,
    y,
    params: FocalParams = FocalParams(),
    stats: Optional[KernelStats] = None,
    binary_tol: float = 0.0,
) -> ElementBuffer:
    """Analytic gradient of the focal loss with respect to the logits.

    The explicit kernel is

        -(e^x+1)^(-g-1) * (y + (1-y) e^x)^(g-1)
          * [-a g x y e^x + g (y+a-1) e^x log(e^x+1) + a y + (a-1)(1-y) e^(2x)] * grad

    For binary ``y`` the two branches reduce to

        y = 1:  -a_pos * s(-x)^g * (g s(x) softplus(-x) + s(-x))
        y = 0:   a_neg * s(x)^g  * (g s(-x) softplus(x) + s(x))

    with ``s`` the logistic function, which is what is evaluated here: the
    powers of ``e^x + 1`` fold into ``s`` and ``e^(2x)`` is never formed.
    Mean reduction divides by the element count.
    """
    xb, ar, xv, yv = _prepare(x, y)
    yv = _binary_targets(yv, binary_tol)
    gv = _grad_scale(grad, xb, ar, params.reduction)
    k = _Kernel(ar, stats)
    a_pos, a_neg = params.class_weights
    g = params.gamma
    n = xb.numel

    def kernel(xs, ys, gs):
        s_pos, s_neg = ar.sigmoid(xs), ar.sigmoid(-xs)
        pos = ar.mul(ar.pow(s_neg, g), ar.addcmul(s_neg, s_pos, ar.softplus(-xs), g))
        pos = ar.scale(pos, -a_pos)
        neg = ar.mul(ar.pow(s_pos, g), ar.addcmul(s_pos, s_neg, ar.softplus(xs), g))
        neg = ar.scale(neg, a_neg)
        d = ar.add(ar.mul(ys, pos), ar.mul(ar.rsub(1, ys), neg))
        d = ar.mul(d, gs)
        if params.reduction == "mean":
            d = ar.div(d, n)
        return d

    out = k.stage(kernel, xv, yv, gv)
    return ElementBuffer(out.reshape(xb.shape), xb.precision)


def focal_backward_numeric(x, y, params: FocalParams = FocalParams(), h: float = 1e-5) -> ElementBuffer:
    """Central-difference gradient of the reference forward, always at f64."""
    if not h > 0:
        raise ValueError("step h must be positive")
    xb = _as_buffer(x)
    xv = np.asarray(xb.values, dtype=np.float64)
    yv = np.asarray(_as_buffer(y).values, dtype=np.float64)
    if xv.shape != yv.shape:
        raise ShapeError(f"input shape {xv.shape} != target shape {yv.shape}")
    elementwise = FocalParams(params.alpha, params.gamma, "none")
    # elements are independent, so one shifted evaluation covers all of them
    f_hi = focal_forward_reference(xv + h, yv, elementwise).values
    f_lo = focal_forward_reference(xv - h, yv, elementwise).values
    d = (f_hi - f_lo) / (2 * h)
    if params.reduction == "mean":
        d = d / max(xv.size, 1)
    return ElementBuffer(d, "f64")


@dataclass(frozen=True)
class PrecisionDeviation:
    loss_f64: float
    loss_bf16: float

    @property
    def abs_error(self) -> float:
        return abs(self.loss_bf16 - self.loss_f64)

    @property
    def rel_error(self) -> float:
        return self.abs_error / abs(self.loss_f64) if self.loss_f64 else math.inf if self.abs_error else 0.0


def bf16_deviation(
    x,
    y,
    params: FocalParams = FocalParams(reduction="mean"),
    kernel: Callable = focal_forward_reference,
) -> PrecisionDeviation:
    """How far the bf16-emulated loss lands from the f64 loss on the same data."""
    if params.reduction == "none":
        params = FocalParams(params.alpha, params.gamma, "sum")
    xv = np.asarray(_as_buffer(x).values, dtype=np.float64)
    yv = np.asarray(_as_buffer(y).values, dtype=np.float64)
    ref = kernel(ElementBuffer(xv, "f64"), yv, params)
    low = kernel(ElementBuffer(xv, "bf16_emulated"), yv, params)
    return PrecisionDeviation(float(ref), float(low))



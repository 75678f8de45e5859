"""Reverse-mode automatic differentiation over numpy arrays.

Small set of primitives with hand-written adjoints; everything else
(softmax, layer norm, pooling, normalization, GELU) is composed from them
so a finite-difference check validates the whole graph. Values are stored
as float64; any op producing NaN/Inf raises instead of propagating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

ArrayLike = "np.ndarray | float | int | Sequence"


class NumericError(RuntimeError):
    """A numeric operation produced NaN/Inf or was called on degenerate input."""


def _check_finite(data: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by {op}")
    return data


class Tensor:
    """A node in the computation graph: float64 data plus backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable parameter."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar (constants are promoted; see ensure_tensor).
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def ensure_tensor(x: "Tensor | ArrayLike") -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data: ArrayLike) -> Tensor:
    return Tensor(data, requires_grad=True)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(a, b, fwd, back_a, back_b, name: str) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out_data = _check_finite(fwd(a.data, b.data), name)
    track = a.requires_grad or b.requires_grad or a._parents or b._parents

    def backward(g: np.ndarray) -> None:
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(back_a(g, a.data, b.data), a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(back_b(g, a.data, b.data), b.shape))

    return Tensor(out_data, _parents=(a, b) if track else (), _backward=backward if track else None)


def _unary(a, fwd, back, name: str) -> Tensor:
    a = ensure_tensor(a)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out_data = _check_finite(fwd(a.data), name)
    track = a.requires_grad or a._parents

    def backward(g: np.ndarray) -> None:
        a._accumulate(back(g, a.data, out_data))

    return Tensor(out_data, _parents=(a,) if track else (), _backward=backward if track else None)


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def div(a, b) -> Tensor:
    return _binary(
        a, b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
        "div",
    )


def neg(a) -> Tensor:
    return _unary(a, lambda x: -x, lambda g, x, y: -g, "neg")


def exp(a) -> Tensor:
    return _unary(a, np.exp, lambda g, x, y: g * y, "exp")


def log(a) -> Tensor:
    return _unary(a, np.log, lambda g, x, y: g / x, "log")


def sqrt(a) -> Tensor:
    return _unary(a, np.sqrt, lambda g, x, y: g / (2.0 * y), "sqrt")


def tanh(a) -> Tensor:
    return _unary(a, np.tanh, lambda g, x, y: g * (1.0 - y * y), "tanh")


def square(a) -> Tensor:
    a = ensure_tensor(a)
    return mul(a, a)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching semantics on stacked leading axes."""
    a, b = ensure_tensor(a), ensure_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects tensors with at least 2 axes")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner extents disagree: {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = _check_finite(np.matmul(a.data, b.data), "matmul")
    track = a.requires_grad or b.requires_grad or a._parents or b._parents

    def backward(g: np.ndarray) -> None:
        if a.requires_grad or a._parents:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad or b._parents:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return Tensor(out_data, _parents=(a, b) if track else (), _backward=backward if track else None)


def tsum(a, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    a = ensure_tensor(a)
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = a.data.sum(axis=axis, keepdims=keepdims)
    _check_finite(np.asarray(out_data), "sum")
    track = a.requires_grad or a._parents

    def backward(g: np.ndarray) -> None:
        gg = np.asarray(g, dtype=np.float64)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(a2 % a.ndim for a2 in axes):
                gg = np.expand_dims(gg, ax)
        a._accumulate(np.broadcast_to(gg, a.shape))

    return Tensor(out_data, _parents=(a,) if track else (), _backward=backward if track else None)


def tmean(a, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    a = ensure_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = ensure_tensor(a)
    out_data = a.data.reshape(shape)
    track = a.requires_grad or a._parents

    def backward(g: np.ndarray) -> None:
        a._accumulate(np.asarray(g).reshape(a.shape))

    return Tensor(out_data, _parents=(a,) if track else (), _backward=backward if track else None)


def transpose(a, axes: tuple[int, ...]) -> Tensor:
    a = ensure_tensor(a)
    out_data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))
    track = a.requires_grad or a._parents

    def backward(g: np.ndarray) -> None:
        a._accumulate(np.transpose(np.asarray(g), inverse))

    return Tensor(out_data, _parents=(a,) if track else (), _backward=backward if track else None)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup table[ids]; backward scatter-adds into the table."""
    table = ensure_tensor(table)
    ids = np.asarray(ids)
    out_data = table.data[ids]
    track = table.requires_grad or table._parents

    def backward(g: np.ndarray) -> None:
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, np.asarray(g))
        table._accumulate(gt)

    return Tensor(out_data, _parents=(table,) if track else (), _backward=backward if track else None)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the mask is drawn once and reused in backward."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    a = ensure_tensor(a)
    keep = (rng.random(a.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return mul(a, keep)


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    parts = [ensure_tensor(p) for p in parts]
    out_data = np.stack([p.data for p in parts], axis=0)
    track = any(p.requires_grad or p._parents for p in parts)

    def backward(g: np.ndarray) -> None:
        for i, p in enumerate(parts):
            if p.requires_grad or p._parents:
                p._accumulate(np.asarray(g)[i])

    return Tensor(out_data, _parents=tuple(parts) if track else (), _backward=backward if track else None)


# ---------------------------------------------------------------------------
# Composite operations
# ---------------------------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU activation, tanh approximation."""
    inner = mul(add(x, mul(mul(square(x), x), 0.044715)), _GELU_C)
    return mul(mul(x, add(tanh(inner), 1.0)), 0.5)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the (detached) row max."""
    x = ensure_tensor(x)
    shift = np.max(x.data, axis=-1, keepdims=True)
    e = exp(sub(x, shift))
    return div(e, tsum(e, axis=-1, keepdims=True))


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then apply gain and shift."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    d = ensure_tensor(x).shape[-1]
    if d < 1:
        raise ValueError("layer_norm needs a non-empty last axis")
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(square(centered), axis=-1, keepdims=True)
    normalized = div(centered, sqrt(add(var, eps)))
    return add(mul(normalized, gain), shift)


def mean_pool(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over the sequence axis (second-to-last) restricted to unmasked rows.

    mask is a boolean array matching x's leading shape (..., L); every
    row group must contain at least one unmasked position.
    """
    x = ensure_tensor(x)
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != x.shape[:-1]:
        raise ValueError(f"mask shape {m.shape} does not match sequence shape {x.shape[:-1]}")
    counts = m.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise NumericError("mean_pool over fully masked sequence")
    summed = tsum(mul(x, m[..., None]), axis=-2)
    return div(summed, counts)


def l2_normalize(v: Tensor, axis: int = -1) -> Tensor:
    """Scale to unit Euclidean norm along `axis`; zero input is an error."""
    v = ensure_tensor(v)
    with np.errstate(over="ignore"):
        norms = np.sqrt(np.sum(v.data * v.data, axis=axis, keepdims=True))
    if np.any(norms == 0.0):
        raise NumericError("l2_normalize of a zero vector")
    n = sqrt(tsum(square(v), axis=axis, keepdims=True))
    return div(v, n)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GradCheckFailure:
    param_index: int
    coordinate: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float = 0.0
    checked: int = 0
    failures: list[GradCheckFailure] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def check_gradients(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-4,
    tol: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic gradients of scalar f(params) with central differences.

    A coordinate fails when |analytic - numeric| / max(1, |numeric|) > tol.
    The report lists every failing coordinate rather than raising.
    """
    for p in params:
        p.zero_grad()
    loss = f(params)
    loss.backward()
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    report = GradCheckReport()
    for pi, p in enumerate(params):
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        for ci in range(flat.size):
            orig = flat[ci]
            flat[ci] = orig + h
            f_plus = float(f(params).data)
            flat[ci] = orig - h
            f_minus = float(f(params).data)
            flat[ci] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = float(grads[pi].reshape(-1)[ci])
            rel = abs(analytic - numeric) / max(1.0, abs(numeric))
            report.checked += 1
            report.max_rel_error = max(report.max_rel_error, rel)
            if rel > tol:
                coord = np.unravel_index(ci, p.shape) if p.shape else ()
                report.failures.append(
                    GradCheckFailure(pi, tuple(int(c) for c in coord), analytic, numeric, rel)
                )
    return report


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()

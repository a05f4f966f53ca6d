"""Dense float64 tensors with tape-based reverse-mode differentiation.

Each operation computes its forward result eagerly and records a backward
rule; ``Tensor.backward`` replays the tape in reverse topological order.
Gradients only accumulate into tensors with ``requires_grad`` set, so frozen
inputs (view features, prompt features) never grow grad buffers. The op set
is deliberately the minimum the encoder and losses need: no broadcasting
beyond row-wise bias/affine, 1-D and 2-D operands only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, NumericError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        # Grad buffers are shared by reference and never mutated in place;
        # further contributions always allocate a fresh sum.
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor (scalar unless grad is given)."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    f"backward without an explicit gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...],
             backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports (P,Q)@(Q,R) and the mat-vec case (P,Q)@(Q,)."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise DimensionError(f"matmul: inner extents disagree: {ad.shape} x {bd.shape}")

        def back(g: np.ndarray) -> None:
            a._accumulate(g @ bd.T)
            b._accumulate(ad.T @ g)
        return _from_op(ad @ bd, (a, b), back)
    if ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise DimensionError(f"matmul: inner extents disagree: {ad.shape} x {bd.shape}")

        def back(g: np.ndarray) -> None:
            a._accumulate(np.outer(g, bd))
            b._accumulate(ad.T @ g)
        return _from_op(ad @ bd, (a, b), back)
    raise DimensionError(f"matmul: unsupported ranks: {ad.shape} x {bd.shape}")


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two vectors, returns a scalar tensor."""
    ad, bd = a.data, b.data
    if ad.ndim != 1 or bd.ndim != 1 or ad.shape != bd.shape:
        raise DimensionError(f"dot: need equal-length vectors, got {ad.shape} and {bd.shape}")

    def back(g: np.ndarray) -> None:
        a._accumulate(g * bd)
        b._accumulate(g * ad)
    return _from_op(np.dot(ad, bd), (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also (T,D) + (D,) row-wise bias."""
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        def back(g: np.ndarray) -> None:
            a._accumulate(g)
            b._accumulate(g)
        return _from_op(ad + bd, (a, b), back)
    if ad.ndim == 2 and bd.ndim == 1 and ad.shape[1] == bd.shape[0]:
        def back(g: np.ndarray) -> None:
            a._accumulate(g)
            b._accumulate(g.sum(axis=0))
        return _from_op(ad + bd, (a, b), back)
    raise DimensionError(f"add: incompatible shapes {ad.shape} and {bd.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.shape != bd.shape:
        raise DimensionError(f"sub: incompatible shapes {ad.shape} and {bd.shape}")

    def back(g: np.ndarray) -> None:
        a._accumulate(g)
        b._accumulate(-g)
    return _from_op(ad - bd, (a, b), back)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def back(g: np.ndarray) -> None:
        a._accumulate(g * s)
    return _from_op(a.data * s, (a,), back)


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    def back(g: np.ndarray) -> None:
        a._accumulate(np.full_like(a.data, float(g)))
    return _from_op(np.asarray(a.data.sum()), (a,), back)


# ---------------------------------------------------------------------------
# structural ops (the encoder's sequence plumbing)
# ---------------------------------------------------------------------------

def prepend_row(row: Tensor, mat: Tensor) -> Tensor:
    rd, md = row.data, mat.data
    if rd.ndim != 1 or md.ndim != 2 or rd.shape[0] != md.shape[1]:
        raise DimensionError(f"prepend_row: got row {rd.shape} and matrix {md.shape}")

    def back(g: np.ndarray) -> None:
        row._accumulate(g[0])
        mat._accumulate(g[1:])
    return _from_op(np.vstack([rd[None, :], md]), (row, mat), back)


def take_row(mat: Tensor, index: int) -> Tensor:
    md = mat.data
    if md.ndim != 2:
        raise DimensionError(f"take_row: need a matrix, got {md.shape}")

    def back(g: np.ndarray) -> None:
        full = np.zeros_like(md)
        full[index] = g
        mat._accumulate(full)
    return _from_op(md[index].copy(), (mat,), back)


def take_rows(mat: Tensor, indices: Sequence[int]) -> Tensor:
    md = mat.data
    if md.ndim != 2:
        raise DimensionError(f"take_rows: need a matrix, got {md.shape}")
    idx = np.asarray(indices, dtype=np.int64)

    def back(g: np.ndarray) -> None:
        full = np.zeros_like(md)
        np.add.at(full, idx, g)
        mat._accumulate(full)
    return _from_op(md[idx].copy(), (mat,), back)


def stack_with_prefix(prefix: Tensor, mats: Sequence[np.ndarray]) -> tuple[Tensor, np.ndarray]:
    """Stack [prefix; mat] blocks for every matrix; returns rows and segment bounds.

    The matrices are frozen inputs; only the shared prefix row is
    differentiable (its gradient sums over all occurrences).
    """
    pd = prefix.data
    blocks = []
    bounds = [0]
    for m in mats:
        blocks.append(pd[None, :])
        blocks.append(m)
        bounds.append(bounds[-1] + 1 + m.shape[0])
    bounds_arr = np.asarray(bounds, dtype=np.int64)
    starts = bounds_arr[:-1]

    def back(g: np.ndarray) -> None:
        prefix._accumulate(g[starts].sum(axis=0))
    return _from_op(np.vstack(blocks), (prefix,), back), bounds_arr


def multihead_attention(q: Tensor, k: Tensor, v: Tensor, bounds: np.ndarray,
                        heads: int) -> Tensor:
    """Scaled dot-product attention per head, independently per row segment."""
    if q.data.shape != k.data.shape or q.data.shape != v.data.shape:
        raise DimensionError(
            f"attention operands disagree: {q.data.shape}, {k.data.shape}, {v.data.shape}")
    if q.data.shape[1] % heads != 0:
        raise DimensionError(
            f"head count {heads} must divide projection width {q.data.shape[1]}")
    qd = np.ascontiguousarray(q.data)
    kd = np.ascontiguousarray(k.data)
    vd = np.ascontiguousarray(v.data)
    out, cache = kernels.seg_attention(qd, kd, vd, bounds, heads)

    def back(g: np.ndarray) -> None:
        dq, dk, dv = kernels.seg_attention_bwd(
            np.ascontiguousarray(g), qd, kd, vd, cache, bounds, heads)
        q._accumulate(dq)
        k._accumulate(dk)
        v._accumulate(dv)
    return _from_op(out, (q, k, v), back)


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along an axis; rows of 2-D input hit the fast kernel."""
    xd = x.data
    if xd.ndim == 1:
        y2 = kernels.softmax_rows(np.ascontiguousarray(xd[None, :]))
        y = y2[0]

        def back(g: np.ndarray) -> None:
            x._accumulate(kernels.softmax_rows_bwd(y2, np.ascontiguousarray(g[None, :]))[0])
        return _from_op(y, (x,), back)
    if xd.ndim == 2 and axis in (-1, 1):
        y = kernels.softmax_rows(np.ascontiguousarray(xd))

        def back(g: np.ndarray) -> None:
            x._accumulate(kernels.softmax_rows_bwd(y, np.ascontiguousarray(g)))
        return _from_op(y, (x,), back)
    # general path for other axes
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g: np.ndarray) -> None:
        inner = (g * y).sum(axis=axis, keepdims=True)
        x._accumulate((g - inner) * y)
    return _from_op(y, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise zero-mean unit-variance normalization plus affine."""
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    xd = x.data
    if xd.ndim != 2 or gamma.data.ndim != 1 or gamma.data.shape[0] != xd.shape[1] \
            or beta.data.shape != gamma.data.shape:
        raise DimensionError(
            f"layer_norm: got x {xd.shape}, gamma {gamma.data.shape}, beta {beta.data.shape}")
    y, xhat, inv_std = kernels.layer_norm_rows(
        np.ascontiguousarray(xd), gamma.data, beta.data, float(eps))

    def back(g: np.ndarray) -> None:
        dx, dgamma, dbeta = kernels.layer_norm_rows_bwd(
            np.ascontiguousarray(g), xhat, inv_std, gamma.data)
        x._accumulate(dx)
        gamma._accumulate(dgamma)
        beta._accumulate(dbeta)
    return _from_op(y, (x, gamma, beta), back)


def gelu(x: Tensor) -> Tensor:
    """tanh-form GELU."""
    xd = np.ascontiguousarray(x.data if x.data.ndim == 2 else x.data[None, :])
    y = kernels.gelu(xd)

    def back(g: np.ndarray) -> None:
        g2 = np.ascontiguousarray(g if g.ndim == 2 else g[None, :])
        dx = kernels.gelu_bwd(xd, g2)
        x._accumulate(dx if x.data.ndim == 2 else dx[0])
    return _from_op(y if x.data.ndim == 2 else y[0], (x,), back)


def cross_entropy_rows(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Per-row softmax cross-entropy of a (B, N) logit matrix; returns (B,)."""
    ld = logits.data
    if ld.ndim != 2 or len(labels) != ld.shape[0]:
        raise DimensionError(
            f"cross_entropy_rows: logits {ld.shape} vs {len(labels)} labels")
    idx = np.asarray(labels, dtype=np.int64)
    if idx.min() < 0 or idx.max() >= ld.shape[1]:
        raise IndexError("label out of range")
    m = ld.max(axis=1)
    e = np.exp(ld - m[:, None])
    z = e.sum(axis=1)
    rows = np.arange(ld.shape[0])
    losses = np.log(z) + m - ld[rows, idx]

    def back(g: np.ndarray) -> None:
        p = e / z[:, None]
        p[rows, idx] -= 1.0
        logits._accumulate(g[:, None] * p)
    return _from_op(losses, (logits,), back)


def rows_sq_dist(x: Tensor, target: np.ndarray) -> Tensor:
    """Squared Euclidean distance of each row of x to the matching frozen row."""
    xd = x.data
    target = np.asarray(target, dtype=np.float64)
    if xd.shape != target.shape or xd.ndim != 2:
        raise DimensionError(f"rows_sq_dist: shapes disagree: {xd.shape} vs {target.shape}")
    diff = xd - target

    def back(g: np.ndarray) -> None:
        x._accumulate(2.0 * g[:, None] * diff)
    return _from_op((diff * diff).sum(axis=1), (x,), back)


def cross_entropy_logits(logits: Tensor, label: int) -> Tensor:
    """Softmax cross-entropy of one logit vector against an index label."""
    ld = logits.data
    if ld.ndim != 1:
        raise DimensionError(f"cross_entropy_logits: need a vector, got {ld.shape}")
    if not 0 <= label < ld.shape[0]:
        raise IndexError(f"label {label} out of range for {ld.shape[0]} logits")
    m = ld.max()
    e = np.exp(ld - m)
    z = e.sum()
    loss = math.log(z) + m - ld[label]

    def back(g: np.ndarray) -> None:
        p = e / z
        p[label] -= 1.0
        logits._accumulate(float(g) * p)
    return _from_op(np.asarray(loss), (logits,), back)


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    mean_rel_err: float
    tol: float
    n_checked: int
    worst: str = ""
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def grad_check(f: Callable[[], Tensor], params: dict[str, Tensor],
               h: float = 1e-5, tol: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients of a scalar function with central differences.

    The step for each element is h * max(1, |value|); the relative error is
    |analytic - numeric| / max(1, |analytic|, |numeric|), so near-zero
    gradients are compared absolutely.
    """
    for p in params.values():
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("grad_check: loss is not finite")
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    errs: list[float] = []
    per_param: dict[str, float] = {}
    worst = ""
    worst_err = -1.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        p_max = 0.0
        for i in range(flat.shape[0]):
            orig = flat[i]
            step = h * max(1.0, abs(orig))
            flat[i] = orig + step
            up = f().item()
            flat[i] = orig - step
            down = f().item()
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError(f"grad_check: non-finite loss while perturbing {name}")
            numeric = (up - down) / (2.0 * step)
            a = a_flat[i]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            errs.append(rel)
            p_max = max(p_max, rel)
        per_param[name] = p_max
        if p_max > worst_err:
            worst_err = p_max
            worst = name
    return GradCheckReport(
        max_rel_err=max(errs) if errs else 0.0,
        mean_rel_err=float(np.mean(errs)) if errs else 0.0,
        tol=tol,
        n_checked=len(errs),
        worst=worst,
        per_param=per_param,
    )

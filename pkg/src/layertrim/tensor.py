"""Dense tensor core with reverse-mode automatic differentiation.

Tensors wrap row-major numpy buffers (float32 by default, float64 for
gradient checking). Every differentiable op records a backward closure on
its output; ``backward()`` on a scalar loss walks the recorded graph once
in reverse topological order, accumulates adjoints into ``requires_grad``
leaves, and frees the graph. The op set is exactly what a parallel-block
decoder LM and its two training losses need; there is no general
broadcasting.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

# Additive attention-mask constant. exp(MASK_VALUE - rowmax) underflows to
# exactly 0.0 in both float32 and float64 for any |rowmax| < 1e8, so masked
# positions contribute exact zeros while every stored value stays finite.
MASK_VALUE = -1e9

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class GraphError(RuntimeError):
    """Autograd graph misuse (non-scalar backward, consumed graph)."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A dense array plus optional adjoint buffer and graph linkage.

    ``data`` is never mutated while a graph referencing it is alive; the
    optimizer mutates leaf data in place only between steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backprop", "_spent")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is not None:
            data = np.asarray(data, dtype=dtype)
        else:
            data = np.asarray(data)
            if data.dtype not in (np.float32, np.float64):
                data = data.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = data
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backprop: Callable[[np.ndarray], None] | None = None
        self._spent = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _accumulate(t: Tensor, g: np.ndarray, owned: bool) -> None:
    """Add adjoint ``g`` into ``t.grad``.

    ``owned`` marks freshly allocated arrays that may be adopted without a
    copy; pass False for views or shared buffers.
    """
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if owned else g.copy()
    else:
        t.grad += g


def _make(data: np.ndarray, parents: Sequence[Tensor], backprop) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._spent = False
    tracked = tuple(p for p in parents if p.requires_grad or p._backprop is not None)
    if _grad_enabled and tracked:
        out.requires_grad = True
        out._parents = tracked
        out._backprop = backprop
    else:
        out.requires_grad = False
        out._parents = ()
        out._backprop = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# Elementwise and structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def backprop(g):
        _accumulate(a, g, owned=False)
        _accumulate(b, g, owned=False)

    return _make(a.data + b.data, (a, b), backprop)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def backprop(g):
        _accumulate(a, g, owned=False)
        _accumulate(b, -g, owned=True)

    return _make(a.data - b.data, (a, b), backprop)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")

    def backprop(g):
        _accumulate(a, g * b.data, owned=True)
        _accumulate(b, g * a.data, owned=True)

    return _make(a.data * b.data, (a, b), backprop)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backprop(g):
        _accumulate(a, g * s, owned=True)

    return _make(a.data * np.asarray(s, dtype=a.dtype), (a,), backprop)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a vector ``b`` along the last axis of ``x``."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")

    def backprop(g):
        _accumulate(x, g, owned=False)
        _accumulate(b, g.reshape(-1, b.shape[0]).sum(axis=0), owned=True)

    return _make(x.data + b.data, (x, b), backprop)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)

    def backprop(g):
        _accumulate(a, g.reshape(a.shape), owned=False)

    return _make(a.data.reshape(shape), (a,), backprop)


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    """Axis permutation. The output aliases the input buffer (matmul and
    reshape handle strided operands); tensors are never mutated in-step,
    so the aliasing is unobservable."""
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))

    def backprop(g):
        _accumulate(a, np.transpose(g, inverse), owned=False)

    return _make(np.transpose(a.data, axes), (a,), backprop)


def transpose(a: Tensor) -> Tensor:
    """2-D transpose."""
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects 2-D, got {a.shape}")
    return permute(a, (1, 0))


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along the last axis."""
    if not (0 <= start < stop <= a.shape[-1]):
        raise ShapeError(f"slice_last [{start}:{stop}] out of range for {a.shape}")

    def backprop(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[..., start:stop] += g

    return _make(a.data[..., start:stop], (a,), backprop)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_last: leading shapes {a.shape} vs {b.shape} differ")
    na = a.shape[-1]

    def backprop(g):
        for t, piece in ((a, g[..., :na]), (b, g[..., na:])):
            if not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.ascontiguousarray(piece)
            else:
                t.grad += piece

    return _make(np.concatenate([a.data, b.data], axis=-1), (a, b), backprop)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: output shape ``ids.shape + (table.shape[1],)``."""
    if table.data.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding ids outside [0, {table.shape[0]})")

    def backprop(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        flat_ids = ids.reshape(-1)
        if flat_ids.size == 0:
            return
        flat_g = g.reshape(-1, table.shape[1])
        # sort-based segment sum; np.add.at is an order of magnitude slower here
        order = np.argsort(flat_ids, kind="stable")
        sorted_ids = flat_ids[order]
        starts = np.r_[0, np.flatnonzero(np.diff(sorted_ids)) + 1]
        table.grad[sorted_ids[starts]] += np.add.reduceat(flat_g[order], starts, axis=0)

    return _make(table.data[ids], (table,), backprop)


# ---------------------------------------------------------------------------
# Linear algebra


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + b for 2-D x; the bias add runs in place on the
    freshly allocated product."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(f"affine expects 2-D operands, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine inner dims differ: {x.shape} vs {w.shape}")
    if b.data.ndim != 1 or b.shape[0] != w.shape[1]:
        raise ShapeError(f"affine bias {b.shape} does not match {w.shape}")
    out = np.matmul(x.data, w.data)
    out += b.data

    def backprop(g):
        _accumulate(x, np.matmul(g, w.data.T), owned=True)
        _accumulate(w, np.matmul(x.data.T, g), owned=True)
        _accumulate(b, g.sum(axis=0), owned=True)

    return _make(out, (x, w, b), backprop)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must match exactly."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul expects >=2-D operands, got {a.shape} and {b.shape}")
    if a.data.ndim != b.data.ndim or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul leading axes differ: {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")

    def backprop(g):
        _accumulate(a, np.matmul(g, b.data.swapaxes(-1, -2)), owned=True)
        _accumulate(b, np.matmul(a.data.swapaxes(-1, -2), g), owned=True)

    return _make(np.matmul(a.data, b.data), (a, b), backprop)


# ---------------------------------------------------------------------------
# Normalization and activations


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not (-x.data.ndim <= axis < x.data.ndim):
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    out = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def backprop(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        dx = g - inner
        dx *= out
        _accumulate(x, dx, owned=True)

    return _make(out, (x,), backprop)


def softmax_causal(scores: Tensor) -> Tensor:
    """softmax(causal_mask(scores)) fused into one op.

    Strictly-future columns get exactly zero weight (their exp underflows
    to 0.0); their incoming gradient is exactly zero through the
    out * (g - inner) form, so no mask pass is needed on the backward path.
    """
    t_q, t_k = scores.shape[-2], scores.shape[-1]
    if t_q != t_k:
        raise ShapeError(f"softmax_causal expects square last axes, got {scores.shape}")
    out = scores.data + _causal_mask_additive(t_q, scores.dtype)
    out -= out.max(axis=-1, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)

    def backprop(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        dx = g - inner
        dx *= out
        _accumulate(scores, dx, owned=True)

    return _make(out, (scores,), backprop)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm params must be ({n},), got {gain.shape} and {bias.shape}")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xhat = x.data - mu
    var = np.einsum("...i,...i->...", xhat, xhat)[..., None] / n
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat *= inv
    out = xhat * gain.data
    out += bias.data

    def backprop(g):
        _accumulate(gain, (g * xhat).reshape(-1, n).sum(axis=0), owned=True)
        _accumulate(bias, g.reshape(-1, n).sum(axis=0), owned=True)
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            dxhat -= m1
            dxhat -= xhat * m2
            dxhat *= inv
            _accumulate(x, dxhat, owned=True)

    return _make(out, (x, gain, bias), backprop)


def swiglu(x: Tensor) -> Tensor:
    """Gated activation: split last axis into (u, v), return silu(u) * v."""
    width = x.shape[-1]
    if width % 2 != 0:
        raise ShapeError(f"swiglu needs an even last axis, got {width}")
    f = width // 2
    # contiguous halves: elementwise transcendentals on strided views are slow
    u = np.ascontiguousarray(x.data[..., :f])
    v = np.ascontiguousarray(x.data[..., f:])
    sig = 1.0 / (1.0 + np.exp(-u))
    silu = u * sig
    out = silu * v

    def backprop(g):
        full = np.empty_like(x.data)
        gate = 1.0 - sig
        gate *= u
        gate += 1.0
        gate *= sig
        gate *= v
        np.multiply(g, gate, out=full[..., :f])
        np.multiply(g, silu, out=full[..., f:])
        _accumulate(x, full, owned=True)

    return _make(out, (x,), backprop)


_mask_cache: dict = {}


def _causal_mask_bool(t: int) -> np.ndarray:
    mask = _mask_cache.get(t)
    if mask is None:
        mask = np.triu(np.ones((t, t), dtype=bool), k=1)
        _mask_cache[t] = mask
    return mask


def _causal_mask_additive(t: int, dtype) -> np.ndarray:
    key = (t, np.dtype(dtype).str)
    add = _mask_cache.get(key)
    if add is None:
        add = np.where(_causal_mask_bool(t), dtype.type(MASK_VALUE), dtype.type(0.0))
        _mask_cache[key] = add
    return add


def causal_mask(scores: Tensor) -> Tensor:
    """Fill strictly-future positions (column > row) of the last two axes
    with MASK_VALUE so softmax assigns them exactly zero weight."""
    t_q, t_k = scores.shape[-2], scores.shape[-1]
    if t_q != t_k:
        raise ShapeError(f"causal_mask expects square last axes, got {scores.shape}")
    mask = _causal_mask_bool(t_q)
    out = np.where(mask, np.asarray(MASK_VALUE, dtype=scores.dtype), scores.data)

    def backprop(g):
        _accumulate(scores, np.where(mask, 0.0, g).astype(scores.dtype, copy=False), owned=True)

    return _make(out, (scores,), backprop)


# ---------------------------------------------------------------------------
# Losses


def cross_entropy_lm(logits: Tensor, targets: np.ndarray, ignore_index: int = -1) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under row-wise softmax.

    ``logits`` is [N, V]; ``targets`` is an int vector of length N whose
    entries are class ids or ``ignore_index``. exp of the result is the
    perplexity of the batch.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy_lm expects [N, V] logits, got {logits.shape}")
    n, v = logits.shape
    targets = np.asarray(targets).reshape(-1)
    if targets.shape[0] != n:
        raise ShapeError(f"targets length {targets.shape[0]} != {n} rows")
    valid = targets != ignore_index
    if not valid.any():
        raise ValueError("cross_entropy_lm: every position is ignored")
    checked = targets[valid]
    if checked.min() < 0 or checked.max() >= v:
        raise IndexError(f"target ids outside [0, {v})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    safe = np.where(valid, targets, 0)
    logp = z[np.arange(n), safe] - lse
    count = int(valid.sum())
    loss = -(logp[valid].sum() / count)

    def backprop(g):
        gs = float(g.reshape(()))
        p = np.exp(z - lse[:, None])
        p[np.arange(n), safe] -= 1.0
        p[~valid] = 0.0
        _accumulate(logits, p * np.asarray(gs / count, dtype=logits.dtype), owned=True)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backprop)


def kl_teacher_student(teacher_logits: Tensor, student_logits: Tensor, temperature: float = 1.0) -> Tensor:
    """T^2-scaled mean KL( softmax(teacher/T) || softmax(student/T) ).

    No adjoint ever flows into ``teacher_logits``.
    """
    _same_shape(teacher_logits, student_logits, "kl_teacher_student")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if teacher_logits.data.ndim != 2:
        raise ShapeError(f"kl_teacher_student expects [N, V] logits, got {teacher_logits.shape}")
    tt = float(temperature)
    n = teacher_logits.shape[0]

    zt = teacher_logits.data / tt
    zt = zt - zt.max(axis=1, keepdims=True)
    et = np.exp(zt)
    p = et / et.sum(axis=1, keepdims=True)
    logp = zt - np.log(et.sum(axis=1, keepdims=True))

    zs = student_logits.data / tt
    zs = zs - zs.max(axis=1, keepdims=True)
    es = np.exp(zs)
    q = es / es.sum(axis=1, keepdims=True)
    logq = zs - np.log(es.sum(axis=1, keepdims=True))

    loss = (tt * tt) * float((p * (logp - logq)).sum()) / n

    def backprop(g):
        gs = float(g.reshape(()))
        _accumulate(student_logits, (q - p) * np.asarray(gs * tt / n, dtype=student_logits.dtype), owned=True)

    return _make(np.asarray(loss, dtype=student_logits.dtype), (student_logits,), backprop)


def mean(x: Tensor) -> Tensor:
    n = x.size

    def backprop(g):
        _accumulate(x, np.full_like(x.data, float(g.reshape(())) / n), owned=True)

    return _make(np.asarray(x.data.mean(), dtype=x.dtype), (x,), backprop)


# ---------------------------------------------------------------------------
# Backward pass


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    seen.add(id(root))
    while stack:
        node, idx = stack[-1]
        if idx < len(node._parents):
            stack[-1] = (node, idx + 1)
            parent = node._parents[idx]
            if id(parent) not in seen:
                seen.add(id(parent))
                stack.append((parent, 0))
        else:
            stack.pop()
            order.append(node)
    return order


def backward(loss: Tensor) -> None:
    """Accumulate adjoints of ``loss`` into every requires_grad leaf.

    The recorded graph is consumed: a second backward on the same loss
    raises GraphError.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._spent:
        raise GraphError("backward already ran on this graph")
    loss._spent = True
    if loss._backprop is None and not loss.requires_grad:
        return
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backprop is not None and node.grad is not None:
            node._backprop(node.grad)
        if node._parents:
            # interior node: free adjoint and graph linkage
            node.grad = None
            node._backprop = None
            node._parents = ()


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None

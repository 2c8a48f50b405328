"""Reverse-mode automatic differentiation over dense numpy arrays.

Supplies exactly the operations the classifiers need: embedding lookup,
banks of 1-D convolutions over time, max/mean pooling with padding masks,
dense layers, and a fused softmax cross-entropy. Everything is float32 by
default; operations follow the dtype of their inputs so `grad_check` can
re-run a model in float64, where central differences are trustworthy.

Tensors are immutable values once produced. Parameters are confined to a
single training thread; inference over frozen parameters is safe to run
concurrently on separate inputs because forward passes share no state.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

# Fill for time steps whose conv window saw only padding: large and negative
# so a masked position can never win a max, but finite so no inf arithmetic.
MASK_FILL = -1e30

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording, e.g. for validation and serving passes."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A dense n-dimensional array plus the tape needed to backpropagate."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded graph."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic (same-shape or scalar; no broadcasting) ------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            out = _node(self.data + other, (self,))
            if out.requires_grad:
                out._backward = lambda g: self._accumulate(g)
            return out
        _check_same_shape(self, other, "add")
        out = _node(self.data + other.data, (self, other))
        if out.requires_grad:

            def backward(g):
                if self.requires_grad:
                    self._accumulate(g)
                if other.requires_grad:
                    other._accumulate(g)

            out._backward = backward
        return out

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            out = _node(self.data * other, (self,))
            if out.requires_grad:
                out._backward = lambda g: self._accumulate(g * other)
            return out
        _check_same_shape(self, other, "mul")
        out = _node(self.data * other.data, (self, other))
        if out.requires_grad:

            def backward(g):
                if self.requires_grad:
                    self._accumulate(g * other.data)
                if other.requires_grad:
                    other._accumulate(g * self.data)

            out._backward = backward
        return out

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def sum(self) -> "Tensor":
        out = _node(self.data.sum(keepdims=False), (self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(np.broadcast_to(g, self.data.shape).copy())
        return out

    def relu(self) -> "Tensor":
        return relu(self)


class Parameter(Tensor):
    """A named trainable tensor; the gradient buffer always exists."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(np.ascontiguousarray(data), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _node(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = tuple(parents)
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# Model operations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvBankSpec:
    """Shape of a bank of full-depth 1-D convolution filters."""

    widths: tuple[int, ...] = (1, 2, 3, 4, 5)
    filters_per_width: int = 128
    embed_dim: int = 200

    def __post_init__(self):
        if not self.widths or any(w < 1 for w in self.widths):
            raise ValueError(f"filter widths must be >= 1, got {self.widths}")
        if any(b <= a for a, b in zip(self.widths, self.widths[1:])):
            raise ValueError(f"filter widths must be strictly increasing, got {self.widths}")
        if self.filters_per_width < 1:
            raise ValueError("filters_per_width must be >= 1")

    @property
    def max_width(self) -> int:
        return self.widths[-1]

    @property
    def features(self) -> int:
        """Pooled feature width contributed by the bank."""
        return len(self.widths) * self.filters_per_width


def embedding_lookup(table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a [V, D] table; output shape is indices.shape + (D,).

    Backward scatter-adds output gradients into the looked-up rows, so a row
    fetched twice accumulates both contributions.
    """
    indices = np.asarray(indices)
    vocab = table.data.shape[0]
    if indices.size and int(indices.max()) >= vocab:
        raise ValueError(f"embedding index {int(indices.max())} out of range for table with {vocab} rows")
    if indices.size and int(indices.min()) < 0:
        raise ValueError("embedding indices must be non-negative")
    out = _node(table.data[indices], (table,))
    if out.requires_grad:

        def backward(g):
            gt = np.zeros_like(table.data)
            np.add.at(gt, indices, g)
            table._accumulate(gt)

        out._backward = backward
    return out


def conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Valid 1-D cross-correlation over time with full-depth filters.

    x is [L, D] or [B, L, D]; weight is [n, D, F]; bias is [F]. The output
    has L - n + 1 time steps. Implemented as one matmul per window offset,
    which keeps everything inside BLAS without an im2col buffer.
    """
    lifted = x.data.ndim == 2
    xd = x.data[None] if lifted else x.data
    if xd.ndim != 3:
        raise ValueError(f"conv1d input must be [L, D] or [B, L, D], got {x.data.shape}")
    n, d, f = weight.data.shape
    batch, length, depth = xd.shape
    if depth != d:
        raise ValueError(f"conv1d depth mismatch: input {xd.shape} vs filter {weight.data.shape}")
    if length < n:
        raise ValueError(f"conv1d: sequence length {length} shorter than filter width {n}")
    steps = length - n + 1
    y = np.tile(bias.data, (batch, steps, 1))
    for j in range(n):
        y += (xd[:, j : j + steps, :].reshape(-1, d) @ weight.data[j]).reshape(batch, steps, f)
    out = _node(y[0] if lifted else y, (x, weight, bias))
    if out.requires_grad:

        def backward(g):
            gb = g[None] if lifted else g
            if x.requires_grad:
                gx = np.zeros_like(xd)
                for j in range(n):
                    gx[:, j : j + steps, :] += (gb.reshape(-1, f) @ weight.data[j].T).reshape(
                        batch, steps, d
                    )
                x._accumulate(gx[0] if lifted else gx)
            if weight.requires_grad:
                gw = np.empty_like(weight.data)
                for j in range(n):
                    gw[j] = np.einsum("btd,btf->df", xd[:, j : j + steps, :], gb)
                weight._accumulate(gw)
            if bias.requires_grad:
                bias._accumulate(gb.sum(axis=(0, 1)))

        out._backward = backward
    return out


def conv_bank(x: Tensor, filters: Sequence[tuple[Tensor, Tensor]]) -> list[Tensor]:
    """Apply one conv1d per (weight, bias) pair; one output map per width."""
    return [conv1d(x, w, b) for w, b in filters]


def maxpool_time(x: Tensor) -> Tensor:
    """Maximum over the time axis: [..., T, F] -> [..., F].

    The gradient flows to the first maximal time step of each filter column.
    """
    data = x.data
    if data.ndim < 2:
        raise ValueError(f"maxpool_time needs at least 2 dims, got {data.shape}")
    am = data.argmax(axis=-2)
    out = _node(np.take_along_axis(data, am[..., None, :], axis=-2).squeeze(-2), (x,))
    if out.requires_grad:

        def backward(g):
            gx = np.zeros_like(data)
            np.put_along_axis(gx, am[..., None, :], g[..., None, :], axis=-2)
            x._accumulate(gx)

        out._backward = backward
    return out


def masked_maxpool_time(x: Tensor, valid: np.ndarray) -> Tensor:
    """Max over the first `valid[b]` time steps of a [B, T, F] map.

    Steps at or beyond `valid[b]` are filled with MASK_FILL before pooling so
    padding can never win; rows with no valid steps pool to exact zeros. This
    is what makes a product's features independent of how far its batch was
    padded.
    """
    valid = np.asarray(valid, dtype=np.int64)
    batch, steps, _ = x.data.shape
    if valid.shape != (batch,):
        raise ValueError(f"valid counts shape {valid.shape} does not match batch {batch}")
    alive = np.arange(steps)[None, :, None] < valid[:, None, None]
    masked = np.where(alive, x.data, x.data.dtype.type(MASK_FILL))
    am = masked.argmax(axis=1)
    pooled = np.take_along_axis(masked, am[:, None, :], axis=1).squeeze(1)
    nonempty = (valid > 0)[:, None]
    out = _node(np.where(nonempty, pooled, 0.0), (x,))
    if out.requires_grad:

        def backward(g):
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, am[:, None, :], np.where(nonempty, g, 0.0)[:, None, :], axis=1)
            x._accumulate(gx)

        out._backward = backward
    return out


def mean_time(x: Tensor, valid_count: int) -> Tensor:
    """Mean over the first `valid_count` rows of a [T, F] map; PAD rows are
    excluded and a sequence with no real tokens pools to exact zeros."""
    steps = x.data.shape[0]
    if valid_count < 0 or valid_count > steps:
        raise ValueError(f"valid_count {valid_count} out of range for {steps} time steps")
    return _masked_mean(x, np.asarray([valid_count]), lifted=True)


def masked_mean_time(x: Tensor, valid: np.ndarray) -> Tensor:
    """Batched mean over the first `valid[b]` time steps of [B, T, F]."""
    valid = np.asarray(valid, dtype=np.int64)
    if valid.shape != (x.data.shape[0],):
        raise ValueError(f"valid counts shape {valid.shape} does not match batch {x.data.shape[0]}")
    return _masked_mean(x, valid, lifted=False)


def _masked_mean(x: Tensor, valid: np.ndarray, lifted: bool) -> Tensor:
    xd = x.data[None] if lifted else x.data
    steps = xd.shape[1]
    weights = (np.arange(steps)[None, :] < valid[:, None]).astype(xd.dtype)
    weights /= np.maximum(valid, 1)[:, None]
    y = np.einsum("btf,bt->bf", xd, weights)
    out = _node(y[0] if lifted else y, (x,))
    if out.requires_grad:

        def backward(g):
            gb = g[None] if lifted else g
            gx = weights[:, :, None] * gb[:, None, :]
            x._accumulate(gx[0] if lifted else gx)

        out._backward = backward
    return out


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Dense layer x @ W + b for x [B, I], W [I, O], b [O]."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.data.shape[1] != weight.data.shape[0]:
        raise ValueError(f"linear: shape mismatch {x.data.shape} vs {weight.data.shape}")
    y = x.data @ weight.data
    if bias is not None:
        if bias.data.shape != (weight.data.shape[1],):
            raise ValueError(f"linear: bias shape {bias.data.shape} vs weight {weight.data.shape}")
        y = y + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = _node(y, parents)
    if out.requires_grad:

        def backward(g):
            if x.requires_grad:
                x._accumulate(g @ weight.data.T)
            if weight.requires_grad:
                weight._accumulate(x.data.T @ g)
            if bias is not None and bias.requires_grad:
                bias._accumulate(g.sum(axis=0))

        out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    out = _node(np.maximum(x.data, 0), (x,))
    if out.requires_grad:
        out._backward = lambda g: x._accumulate(g * (x.data > 0))
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along an axis; the gradient splits back by size."""
    if not tensors:
        raise ValueError("concat of no tensors")
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    t._accumulate(g[tuple(idx)])

        out._backward = backward
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis (plain numpy)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    Uses the log-sum-exp shift, so a logit of +1000 is fine. logits are
    [B, C] (or [C] with a scalar label).
    """
    lifted = logits.data.ndim == 1
    ld = logits.data[None] if lifted else logits.data
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    batch, classes = ld.shape
    if labels.shape != (batch,):
        raise ValueError(f"labels shape {labels.shape} does not match logits {ld.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"label out of range for {classes} classes")
    shifted = ld - ld.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(batch), labels].mean()
    out = _node(np.asarray(loss, dtype=ld.dtype), (logits,))
    if out.requires_grad:

        def backward(g):
            gl = np.exp(logp)
            gl[np.arange(batch), labels] -= 1.0
            gl *= g / batch
            logits._accumulate(gl[0] if lifted else gl)

        out._backward = backward
    return out


def grad_check(
    closure: Callable[[], Tensor],
    params: Iterable[Parameter],
    eps: float = 1e-3,
) -> float:
    """Largest relative disagreement between backprop and central differences.

    The closure is re-run with every parameter entry nudged by +-eps. Both
    passes run in float64 (parameters are temporarily promoted) so the
    finite-difference side is not drowned in float32 roundoff; dtypes are
    restored afterwards. Relative error per entry is
    |g_a - g_n| / max(1e-8, |g_a| + |g_n|).
    """
    params = list(params)
    if not params:
        return 0.0
    originals = [p.data for p in params]
    for p in params:
        p.data = p.data.astype(np.float64)
        p.grad = np.zeros_like(p.data)
    try:
        out = closure()
        if not np.isfinite(out.data).all():
            raise FloatingPointError("closure produced a non-finite value")
        out.backward()
        worst = 0.0
        with no_grad():
            for p in params:
                analytic = p.grad.reshape(-1)
                flat = p.data.reshape(-1)
                for i in range(flat.size):
                    saved = flat[i]
                    flat[i] = saved + eps
                    hi = float(closure().data)
                    flat[i] = saved - eps
                    lo = float(closure().data)
                    flat[i] = saved
                    if not (math.isfinite(hi) and math.isfinite(lo)):
                        raise FloatingPointError("closure produced a non-finite value")
                    numeric = (hi - lo) / (2.0 * eps)
                    err = abs(analytic[i] - numeric) / max(1e-8, abs(analytic[i]) + abs(numeric))
                    worst = max(worst, err)
    finally:
        for p, data in zip(params, originals):
            p.data = data
            p.grad = np.zeros_like(data)
    return worst

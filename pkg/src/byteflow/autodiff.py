"""Array-valued reverse-mode automatic differentiation.

Small engine over float64 numpy arrays: each op builds an output Tensor
holding a backward closure; ``Tensor.backward()`` walks the graph in
reverse topological order and accumulates gradients into every tensor
with ``requires_grad``. Only the ops the model needs exist here.
"""

from __future__ import annotations

import numpy as np

from .errors import BadShape, NonFinite, OutOfVocab

# When true, every op output is checked for NaN/Inf (slow; used in tests).
DEBUG_CHECK_FINITE = False


def set_debug_checks(enabled: bool):
    global DEBUG_CHECK_FINITE
    DEBUG_CHECK_FINITE = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> np.ndarray:
        return self.data

    def backward(self):
        if self.data.size != 1:
            raise BadShape("backward() starts from a scalar")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, name: str) -> Tensor:
    if DEBUG_CHECK_FINITE and not np.isfinite(data).all():
        raise NonFinite(f"non-finite values out of {name}")
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray):
    # closures never mutate arrays after handing them over, so no copy
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out broadcasted axes so g matches the target shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(g, b.data.shape))

    return _make(data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        _accum(a, _reduce_to(g * b.data, a.data.shape))
        _accum(b, _reduce_to(g * a.data, b.data.shape))

    return _make(data, (a, b), backward, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * s

    def backward(g):
        _accum(a, g * s)

    return _make(data, (a,), backward, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = np.matmul(a.data, b.data)

    def backward(g):
        _accum(a, _reduce_to(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
        _accum(b, _reduce_to(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape))

    return _make(data, (a, b), backward, "matmul")


def transpose_last(a: Tensor) -> Tensor:
    data = np.swapaxes(a.data, -1, -2)

    def backward(g):
        _accum(a, np.swapaxes(g, -1, -2))

    return _make(data, (a,), backward, "transpose_last")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = a.data.shape
    data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(src))

    return _make(data, (a,), backward, "reshape")


def moveaxis(a: Tensor, src: int, dst: int) -> Tensor:
    data = np.moveaxis(a.data, src, dst)

    def backward(g):
        _accum(a, np.moveaxis(g, dst, src))

    return _make(data, (a,), backward, "moveaxis")


def slice_time(a: Tensor, start: int, end: int) -> Tensor:
    """Slice along the time axis (second to last)."""
    data = a.data[..., start:end, :]

    def backward(g):
        full = np.zeros_like(a.data)
        full[..., start:end, :] = g
        _accum(a, full)

    return _make(data, (a,), backward, "slice_time")


def swish(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))
    data = a.data * sig

    def backward(g):
        _accum(a, g * (sig + a.data * sig * (1.0 - sig)))

    return _make(data, (a,), backward, "swish")


def softmax_masked(a: Tensor, additive_mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis after adding a constant mask."""
    z = a.data if additive_mask is None else a.data + additive_mask
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        _accum(a, p * (g - inner))

    return _make(p, (a,), backward, "softmax")


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup into an embedding table; gradient scatters into rows."""
    ids = np.asarray(ids)
    vocab = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise OutOfVocab(f"symbol id outside [0, {vocab})")
    data = table.data[ids]

    def backward(g):
        dtable = np.zeros_like(table.data)
        np.add.at(dtable, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        _accum(table, dtable)

    return _make(data, (table,), backward, "embed")


def layer_norm(a: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """Zero-mean unit-variance per row, learned scale, no shift."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data

    def backward(g):
        gy = g * gain.data
        m1 = gy.mean(axis=-1, keepdims=True)
        m2 = (gy * xhat).mean(axis=-1, keepdims=True)
        _accum(a, inv * (gy - m1 - xhat * m2))
        _accum(gain, _reduce_to(g * xhat, gain.data.shape))

    return _make(data, (a, gain), backward, "layer_norm")


def _shift_time(arr: np.ndarray, steps: int) -> np.ndarray:
    """Move values toward larger time indices, zero-filling the front."""
    if steps == 0:
        return arr
    out = np.zeros_like(arr)
    out[..., steps:, :] = arr[..., :-steps, :]
    return out


def _unshift_time(arr: np.ndarray, steps: int) -> np.ndarray:
    if steps == 0:
        return arr
    out = np.zeros_like(arr)
    out[..., :-steps, :] = arr[..., steps:, :]
    return out


def canon_mix(a: Tensor, gates: Tensor) -> Tensor:
    """Four-tap causal mix: out_t = sum_i gates[i] * x_{t-i}, zero padded."""
    taps = gates.data.shape[0]
    data = np.zeros_like(a.data)
    for i in range(taps):
        data += gates.data[i] * _shift_time(a.data, i)

    def backward(g):
        da = np.zeros_like(a.data)
        dg = np.zeros_like(gates.data)
        for i in range(taps):
            da += gates.data[i] * _unshift_time(g, i)
            prod = g * _shift_time(a.data, i)
            dg[i] = prod.reshape(-1, prod.shape[-1]).sum(axis=0)
        _accum(a, da)
        _accum(gates, dg)

    return _make(data, (a, gates), backward, "canon_mix")


def rope_apply(a: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotary position mix over the last axis, half-split convention.

    cos/sin have shape (T, head_dim // 2) and broadcast over leading axes.
    """
    hd = a.data.shape[-1]
    if hd % 2 != 0:
        raise BadShape("rotary encoding needs an even head dim")
    half = hd // 2
    x1, x2 = a.data[..., :half], a.data[..., half:]
    data = np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)

    def backward(g):
        g1, g2 = g[..., :half], g[..., half:]
        da = np.concatenate([g1 * cos + g2 * sin, -g1 * sin + g2 * cos], axis=-1)
        _accum(a, da)

    return _make(data, (a,), backward, "rope")


def gather_time(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick rows along the time axis: (B, T, D) x (B, K) -> (B, K, D)."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.data.ndim != 3 or idx.ndim != 2 or idx.shape[0] != a.data.shape[0]:
        raise BadShape(f"gather_time got {a.data.shape} and {idx.shape}")
    batch_ix = np.arange(a.data.shape[0])[:, None]
    data = a.data[batch_ix, idx]

    def backward(g):
        da = np.zeros_like(a.data)
        rows = a.data.shape[1]
        flat_idx = (idx + np.arange(idx.shape[0])[:, None] * rows).reshape(-1)
        np.add.at(da.reshape(-1, da.shape[-1]), flat_idx, g.reshape(-1, g.shape[-1]))
        _accum(a, da)

    return _make(data, (a,), backward, "gather_time")


def binned_linear(a: Tensor, bank: Tensor, bin_slices: list[tuple[int, int, int]]) -> Tensor:
    """Apply one weight matrix per contiguous time range.

    bin_slices lists (start, end, bank_index) covering [0, T).
    """
    data = np.empty(a.data.shape[:-1] + (bank.data.shape[-1],))
    for start, end, b in bin_slices:
        data[..., start:end, :] = np.matmul(a.data[..., start:end, :], bank.data[b])

    def backward(g):
        da = np.empty_like(a.data)
        dbank = np.zeros_like(bank.data)
        for start, end, b in bin_slices:
            gs = g[..., start:end, :]
            xs = a.data[..., start:end, :]
            da[..., start:end, :] = np.matmul(gs, bank.data[b].T)
            dbank[b] += np.tensordot(
                xs.reshape(-1, xs.shape[-1]), gs.reshape(-1, gs.shape[-1]), axes=(0, 0)
            )
        _accum(a, da)
        _accum(bank, dbank)

    return _make(data, (a, bank), backward, "binned_linear")


def cross_entropy(logits: Tensor, targets: np.ndarray, reduction: str = "mean") -> Tensor:
    """Negative log likelihood in nats over the last axis, max-stabilized."""
    ids = np.asarray(targets, dtype=np.int64)
    vocab = logits.data.shape[-1]
    if ids.shape != logits.data.shape[:-1]:
        raise BadShape(f"targets {ids.shape} do not match logits {logits.data.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise OutOfVocab(f"target id outside [0, {vocab})")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    flat = logits.data.reshape(-1, vocab)
    flat_ids = ids.reshape(-1)
    m = flat.max(axis=-1, keepdims=True)
    z = flat - m
    lse = np.log(np.exp(z).sum(axis=-1))
    nll = lse - z[np.arange(flat.shape[0]), flat_ids]
    total = nll.sum()
    n = flat.shape[0]
    value = total / n if reduction == "mean" else total

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), flat_ids] -= 1.0
        if reduction == "mean":
            p /= n
        _accum(logits, (float(g) * p).reshape(logits.data.shape))

    return _make(np.asarray(value), (logits,), backward, "cross_entropy")


def total(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    data = np.asarray(a.data.sum())

    def backward(g):
        _accum(a, np.full(a.data.shape, float(g)))

    return _make(data, (a,), backward, "total")


def graph_shapes(root: Tensor) -> list[tuple[int, ...]]:
    """Sorted multiset of tensor shapes reachable from root (grad graph)."""
    return sorted(t.data.shape for t in _toposort(root))


def zero_grads(tensors):
    for t in tensors:
        t.grad = None

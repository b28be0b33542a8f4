"""Neural building blocks: sliding-window attention, SwiGLU, canon mixing.

Blocks compose autodiff ops and accept inputs shaped (T, d) or (B, T, d).
Weight layout conventions: all projections are bias-free right
multiplications, attention weights are square (d, d) matrices.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import BadShape

_MASK_NEG = -1e30
_mask_cache: dict[tuple[int, int | None], np.ndarray] = {}
_rope_cache: dict[tuple[int, int, float], tuple[np.ndarray, np.ndarray]] = {}


def attention_mask(t_len: int, window: int | None) -> np.ndarray:
    """Additive causal mask; window limits how far back a query reaches.

    Position t sees positions max(1, t - window + 1) .. t. window=None
    means plain causal attention.
    """
    key = (t_len, window)
    cached = _mask_cache.get(key)
    if cached is not None:
        return cached
    i = np.arange(t_len)[:, None]
    j = np.arange(t_len)[None, :]
    allowed = j <= i
    if window is not None:
        allowed &= (i - j) < window
    mask = np.where(allowed, 0.0, _MASK_NEG)
    _mask_cache[key] = mask
    return mask


def rope_tables(t_len: int, head_dim: int, theta: float) -> tuple[np.ndarray, np.ndarray]:
    if head_dim % 2 != 0:
        raise BadShape("head dim must be even for rotary encoding")
    key = (t_len, head_dim, theta)
    cached = _rope_cache.get(key)
    if cached is not None:
        return cached
    half = head_dim // 2
    inv_freq = theta ** (-np.arange(half) * 2.0 / head_dim)
    angles = np.arange(t_len)[:, None] * inv_freq[None, :]
    tables = (np.cos(angles), np.sin(angles))
    _rope_cache[key] = tables
    return tables


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, t_len, d = x.shape
    head_dim = d // n_heads
    x = ad.reshape(x, (*lead, t_len, n_heads, head_dim))
    return ad.moveaxis(x, -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, n_heads, t_len, head_dim = x.shape
    x = ad.moveaxis(x, -3, -2)
    return ad.reshape(x, (*lead, t_len, n_heads * head_dim))


def swa_attention(
    x: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    n_heads: int,
    window: int | None,
    rope_theta: float,
) -> Tensor:
    """Multi-head causal attention limited to a sliding window.

    Rotary position encodings are applied to queries and keys per head.
    """
    d = x.shape[-1]
    if d % n_heads != 0:
        raise BadShape(f"width {d} not divisible by {n_heads} heads")
    for name, w in (("wq", wq), ("wk", wk), ("wv", wv), ("wo", wo)):
        if w.shape != (d, d):
            raise BadShape(f"{name} must be ({d}, {d}), got {w.shape}")
    if window is not None and window < 1:
        raise BadShape(f"window must be >= 1, got {window}")
    t_len = x.shape[-2]
    head_dim = d // n_heads

    q = _split_heads(ad.matmul(x, wq), n_heads)
    k = _split_heads(ad.matmul(x, wk), n_heads)
    v = _split_heads(ad.matmul(x, wv), n_heads)
    cos, sin = rope_tables(t_len, head_dim, rope_theta)
    q = ad.rope_apply(q, cos, sin)
    k = ad.rope_apply(k, cos, sin)

    scores = ad.scale(ad.matmul(q, ad.transpose_last(k)), 1.0 / math.sqrt(head_dim))
    probs = ad.softmax_masked(scores, attention_mask(t_len, window))
    ctx = _merge_heads(ad.matmul(probs, v))
    return ad.matmul(ctx, wo)


def swiglu(x: Tensor, w1: Tensor, w2: Tensor, w3: Tensor) -> Tensor:
    """Swish(x W1) * (x W2), then the W3 down-projection back to width d."""
    d = x.shape[-1]
    if w1.shape[0] != d or w2.shape != w1.shape or w3.shape != (w1.shape[1], d):
        raise BadShape(
            f"swiglu weights {w1.shape}/{w2.shape}/{w3.shape} do not fit width {d}"
        )
    gated = ad.mul(ad.swish(ad.matmul(x, w1)), ad.matmul(x, w2))
    return ad.matmul(gated, w3)


def canon(x: Tensor, gates: Tensor) -> Tensor:
    """Causal 4-tap gated mix along time."""
    if gates.shape != (4, x.shape[-1]):
        raise BadShape(f"canon gates must be (4, {x.shape[-1]}), got {gates.shape}")
    return ad.canon_mix(x, gates)


def embed(byte_ids: np.ndarray, table: Tensor) -> Tensor:
    return ad.embed(table, byte_ids)


def layer_norm(x: Tensor, gain: Tensor) -> Tensor:
    return ad.layer_norm(x, gain)


def cross_entropy_nats(logits: Tensor, targets: np.ndarray, reduction: str = "mean") -> Tensor:
    return ad.cross_entropy(logits, targets, reduction=reduction)


def init_param(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int | None = None) -> Tensor:
    """Unit-fan-in scaled random init."""
    fan = fan_in if fan_in is not None else shape[0]
    return Tensor(rng.standard_normal(shape) / math.sqrt(fan), requires_grad=True)


def init_canon_gates(d: int) -> Tensor:
    """Identity start: current position passes through, history gates at 0."""
    gates = np.zeros((4, d))
    gates[0] = 1.0
    return Tensor(gates, requires_grad=True)

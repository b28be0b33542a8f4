"""Shared test oracles: finite differences, dense attention, eigen rates.

These stay deliberately independent of the implementation paths they
check (loops and eigendecompositions instead of Cholesky streams).
"""

from __future__ import annotations

import math

import numpy as np


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. array x (in place)."""
    g = np.zeros_like(x)
    flat, gf = x.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        step = eps * max(1.0, abs(orig))
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * step)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel()), 1e-12)
    return float(np.linalg.norm((a - b).ravel()) / denom)


def random_spd(rng: np.random.Generator, dim: int, cond: float = 1e3) -> np.ndarray:
    """Random SPD matrix with log-uniform eigenvalues."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    lam = np.exp(rng.uniform(-0.5 * math.log(cond), 0.5 * math.log(cond), size=dim))
    return (q * lam) @ q.T


def rate_eig_sequence_side(h: np.ndarray, c: float) -> float:
    """0.5 * log det(I_T + c h h^T) through the T x T eigendecomposition."""
    t = h.shape[0]
    if t == 0:
        return 0.0
    lam = np.linalg.eigvalsh(h @ h.T)
    return 0.5 * float(np.sum(np.log1p(c * np.clip(lam, 0.0, None))))


def rate_eig_gram_side(h: np.ndarray, c: float) -> float:
    """0.5 * log det(I_d + c h^T h) through the d x d eigendecomposition."""
    if h.shape[0] == 0:
        return 0.0
    lam = np.linalg.eigvalsh(h.T @ h)
    return 0.5 * float(np.sum(np.log1p(c * np.clip(lam, 0.0, None))))


def marginal_rates_batchdiff(h: np.ndarray, c: float) -> np.ndarray:
    """Marginal rates as explicit prefix-rate differences (eigen route)."""
    t_len = h.shape[0]
    out = np.full(t_len, np.inf)
    prev = rate_eig_gram_side(h[:1], c)
    for t in range(2, t_len + 1):
        cur = rate_eig_gram_side(h[:t], c)
        out[t - 1] = cur - prev
        prev = cur
    return out


def dense_causal_attention(
    x: np.ndarray,
    wq: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
    wo: np.ndarray,
    n_heads: int,
    rope_theta: float,
) -> np.ndarray:
    """Reference multi-head causal attention, written with explicit loops."""
    t_len, d = x.shape
    hd = d // n_heads
    half = hd // 2
    inv_freq = rope_theta ** (-np.arange(half) * 2.0 / hd)
    angles = np.arange(t_len)[:, None] * inv_freq[None, :]
    cos, sin = np.cos(angles), np.sin(angles)

    def rot(m):
        a, b = m[:, :half], m[:, half:]
        return np.concatenate([a * cos - b * sin, a * sin + b * cos], axis=1)

    q = x @ wq
    k = x @ wk
    v = x @ wv
    heads_out = []
    for head in range(n_heads):
        sl = slice(head * hd, (head + 1) * hd)
        qh, kh, vh = rot(q[:, sl]), rot(k[:, sl]), v[:, sl]
        ctx = np.zeros((t_len, hd))
        for t in range(t_len):
            logits = qh[t] @ kh[: t + 1].T / math.sqrt(hd)
            logits -= logits.max()
            p = np.exp(logits)
            p /= p.sum()
            ctx[t] = p @ vh[: t + 1]
        heads_out.append(ctx)
    return np.concatenate(heads_out, axis=1) @ wo

"""Coding-rate chunking core.

The rate of a representation matrix h (T rows, d columns) is
``0.5 * log det(I + (d / eps2) * h @ h.T)``, evaluated on the Gram side
``0.5 * log det(I_d + c * h.T @ h)`` with ``c = d / eps2`` (the two
determinants coincide). Marginal rates are streamed with rank-one
Cholesky updates in O(T * d^2); a batched Sherman-Morrison twin serves
the training hot path and must agree with the streamed values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadShape, InvalidK, NonFinite
from .numkernel import cholesky, rank_one_update, solve_triangular


@dataclass(frozen=True)
class RateConfig:
    """Noise variance and representation width for rate computations."""

    eps2: float = 1.0
    d_local: int = 64
    use_approx: bool = False

    def __post_init__(self):
        if not (self.eps2 > 0.0 and math.isfinite(self.eps2)):
            raise ValueError(f"eps2 must be a positive finite real, got {self.eps2}")
        if self.d_local < 1:
            raise ValueError(f"d_local must be >= 1, got {self.d_local}")

    @property
    def c(self) -> float:
        """Gram scaling constant d_local / eps2."""
        return self.d_local / self.eps2


@dataclass(frozen=True)
class RateProfile:
    """Per-position importance scores. Position 1 carries a +inf sentinel
    so that plain top-K selection always keeps the BOS anchor."""

    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "scores", s)
        if s.ndim != 1 or s.size < 1:
            raise BadShape(f"profile must be a nonempty vector, got shape {s.shape}")
        if not np.isposinf(s[0]):
            raise ValueError("profile score at position 1 must be the +inf sentinel")
        if not np.isfinite(s[1:]).all():
            raise NonFinite("profile scores at positions >= 2 must be finite")

    def __len__(self) -> int:
        return self.scores.size


@dataclass(frozen=True)
class BoundarySet:
    """Selected byte positions, 1-based, strictly increasing, starting at 1."""

    positions: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=np.int64)
        object.__setattr__(self, "positions", p)
        if p.ndim != 1 or p.size < 1:
            raise BadShape("boundary set must be a nonempty vector")
        if p[0] != 1:
            raise ValueError("boundary set must start at position 1")
        if np.any(np.diff(p) <= 0):
            raise ValueError("boundary positions must be strictly increasing")

    @property
    def k(self) -> int:
        return self.positions.size


def _check_reps(h: np.ndarray, cfg: RateConfig) -> np.ndarray:
    a = np.asarray(h, dtype=np.float64)
    if a.ndim != 2:
        raise BadShape(f"representations must be 2-d, got shape {a.shape}")
    if a.shape[1] != cfg.d_local:
        raise BadShape(f"expected {cfg.d_local} columns, got {a.shape[1]}")
    if not np.isfinite(a).all():
        raise NonFinite("representations contain NaN or Inf")
    return a


def coding_rate_exact(h: np.ndarray, cfg: RateConfig) -> float:
    """Lossy coding rate of the whole matrix; 0 for an empty one."""
    a = _check_reps(h, cfg)
    t = a.shape[0]
    if t == 0:
        return 0.0
    gram = np.eye(cfg.d_local) + cfg.c * (a.T @ a)
    return 0.5 * cholesky(gram).logdet


def marginal_rates_stream(h: np.ndarray, cfg: RateConfig) -> RateProfile:
    """Per-position rate gains, streamed with rank-one Cholesky updates.

    scores[t] for t >= 2 equals the batch difference of coding rates of
    the length-t and length-(t-1) prefixes; position 1 gets the sentinel.
    """
    a = _check_reps(h, cfg)
    t_len = a.shape[0]
    if t_len < 1:
        raise BadShape("need at least one row")
    scores = np.empty(t_len, dtype=np.float64)
    scores[0] = np.inf
    c = cfg.c
    factor = cholesky(np.eye(cfg.d_local))
    if np.any(a[0] != 0.0):
        factor = rank_one_update(factor, a[0], c)
    for t in range(1, t_len):
        row = a[t]
        quad = float(row @ solve_triangular(factor, row))
        scores[t] = 0.5 * math.log1p(c * quad)
        if np.any(row != 0.0):
            factor = rank_one_update(factor, row, c)
    return RateProfile(scores=scores)


def marginal_rates_l2(h: np.ndarray, cfg: RateConfig) -> RateProfile:
    """First-order rate surrogate (d / (2 eps2)) * ||h_t||^2 per position."""
    a = _check_reps(h, cfg)
    if a.shape[0] < 1:
        raise BadShape("need at least one row")
    scores = 0.5 * cfg.c * np.einsum("td,td->t", a, a)
    scores[0] = np.inf
    return RateProfile(scores=scores)


def marginal_rates(h: np.ndarray, cfg: RateConfig) -> RateProfile:
    """Dispatch on cfg.use_approx."""
    if cfg.use_approx:
        return marginal_rates_l2(h, cfg)
    return marginal_rates_stream(h, cfg)


def marginal_rates_batch(h: np.ndarray, cfg: RateConfig) -> np.ndarray:
    """Batched exact marginal rates over (B, T, d) stacks.

    Maintains the inverse of I + c * Gram per sequence by Sherman-Morrison
    instead of Cholesky factors; returns (B, T) scores with the column-0
    sentinel. Must match marginal_rates_stream row-by-row (tested).
    """
    a = np.asarray(h, dtype=np.float64)
    if a.ndim != 3:
        raise BadShape(f"expected (B, T, d), got shape {a.shape}")
    if a.shape[2] != cfg.d_local:
        raise BadShape(f"expected {cfg.d_local} columns, got {a.shape[2]}")
    if not np.isfinite(a).all():
        raise NonFinite("representations contain NaN or Inf")
    b, t_len, d = a.shape
    c = cfg.c
    inv = np.broadcast_to(np.eye(d), (b, d, d)).copy()
    scores = np.empty((b, t_len), dtype=np.float64)
    scores[:, 0] = np.inf
    for t in range(t_len):
        row = a[:, t, :]
        u = np.einsum("bij,bj->bi", inv, row)
        quad = np.einsum("bi,bi->b", row, u)
        if t >= 1:
            scores[:, t] = 0.5 * np.log1p(c * quad)
        coef = c / (1.0 + c * quad)
        inv -= coef[:, None, None] * np.einsum("bi,bj->bij", u, u)
    return scores


def select_topk(profile: RateProfile, k: int) -> BoundarySet:
    """Keep the K highest-scoring positions, ties to the earlier position."""
    t_len = len(profile)
    if k < 1 or k > t_len:
        raise InvalidK(f"K must be in [1, {t_len}], got {k}")
    s = profile.scores
    # lexsort: primary key -scores, ties resolved by ascending position
    order = np.lexsort((np.arange(t_len), -s))
    chosen = np.sort(order[:k]) + 1
    return BoundarySet(positions=chosen)

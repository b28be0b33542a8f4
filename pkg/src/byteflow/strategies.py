"""Seven chunking strategies behind one scoring interface.

Each strategy turns a byte sequence and (optionally) its encoder
representations into a per-position importance profile. Dynamic
strategies are segmented by top-K over that profile; the native-set
strategies (fixed stride, word boundary, random) produce their own
boundary sets which are then truncated or padded to exactly K positions
so that every chunker fits the fixed-shape hierarchy.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from .errors import BadShape, InvalidK, MissingRepresentations
from .rate import (
    BoundarySet,
    RateConfig,
    RateProfile,
    marginal_rates_batch,
    marginal_rates_l2,
    marginal_rates_stream,
    select_topk,
)
from .vocab import VOCAB_SIZE

# Delimiters that fire the word-boundary score: space, tab, newline and
# the POSIX punctuation class. BOS/EOS ids never match.
_DELIMS = {9, 10, 32} | {ord(ch) for ch in string.punctuation}
_DELIM_LOOKUP = np.zeros(VOCAB_SIZE, dtype=bool)
for _b in _DELIMS:
    _DELIM_LOOKUP[_b] = True


@dataclass
class FixedStride:
    stride: int = 4
    tag = "fixed-stride"
    needs_reps = False
    is_native_set = True

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")


@dataclass
class WordBoundary:
    tag = "word-boundary"
    needs_reps = False
    is_native_set = True


@dataclass
class RandomChunk:
    p: float = 0.1
    seed: int = 0
    tag = "random"
    needs_reps = False
    is_native_set = True
    _rng: np.random.Generator = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if not (0.0 < self.p < 1.0):
            raise ValueError(f"boundary probability must be in (0, 1), got {self.p}")
        self._rng = np.random.default_rng(self.seed)


@dataclass
class NeuralBoundary:
    seed: int = 0
    tag = "neural-boundary"
    needs_reps = True
    is_native_set = False
    _rng: np.random.Generator = field(init=False, repr=False, compare=False, default=None)
    _gate: np.ndarray = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)
        self._gate = None

    def gate_vector(self, d: int) -> np.ndarray:
        # untrained boundary gate, unit-variance draw from a derived seed
        if self._gate is None or self._gate.shape[0] != d:
            gate_rng = np.random.default_rng((self.seed, d))
            self._gate = gate_rng.standard_normal(d)
        return self._gate


@dataclass
class EntropyChunk:
    """Next-byte entropy under a bigram predictor with add-one smoothing.

    If no table is supplied the predictor is fitted on the scored
    sequence itself, keeping single-shot segmentation self-contained.
    """

    table: np.ndarray | None = None
    tag = "entropy"
    needs_reps = False
    is_native_set = False
    _row_entropy: np.ndarray = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        self._row_entropy = None
        if self.table is not None:
            self._check_table(self.table)

    @staticmethod
    def _check_table(table: np.ndarray):
        if table.shape != (VOCAB_SIZE, VOCAB_SIZE):
            raise BadShape(f"bigram table must be {VOCAB_SIZE}x{VOCAB_SIZE}")

    def row_entropies(self, byte_ids: np.ndarray) -> np.ndarray:
        table = self.table if self.table is not None else fit_bigram(byte_ids)
        if self._row_entropy is None or self.table is None:
            self._row_entropy = -np.sum(table * np.log(table), axis=1)
        return self._row_entropy


@dataclass
class CosineChunk:
    tag = "cosine"
    needs_reps = True
    is_native_set = False


@dataclass
class CodingRate:
    tag = "coding-rate"
    needs_reps = True
    is_native_set = False


@dataclass
class CodingRateL2:
    tag = "coding-rate-l2"
    needs_reps = True
    is_native_set = False


StrategyKind = (
    FixedStride
    | WordBoundary
    | RandomChunk
    | NeuralBoundary
    | EntropyChunk
    | CosineChunk
    | CodingRate
    | CodingRateL2
)

STRATEGY_TAGS = (
    "fixed-stride",
    "word-boundary",
    "random",
    "neural-boundary",
    "entropy",
    "cosine",
    "coding-rate",
    "coding-rate-l2",
)


def make_strategy(
    tag: str,
    stride: int = 4,
    p: float = 0.1,
    seed: int = 0,
    table: np.ndarray | None = None,
) -> StrategyKind:
    if tag == "fixed-stride":
        return FixedStride(stride=stride)
    if tag == "word-boundary":
        return WordBoundary()
    if tag == "random":
        return RandomChunk(p=p, seed=seed)
    if tag == "neural-boundary":
        return NeuralBoundary(seed=seed)
    if tag == "entropy":
        return EntropyChunk(table=table)
    if tag == "cosine":
        return CosineChunk()
    if tag == "coding-rate":
        return CodingRate()
    if tag == "coding-rate-l2":
        return CodingRateL2()
    raise ValueError(f"unknown chunker tag {tag!r}; choose from {STRATEGY_TAGS}")


def strategy_to_str(kind: StrategyKind) -> str:
    """Round-trippable textual form, e.g. 'random:p=0.1,seed=3'."""
    if isinstance(kind, FixedStride):
        return f"fixed-stride:stride={kind.stride}"
    if isinstance(kind, RandomChunk):
        return f"random:p={kind.p!r},seed={kind.seed}"
    if isinstance(kind, NeuralBoundary):
        return f"neural-boundary:seed={kind.seed}"
    return kind.tag


def strategy_from_str(text: str) -> StrategyKind:
    tag, _, params = text.partition(":")
    kwargs = {}
    if params:
        for item in params.split(","):
            key, _, value = item.partition("=")
            key = key.strip()
            if key == "stride":
                kwargs["stride"] = int(value)
            elif key == "p":
                kwargs["p"] = float(value)
            elif key == "seed":
                kwargs["seed"] = int(value)
            else:
                raise ValueError(f"unknown strategy parameter {key!r}")
    return make_strategy(tag.strip(), **kwargs)


def fit_bigram(byte_ids: np.ndarray) -> np.ndarray:
    """Conditional next-symbol table P(v | u) with add-one smoothing."""
    ids = np.asarray(byte_ids, dtype=np.int64).ravel()
    counts = np.ones((VOCAB_SIZE, VOCAB_SIZE), dtype=np.float64)
    if ids.size >= 2:
        np.add.at(counts, (ids[:-1], ids[1:]), 1.0)
    return counts / counts.sum(axis=1, keepdims=True)


def _seq_length(byte_ids, h) -> int:
    if byte_ids is not None:
        t = np.asarray(byte_ids).shape[-1]
    elif h is not None:
        t = np.asarray(h).shape[-2]
    else:
        raise BadShape("need bytes or representations to score")
    if byte_ids is not None and h is not None:
        ht = np.asarray(h).shape[-2]
        if ht != t:
            raise BadShape(f"bytes ({t}) and representations ({ht}) differ in length")
    return int(t)


def _require_reps(kind: StrategyKind, h) -> np.ndarray:
    if h is None or np.asarray(h).size == 0:
        raise MissingRepresentations(
            f"strategy {kind.tag!r} needs encoder representations"
        )
    return np.asarray(h, dtype=np.float64)


def _sentinel(scores: np.ndarray) -> RateProfile:
    scores = scores.astype(np.float64, copy=True)
    scores[0] = np.inf
    return RateProfile(scores=scores)


def score_positions(
    kind: StrategyKind,
    byte_ids: np.ndarray | None,
    h: np.ndarray | None,
    cfg: RateConfig,
) -> RateProfile:
    """Importance profile of one sequence under the given strategy."""
    t_len = _seq_length(byte_ids, h)
    if t_len < 1:
        raise BadShape("need at least one position")

    if isinstance(kind, FixedStride):
        scores = np.zeros(t_len)
        scores[kind.stride - 1 :: kind.stride] = 1.0
        return _sentinel(scores)

    if isinstance(kind, WordBoundary):
        ids = np.asarray(byte_ids, dtype=np.int64)
        return _sentinel(_DELIM_LOOKUP[ids].astype(np.float64))

    if isinstance(kind, RandomChunk):
        draws = (kind._rng.random(t_len) < kind.p).astype(np.float64)
        return _sentinel(draws)

    if isinstance(kind, NeuralBoundary):
        reps = _require_reps(kind, h)
        logits = reps @ kind.gate_vector(reps.shape[-1])
        uniform = kind._rng.random(t_len)
        gumbel = -np.log(-np.log(uniform))
        return _sentinel(logits + gumbel)

    if isinstance(kind, EntropyChunk):
        ids = np.asarray(byte_ids, dtype=np.int64)
        return _sentinel(kind.row_entropies(ids)[ids])

    if isinstance(kind, CosineChunk):
        reps = _require_reps(kind, h)
        scores = np.zeros(t_len)
        if t_len > 1:
            cur, prev = reps[1:], reps[:-1]
            norms = np.linalg.norm(cur, axis=1) * np.linalg.norm(prev, axis=1)
            dots = np.einsum("td,td->t", cur, prev)
            both_zero = (np.linalg.norm(cur, axis=1) == 0) & (
                np.linalg.norm(prev, axis=1) == 0
            )
            sim = np.where(norms > 0, dots / np.where(norms > 0, norms, 1.0), 0.0)
            sim = np.where(both_zero, 1.0, sim)
            scores[1:] = 1.0 - sim
        return _sentinel(scores)

    if isinstance(kind, CodingRate):
        return marginal_rates_stream(_require_reps(kind, h), cfg)

    if isinstance(kind, CodingRateL2):
        return marginal_rates_l2(_require_reps(kind, h), cfg)

    raise TypeError(f"unknown strategy {kind!r}")


def _adapt_native_set(native: np.ndarray, k: int, t_len: int) -> np.ndarray:
    """Fit a native boundary set to exactly k positions.

    Oversized sets keep the k earliest positions; undersized sets are
    padded greedily with the position farthest from any current boundary
    (ties to the smallest position).
    """
    positions = np.unique(np.concatenate(([1], native)))
    if positions.size >= k:
        return positions[:k]
    selected = np.zeros(t_len + 1, dtype=bool)
    selected[positions] = True
    while selected.sum() < k:
        idx = np.flatnonzero(selected)
        dist = np.abs(np.arange(1, t_len + 1)[:, None] - idx[None, :]).min(axis=1)
        dist[selected[1:]] = -1
        best = int(np.argmax(dist)) + 1
        selected[best] = True
    return np.flatnonzero(selected)


def segment_from_profile(kind: StrategyKind, profile: RateProfile, k: int) -> BoundarySet:
    """Boundary set from an already computed profile."""
    t_len = len(profile)
    if kind.is_native_set:
        if k < 1 or k > t_len:
            raise InvalidK(f"K must be in [1, {t_len}], got {k}")
        native = np.flatnonzero(profile.scores[1:] == 1.0) + 2
        return BoundarySet(positions=_adapt_native_set(native, k, t_len))
    return select_topk(profile, k)


def segment(
    kind: StrategyKind,
    byte_ids: np.ndarray | None,
    h: np.ndarray | None,
    cfg: RateConfig,
    k: int,
) -> BoundarySet:
    """Exactly k boundaries for one sequence under the given strategy."""
    return segment_from_profile(kind, score_positions(kind, byte_ids, h, cfg), k)


def segment_batch(
    kind: StrategyKind,
    byte_ids: np.ndarray | None,
    h: np.ndarray | None,
    cfg: RateConfig,
    k: int,
) -> np.ndarray:
    """(B, K) boundary positions for a batch; rows sorted ascending.

    The exact coding-rate strategy runs through the batched
    Sherman-Morrison scorer; everything else loops over sequences.
    """
    if byte_ids is not None:
        batch = np.asarray(byte_ids).shape[0]
    else:
        batch = np.asarray(h).shape[0]
    if isinstance(kind, CodingRate):
        scores = marginal_rates_batch(_require_reps(kind, h), cfg)
        out = np.empty((batch, k), dtype=np.int64)
        for i in range(batch):
            out[i] = select_topk(RateProfile(scores=scores[i]), k).positions
        return out
    out = np.empty((batch, k), dtype=np.int64)
    for i in range(batch):
        ids_i = None if byte_ids is None else np.asarray(byte_ids)[i]
        h_i = None if h is None else np.asarray(h)[i]
        out[i] = segment(kind, ids_i, h_i, cfg, k).positions
    return out

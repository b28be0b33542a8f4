"""Corpus ingestion and the synthetic phrase corpus used by experiments.

Document framing joins files with EOS separators and prefixes every
window with BOS, so position 1 is always the BOS anchor the chunker
keeps. Contiguous framing serves raw byte windows without markers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyCorpus
from .vocab import BOS, EOS


@dataclass
class CorpusStream:
    """Deterministic window supplier over local byte files."""

    paths: list[str | Path]
    seq_len: int
    framing: str = "document"

    def __post_init__(self):
        if self.framing not in ("document", "contiguous"):
            raise ConfigError(f"unknown framing {self.framing!r}")
        if self.seq_len < 2:
            raise ConfigError("seq_len must be at least 2")
        symbols = []
        for p in self.paths:
            data = Path(p).read_bytes()
            symbols.append(np.frombuffer(data, dtype=np.uint8).astype(np.int64))
            if self.framing == "document":
                symbols.append(np.array([EOS], dtype=np.int64))
        self.symbols = (
            np.concatenate(symbols) if symbols else np.empty(0, dtype=np.int64)
        )
        if self.symbols.size == 0:
            raise EmptyCorpus(f"no bytes in {list(map(str, self.paths))}")
        self.cursor = 0

    @property
    def stride(self) -> int:
        # symbols consumed per window; document framing spends one on BOS
        return self.seq_len - 1 if self.framing == "document" else self.seq_len

    def window_at(self, start: int) -> np.ndarray:
        n = self.symbols.size
        take = self.stride
        idx = (start + np.arange(take)) % n
        body = self.symbols[idx]
        if self.framing == "document":
            return np.concatenate(([BOS], body))
        return body

    def next_batch(self, batch_size: int) -> np.ndarray:
        out = np.empty((batch_size, self.seq_len), dtype=np.int64)
        for i in range(batch_size):
            out[i] = self.window_at(self.cursor)
            self.cursor = (self.cursor + self.stride) % self.symbols.size
        return out

    def eval_windows(self, max_windows: int) -> np.ndarray:
        """Non-overlapping windows from the start, independent of cursor."""
        available = max(1, self.symbols.size // self.stride)
        count = min(max_windows, available)
        out = np.empty((count, self.seq_len), dtype=np.int64)
        for i in range(count):
            out[i] = self.window_at(i * self.stride)
        return out


_WORDS = (
    "time year people way day man thing woman life child world school "
    "state family student group country problem hand part place case week "
    "company system program question work government number night point "
    "home water room mother area money story fact month lot right study "
    "book eye job word business issue side kind head house service friend"
).split()


def make_synthetic_corpus(size_bytes: int, seed: int = 0, n_phrases: int = 12) -> bytes:
    """Mixed repeated phrases: a small pool of sentences sampled with a
    skewed distribution, newline-separated into paragraphs."""
    rng = np.random.default_rng(seed)
    phrases = []
    for _ in range(n_phrases):
        length = rng.integers(4, 8)
        words = rng.choice(len(_WORDS), size=length)
        phrases.append((" ".join(_WORDS[w] for w in words) + ". ").encode())
    weights = 1.0 / np.arange(1, n_phrases + 1)
    weights /= weights.sum()
    chunks = []
    total = 0
    since_break = 0
    while total < size_bytes:
        phrase = phrases[rng.choice(n_phrases, p=weights)]
        chunks.append(phrase)
        total += len(phrase)
        since_break += 1
        if since_break >= rng.integers(6, 12):
            chunks.append(b"\n")
            total += 1
            since_break = 0
    return b"".join(chunks)[:size_bytes]

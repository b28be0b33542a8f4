"""The five-stage hierarchy: encode, chunk, global transform, upsample, decode.

Positions are 1-based in boundary sets and chunk/bin formulas, matching
the segmentation interface; array indexing is 0-based internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import BadShape, SequenceTooLong
from .rate import RateConfig
from .strategies import CodingRate, StrategyKind, segment_batch
from .vocab import VOCAB_SIZE

LN2 = math.log(2.0)


@dataclass(frozen=True)
class ModelConfig:
    d_local: int = 64
    d_global: int = 128
    encoder_layers: int = 2
    global_layers: int = 4
    decoder_layers: int = 2
    heads_local: int = 4
    heads_global: int = 8
    window: int = 32
    global_len: int = 100
    bins: int = 16
    ff_mult: float = 2.0
    eps2: float = 1.0
    rope_theta_local: float = 5.0e5
    rope_theta_global: float = 5.0e5
    max_seq: int = 4096
    chunker: StrategyKind = field(default_factory=CodingRate)

    def __post_init__(self):
        if self.d_global < self.d_local:
            raise ValueError("global width must be at least the local width")
        if self.bins < 1:
            raise ValueError("need at least one upsample bin")
        if self.d_local % self.heads_local or self.d_global % self.heads_global:
            raise ValueError("width must divide evenly into heads")
        if self.window < 1 or self.global_len < 1:
            raise ValueError("window and global length must be positive")

    @property
    def d_ff_local(self) -> int:
        return int(round(self.ff_mult * self.d_local))

    @property
    def d_ff_global(self) -> int:
        return int(round(self.ff_mult * self.d_global))

    def rate_config(self) -> RateConfig:
        return RateConfig(eps2=self.eps2, d_local=self.d_local)

    def with_chunker(self, chunker: StrategyKind) -> "ModelConfig":
        return replace(self, chunker=chunker)


def _block_params(rng, d: int, d_ff: int, with_canon: bool, prefix: str) -> dict[str, Tensor]:
    p = {
        f"{prefix}.ln1.gain": Tensor(np.ones(d), requires_grad=True),
        f"{prefix}.attn.wq": nn.init_param(rng, (d, d)),
        f"{prefix}.attn.wk": nn.init_param(rng, (d, d)),
        f"{prefix}.attn.wv": nn.init_param(rng, (d, d)),
        f"{prefix}.attn.wo": nn.init_param(rng, (d, d)),
    }
    if with_canon:
        p[f"{prefix}.canon1.gates"] = nn.init_canon_gates(d)
    p[f"{prefix}.ln2.gain"] = Tensor(np.ones(d), requires_grad=True)
    p[f"{prefix}.ffn.w1"] = nn.init_param(rng, (d, d_ff))
    p[f"{prefix}.ffn.w2"] = nn.init_param(rng, (d, d_ff))
    p[f"{prefix}.ffn.w3"] = nn.init_param(rng, (d_ff, d))
    if with_canon:
        p[f"{prefix}.canon2.gates"] = nn.init_canon_gates(d)
    return p


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """All learnable tensors, keyed by name, in declaration order."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    params["embed.table"] = nn.init_param(
        rng, (VOCAB_SIZE, cfg.d_local), fan_in=cfg.d_local
    )
    for i in range(cfg.encoder_layers):
        params.update(_block_params(rng, cfg.d_local, cfg.d_ff_local, True, f"enc.{i}"))
    params["proj.w"] = nn.init_param(rng, (cfg.d_local, cfg.d_global))
    for i in range(cfg.global_layers):
        params.update(
            _block_params(rng, cfg.d_global, cfg.d_ff_global, False, f"glob.{i}")
        )
    params["up.bank"] = nn.init_param(
        rng, (cfg.bins, cfg.d_global, cfg.d_local), fan_in=cfg.d_global
    )
    for i in range(cfg.decoder_layers):
        params.update(_block_params(rng, cfg.d_local, cfg.d_ff_local, True, f"dec.{i}"))
    # the output head starts at zero so an untrained model is exactly uniform
    params["out.w"] = Tensor(np.zeros((cfg.d_local, VOCAB_SIZE)), requires_grad=True)
    return params


def _local_block(h: Tensor, params, prefix: str, cfg: ModelConfig, window: int | None) -> Tensor:
    attended = nn.swa_attention(
        nn.layer_norm(h, params[f"{prefix}.ln1.gain"]),
        params[f"{prefix}.attn.wq"],
        params[f"{prefix}.attn.wk"],
        params[f"{prefix}.attn.wv"],
        params[f"{prefix}.attn.wo"],
        cfg.heads_local,
        window,
        cfg.rope_theta_local,
    )
    h = nn.canon(ad.add(h, attended), params[f"{prefix}.canon1.gates"])
    ff = nn.swiglu(
        nn.layer_norm(h, params[f"{prefix}.ln2.gain"]),
        params[f"{prefix}.ffn.w1"],
        params[f"{prefix}.ffn.w2"],
        params[f"{prefix}.ffn.w3"],
    )
    return nn.canon(ad.add(h, ff), params[f"{prefix}.canon2.gates"])


def _global_block(z: Tensor, params, prefix: str, cfg: ModelConfig) -> Tensor:
    attended = nn.swa_attention(
        nn.layer_norm(z, params[f"{prefix}.ln1.gain"]),
        params[f"{prefix}.attn.wq"],
        params[f"{prefix}.attn.wk"],
        params[f"{prefix}.attn.wv"],
        params[f"{prefix}.attn.wo"],
        cfg.heads_global,
        None,
        cfg.rope_theta_global,
    )
    z = ad.add(z, attended)
    ff = nn.swiglu(
        nn.layer_norm(z, params[f"{prefix}.ln2.gain"]),
        params[f"{prefix}.ffn.w1"],
        params[f"{prefix}.ffn.w2"],
        params[f"{prefix}.ffn.w3"],
    )
    return ad.add(z, ff)


def _as_batch(byte_ids: np.ndarray) -> tuple[np.ndarray, bool]:
    ids = np.asarray(byte_ids, dtype=np.int64)
    if ids.ndim == 1:
        return ids[None, :], True
    if ids.ndim == 2:
        return ids, False
    raise BadShape(f"byte ids must be 1-d or 2-d, got {ids.shape}")


def encode_local(byte_ids: np.ndarray, params, cfg: ModelConfig) -> Tensor:
    """Contextualized byte representations, shape (B, T, d_local)."""
    ids, _ = _as_batch(byte_ids)
    t_len = ids.shape[1]
    if t_len < 1:
        raise BadShape("need at least one symbol")
    if t_len > cfg.max_seq:
        raise SequenceTooLong(f"sequence of {t_len} exceeds max_seq={cfg.max_seq}")
    h = nn.embed(ids, params["embed.table"])
    for i in range(cfg.encoder_layers):
        h = _local_block(h, params, f"enc.{i}", cfg, cfg.window)
    return h


def downsample(
    h: Tensor, params, cfg: ModelConfig, byte_ids: np.ndarray
) -> tuple[Tensor, np.ndarray]:
    """Select K positions per sequence and project them to global width.

    Boundary scores are computed on detached representations: chunking
    is a hard selection, gradients reach the encoder only through the
    selected rows and the upsample residual.
    """
    ids, _ = _as_batch(byte_ids)
    k = cfg.global_len
    if k > h.shape[-2]:
        raise BadShape(f"global length {k} exceeds sequence length {h.shape[-2]}")
    bounds = segment_batch(cfg.chunker, ids, h.data, cfg.rate_config(), k)
    picked = ad.gather_time(h, bounds - 1)
    return ad.matmul(picked, params["proj.w"]), bounds


def global_transform(z: Tensor, params, cfg: ModelConfig) -> Tensor:
    g = z
    for i in range(cfg.global_layers):
        g = _global_block(g, params, f"glob.{i}", cfg)
    return g


def bin_slices(t_len: int, bins: int) -> list[tuple[int, int, int]]:
    """Contiguous 0-based [start, end) ranges sharing one bank matrix.

    1-based bin index of position t is floor(t / (T / bins)) clamped to
    [1, bins]; ranges are grouped from that map.
    """
    positions = np.arange(1, t_len + 1)
    ids = np.clip((positions * bins) // t_len, 1, bins)
    slices = []
    start = 0
    for t in range(1, t_len + 1):
        if t == t_len or ids[t] != ids[start]:
            slices.append((start, t, int(ids[start] - 1)))
            start = t
    return slices


def chunk_index(bounds: np.ndarray, t_len: int) -> np.ndarray:
    """0-based index into the boundary rows owning each position.

    chunk(t) picks the latest boundary at or before t; bounds rows are
    1-based ascending and start at 1, so every position is covered.
    """
    idx = np.empty((bounds.shape[0], t_len), dtype=np.int64)
    positions = np.arange(1, t_len + 1)
    for b in range(bounds.shape[0]):
        idx[b] = np.searchsorted(bounds[b], positions, side="right") - 1
    return idx


def upsample(
    g: Tensor, bounds: np.ndarray, h: Tensor, params, cfg: ModelConfig
) -> Tensor:
    """Broadcast chunk outputs back to byte length with a large residual."""
    t_len = h.shape[-2]
    spread = ad.gather_time(g, chunk_index(bounds, t_len))
    mixed = ad.binned_linear(spread, params["up.bank"], bin_slices(t_len, cfg.bins))
    return ad.add(h, mixed)


def decode(s: Tensor, params, cfg: ModelConfig) -> Tensor:
    h = s
    for i in range(cfg.decoder_layers):
        h = _local_block(h, params, f"dec.{i}", cfg, cfg.window)
    return ad.matmul(h, params["out.w"])


def forward(byte_ids: np.ndarray, params, cfg: ModelConfig) -> tuple[Tensor, np.ndarray]:
    """Full pipeline to next-byte logits, shape (B, T, vocab)."""
    ids, _ = _as_batch(byte_ids)
    h = encode_local(ids, params, cfg)
    z, bounds = downsample(h, params, cfg, ids)
    g = global_transform(z, params, cfg)
    s = upsample(g, bounds, h, params, cfg)
    return decode(s, params, cfg), bounds


def forward_loss(
    byte_ids: np.ndarray, params, cfg: ModelConfig, reduction: str = "mean"
) -> tuple[Tensor, float]:
    """Teacher-forced loss over positions 2..T and the matching BPB."""
    ids, _ = _as_batch(byte_ids)
    if ids.shape[1] < 2:
        raise BadShape("need at least two symbols for a next-byte target")
    logits, _ = forward(ids, params, cfg)
    pred = ad.slice_time(logits, 0, ids.shape[1] - 1)
    loss = nn.cross_entropy_nats(logits=pred, targets=ids[:, 1:], reduction=reduction)
    n_targets = ids.shape[0] * (ids.shape[1] - 1)
    total_nats = loss.item() if reduction == "sum" else loss.item() * n_targets
    bpb = total_nats / (LN2 * n_targets)
    return loss, bpb

"""Binary checkpoint format.

Layout: magic, u32 format version, u32 header length, UTF-8 header of
``key = value`` lines (the full model configuration), u32 tensor count,
then per tensor: u32 name length, name bytes, u32 rank, u64 dims,
float64 little-endian values in row-major order. Round-trips bit-exactly.
"""

from __future__ import annotations

import dataclasses
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError
from .model import ModelConfig
from .strategies import EntropyChunk, strategy_from_str, strategy_to_str

MAGIC = b"BYTEFLOWCKPT"
VERSION = 1

_ENTROPY_TABLE_KEY = "chunker.entropy_table"


def _config_header(cfg: ModelConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "chunker":
            value = strategy_to_str(value)
        lines.append(f"{f.name} = {value!r}" if isinstance(value, str) else f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def _parse_header(text: str) -> ModelConfig:
    kwargs = {}
    field_types = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in field_types:
            raise ConfigError(f"unknown checkpoint config key {key!r}")
        if key == "chunker":
            kwargs[key] = strategy_from_str(value.strip("'\""))
        elif key in ("ff_mult", "eps2", "rope_theta_local", "rope_theta_global"):
            kwargs[key] = float(value)
        else:
            kwargs[key] = int(value)
    return ModelConfig(**kwargs)


def save(path: str | Path, cfg: ModelConfig, params: dict[str, Tensor]):
    header = _config_header(cfg).encode("utf-8")
    tensors: list[tuple[str, np.ndarray]] = [(k, v.data) for k, v in params.items()]
    if isinstance(cfg.chunker, EntropyChunk) and cfg.chunker.table is not None:
        tensors.append((_ENTROPY_TABLE_KEY, cfg.chunker.table))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(tensors)))
        for name, data in tensors:
            raw = np.ascontiguousarray(data, dtype="<f8")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", raw.ndim))
            fh.write(struct.pack(f"<{raw.ndim}Q", *raw.shape))
            fh.write(raw.tobytes())


def load(path: str | Path) -> tuple[ModelConfig, dict[str, Tensor]]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ConfigError(f"{path} is not a byteflow checkpoint")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        cfg = _parse_header(fh.read(header_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        params: dict[str, Tensor] = {}
        entropy_table = None
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
            n_values = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(fh.read(8 * n_values), dtype="<f8").reshape(dims)
            if name == _ENTROPY_TABLE_KEY:
                entropy_table = data.astype(np.float64)
            else:
                params[name] = Tensor(data.copy(), requires_grad=True)
    if entropy_table is not None and isinstance(cfg.chunker, EntropyChunk):
        cfg = cfg.with_chunker(EntropyChunk(table=entropy_table))
    return cfg, params

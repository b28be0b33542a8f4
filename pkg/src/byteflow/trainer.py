"""Training loop: AdamW with decoupled decay, cosine schedule, BPB eval.

Runs are bit-reproducible for a fixed seed: parameter init, data order
and every update are driven by explicit seeded state.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from .autodiff import Tensor, zero_grads
from .corpus import CorpusStream
from .errors import EmptyCorpus, NonFinite, NonFiniteGradient
from .model import LN2, ModelConfig, forward_loss

ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 4e-4
    warmup_steps: int = 250
    total_steps: int = 5000
    weight_decay: float = 0.1
    betas: tuple[float, float] = (0.9, 0.95)
    grad_clip: float = 0.2
    batch_size: int = 8
    seq_len: int = 256
    seed: int = 0
    eval_interval: int = 500
    eval_windows: int = 16

    def __post_init__(self):
        if not (0 <= self.warmup_steps <= self.total_steps):
            raise ValueError("need 0 <= warmup_steps <= total_steps")
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")
        b1, b2 = self.betas
        if not (0.0 < b1 < 1.0 and 0.0 < b2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")


def lr_at(step: int, tc: TrainConfig) -> float:
    """Linear warmup to the peak, then cosine decay to zero."""
    if step <= tc.warmup_steps:
        if tc.warmup_steps == 0:
            return tc.peak_lr
        return tc.peak_lr * step / tc.warmup_steps
    span = tc.total_steps - tc.warmup_steps
    progress = (step - tc.warmup_steps) / span if span > 0 else 1.0
    return max(0.0, tc.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress)))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def _global_grad_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for name, p in params.items():
        if p.grad is None:
            continue
        if not np.isfinite(p.grad).all():
            raise NonFiniteGradient(f"non-finite gradient in {name!r}")
        total += float((p.grad * p.grad).sum())
    return math.sqrt(total)


def optimizer_step(
    params: dict[str, Tensor],
    state: AdamState,
    tc: TrainConfig,
    step: int,
    lr: float | None = None,
):
    """One AdamW step: clip by global norm, decay weights, update moments."""
    if step < 1:
        raise ValueError("step counts from 1")
    lr = lr_at(step, tc) if lr is None else lr
    norm = _global_grad_norm(params)
    clip_scale = tc.grad_clip / norm if norm > tc.grad_clip else 1.0
    b1, b2 = tc.betas
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad * clip_scale
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        if tc.weight_decay:
            p.data *= 1.0 - lr * tc.weight_decay
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def evaluate_bpb(
    stream: CorpusStream,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    max_windows: int = 16,
    batch_size: int = 8,
) -> float:
    """Aggregate nats over evaluated windows divided by ln2 * byte count."""
    windows = stream.eval_windows(max_windows)
    if windows.shape[0] == 0:
        raise EmptyCorpus("evaluation stream yielded no windows")
    total_nats = 0.0
    total_bytes = 0
    for start in range(0, windows.shape[0], batch_size):
        batch = windows[start : start + batch_size]
        loss, _ = forward_loss(batch, params, cfg, reduction="sum")
        total_nats += loss.item()
        total_bytes += batch.shape[0] * (batch.shape[1] - 1)
    return total_nats / (LN2 * total_bytes)


@dataclass
class TrainResult:
    steps: int
    final_loss: float
    final_bpb: float
    eval_bpb: float | None


def train(
    cfg: ModelConfig,
    tc: TrainConfig,
    stream: CorpusStream,
    eval_stream: CorpusStream | None = None,
    params: dict[str, Tensor] | None = None,
    log_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    stop_at_bpb: float | None = None,
    log_every: int = 1,
) -> tuple[dict[str, Tensor], TrainResult]:
    """Run the optimization loop; returns trained params and a summary.

    Checkpoints (when a path is given) are written every eval_interval
    steps and at the end. ``stop_at_bpb`` ends the run early once the
    evaluation BPB drops below the threshold.
    """
    from . import checkpoint as ckpt

    if params is None:
        params = M.init_params(cfg, seed=tc.seed)
    state = AdamState()
    log_fh = open(log_path, "a") if log_path else None
    eval_bpb_value: float | None = None
    loss_value = float("nan")
    bpb_value = float("nan")
    try:
        step = 0
        for step in range(1, tc.total_steps + 1):
            t0 = time.perf_counter()
            batch = stream.next_batch(tc.batch_size)
            zero_grads(params.values())
            loss, bpb_value = forward_loss(batch, params, cfg)
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise NonFinite(f"loss became non-finite at step {step}")
            loss.backward()
            lr = lr_at(step, tc)
            optimizer_step(params, state, tc, step, lr=lr)
            wall_ms = (time.perf_counter() - t0) * 1e3
            if log_fh and (step % log_every == 0 or step == tc.total_steps):
                log_fh.write(
                    f"step={step} loss={loss_value:.10f} bpb={bpb_value:.10f} "
                    f"lr={lr:.10g} wall_ms={wall_ms:.1f}\n"
                )
            at_interval = tc.eval_interval and step % tc.eval_interval == 0
            if at_interval or step == tc.total_steps:
                if checkpoint_path:
                    ckpt.save(checkpoint_path, cfg, params)
                if eval_stream is not None:
                    eval_bpb_value = evaluate_bpb(
                        eval_stream, params, cfg, max_windows=tc.eval_windows
                    )
                    if stop_at_bpb is not None and eval_bpb_value < stop_at_bpb:
                        break
        if checkpoint_path:
            ckpt.save(checkpoint_path, cfg, params)
    finally:
        if log_fh:
            log_fh.close()
    return params, TrainResult(
        steps=step,
        final_loss=loss_value,
        final_bpb=bpb_value,
        eval_bpb=eval_bpb_value,
    )

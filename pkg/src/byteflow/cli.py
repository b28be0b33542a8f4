"""Command-line surface: segment, train, eval, ablate, dump-reps.

Exit codes: 0 success, 2 I/O problems, 3 configuration or usage errors,
4 numeric failures. All records are JSON lines with decimal numbers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import model as M
from . import checkpoint as ckpt
from .configio import build_configs, parse_file
from .corpus import CorpusStream, make_synthetic_corpus
from .errors import (
    ByteflowError,
    ConfigError,
    EmptyCorpus,
    InvalidK,
    NonFinite,
    NonFiniteGradient,
)
from .model import ModelConfig
from .strategies import (
    STRATEGY_TAGS,
    EntropyChunk,
    fit_bigram,
    make_strategy,
    score_positions,
    segment_from_profile,
    strategy_to_str,
)
from .trainer import TrainConfig, evaluate_bpb, train
from .vocab import BOS

CONFIG_ENV = "BYTEFLOW_CONFIG"
DEFAULT_RATIO = 2.56


class _UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (default stdout)")


def _add_chunker_flags(p: argparse.ArgumentParser):
    p.add_argument("--chunker", choices=STRATEGY_TAGS, default=None)
    p.add_argument("--K", type=int, default=None, dest="k")
    p.add_argument("--ratio", type=float, default=None)
    p.add_argument("--eps2", type=float, default=None)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--p-rand", type=float, default=0.1, dest="p_rand")
    p.add_argument("--checkpoint", help="model checkpoint path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="byteflow")
    sub = parser.add_subparsers(dest="command", required=True)

    p_seg = sub.add_parser("segment", help="score and segment one byte stream")
    p_seg.add_argument("--input", required=True)
    _add_common(p_seg)
    _add_chunker_flags(p_seg)
    p_seg.set_defaults(func=cmd_segment)

    p_train = sub.add_parser("train", help="train a model on byte files")
    p_train.add_argument("--corpus", nargs="+", required=True)
    p_train.add_argument("--eval-corpus", nargs="+", default=None)
    p_train.add_argument("--steps", type=int, default=None)
    p_train.add_argument("--out-dir", default="run")
    _add_common(p_train)
    _add_chunker_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="report BPB of a checkpoint")
    p_eval.add_argument("--corpus", nargs="+", required=True)
    p_eval.add_argument("--windows", type=int, default=32)
    p_eval.add_argument("--seq-len", type=int, default=None)
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_abl = sub.add_parser("ablate", help="train one model per chunking strategy")
    p_abl.add_argument("--corpus", nargs="+", required=True)
    p_abl.add_argument("--strategies", required=True, help="comma-separated tags")
    p_abl.add_argument("--seeds", default="0", help="comma-separated seeds")
    p_abl.add_argument("--steps", type=int, default=None)
    _add_common(p_abl)
    _add_chunker_flags(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    p_dump = sub.add_parser("dump-reps", help="write encoder representations")
    p_dump.add_argument("--input", required=True)
    _add_common(p_dump)
    p_dump.add_argument("--checkpoint")
    p_dump.set_defaults(func=cmd_dump_reps)

    p_gen = sub.add_parser("make-corpus", help="write a synthetic phrase corpus")
    p_gen.add_argument("--size", type=int, default=1 << 20)
    _add_common(p_gen)
    p_gen.set_defaults(func=cmd_make_corpus)

    return parser


def _load_configs(args, overrides: dict | None = None) -> tuple[ModelConfig, TrainConfig]:
    path = args.config or os.environ.get(CONFIG_ENV)
    file_values = None
    if path:
        if not Path(path).is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        file_values = parse_file(path)
    merged: dict[str, object] = dict(overrides or {})
    if getattr(args, "eps2", None) is not None:
        merged["eps2"] = args.eps2
    return build_configs(file_values, merged)


def _chunker_from_args(args, table=None):
    if args.chunker is None:
        return None
    return make_strategy(
        args.chunker, stride=args.stride, p=args.p_rand, seed=args.seed, table=table
    )


def _model_from_args(args, cfg: ModelConfig) -> tuple[ModelConfig, dict, str]:
    if getattr(args, "checkpoint", None):
        if not Path(args.checkpoint).is_file():
            raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
        loaded_cfg, params = ckpt.load(args.checkpoint)
        return loaded_cfg, params, args.checkpoint
    params = M.init_params(cfg, seed=args.seed)
    return cfg, params, "random-init"


def _open_out(args):
    return open(args.out, "w") if args.out else sys.stdout


def _finish_out(fh):
    if fh is not sys.stdout:
        fh.close()


def cmd_segment(args) -> int:
    data = Path(args.input).read_bytes()
    cfg, _ = _load_configs(args)
    chunker = _chunker_from_args(args)
    if chunker is not None:
        cfg = cfg.with_chunker(chunker)

    seq = np.concatenate(([BOS], np.frombuffer(data, dtype=np.uint8).astype(np.int64)))
    truncated = False
    if seq.size > cfg.max_seq:
        seq = seq[: cfg.max_seq]
        truncated = True
    t_len = int(seq.size)

    if args.k is not None and args.ratio is not None:
        raise ConfigError("--K and --ratio are mutually exclusive")
    if args.k is not None:
        k = args.k
    else:
        ratio = args.ratio if args.ratio is not None else DEFAULT_RATIO
        k = max(1, round(t_len / ratio))
    if not (1 <= k <= t_len):
        raise InvalidK(f"K must be in [1, {t_len}], got {k}")

    kind = cfg.chunker
    source = "none"
    h = None
    if kind.needs_reps:
        cfg, params, source = _model_from_args(args, cfg)
        if chunker is not None:
            cfg = cfg.with_chunker(chunker)
            kind = chunker
        else:
            kind = cfg.chunker
        h = M.encode_local(seq, params, cfg).data[0]

    profile = score_positions(kind, seq, h, cfg.rate_config())
    selected = set(segment_from_profile(kind, profile, k).positions.tolist())

    fh = _open_out(args)
    try:
        header = {
            "type": "header",
            "strategy": strategy_to_str(kind),
            "T": t_len,
            "K": k,
            "eps2": cfg.eps2,
            "seed": args.seed,
            "encoder": source,
            "truncated": truncated,
        }
        fh.write(json.dumps(header) + "\n")
        tag = kind.tag
        for pos in range(1, t_len + 1):
            score = profile.scores[pos - 1]
            record = {
                "pos": pos,
                "byte": int(seq[pos - 1]),
                "score": None if not np.isfinite(score) else float(score),
                "selected": pos in selected,
                "strategy": tag,
            }
            fh.write(json.dumps(record) + "\n")
        summary = {"type": "summary", "T": t_len, "K": k, "ratio": t_len / k}
        fh.write(json.dumps(summary) + "\n")
    finally:
        _finish_out(fh)
    return 0


def cmd_train(args) -> int:
    overrides: dict[str, object] = {"seed": args.seed}
    if args.steps is not None:
        overrides["total_steps"] = args.steps
    cfg, tc = _load_configs(args, overrides)
    chunker = _chunker_from_args(args)
    if chunker is not None:
        cfg = cfg.with_chunker(chunker)
    if isinstance(cfg.chunker, EntropyChunk) and cfg.chunker.table is None:
        stream_probe = CorpusStream(args.corpus, seq_len=tc.seq_len)
        cfg = cfg.with_chunker(EntropyChunk(table=fit_bigram(stream_probe.symbols)))

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "metrics.log"
    ckpt_path = out_dir / "model.ckpt"

    stream = CorpusStream(args.corpus, seq_len=tc.seq_len)
    eval_stream = CorpusStream(args.eval_corpus or args.corpus, seq_len=tc.seq_len)
    _, result = train(
        cfg,
        tc,
        stream,
        eval_stream=eval_stream,
        log_path=log_path,
        checkpoint_path=ckpt_path,
    )
    print(
        f"steps={result.steps} final_loss={result.final_loss:.6f} "
        f"eval_bpb={result.eval_bpb:.6f}"
    )
    return 0


def cmd_eval(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    cfg, params = ckpt.load(args.checkpoint)
    seq_len = args.seq_len or TrainConfig().seq_len
    stream = CorpusStream(args.corpus, seq_len=seq_len)
    bpb = evaluate_bpb(stream, params, cfg, max_windows=args.windows)
    print(f"bpb={bpb:.10f}")
    return 0


def cmd_ablate(args) -> int:
    tags = [t.strip() for t in args.strategies.split(",") if t.strip()]
    if not tags:
        raise _UsageError("strategy list is empty")
    for tag in tags:
        if tag not in STRATEGY_TAGS:
            raise ConfigError(f"unknown strategy {tag!r}")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise _UsageError("seed list is empty")

    overrides: dict[str, object] = {}
    if args.steps is not None:
        overrides["total_steps"] = args.steps
    base_cfg, base_tc = _load_configs(args, overrides)

    fh = _open_out(args)
    rows = []
    try:
        for tag in tags:
            per_seed = []
            for seed in seeds:
                row = {"type": "run", "strategy": tag, "seed": seed}
                try:
                    stream = CorpusStream(args.corpus, seq_len=base_tc.seq_len)
                    table = (
                        fit_bigram(stream.symbols) if tag == "entropy" else None
                    )
                    kind = make_strategy(
                        tag, stride=args.stride, p=args.p_rand, seed=seed, table=table
                    )
                    cfg = base_cfg.with_chunker(kind)
                    tc = TrainConfig(
                        **{
                            **{
                                f: getattr(base_tc, f)
                                for f in base_tc.__dataclass_fields__
                            },
                            "seed": seed,
                        }
                    )
                    eval_stream = CorpusStream(args.corpus, seq_len=tc.seq_len)
                    _, result = train(cfg, tc, stream, eval_stream=eval_stream)
                    row["bpb"] = result.eval_bpb
                    row["steps"] = result.steps
                    row["fixed_k_adapted"] = bool(kind.is_native_set)
                    per_seed.append(result.eval_bpb)
                except ByteflowError as exc:
                    row["error"] = f"{type(exc).__name__}: {exc}"
                fh.write(json.dumps(row) + "\n")
                rows.append(row)
            if per_seed:
                fh.write(
                    json.dumps(
                        {
                            "type": "summary",
                            "strategy": tag,
                            "mean_bpb": float(np.mean(per_seed)),
                            "seeds": seeds,
                        }
                    )
                    + "\n"
                )
    finally:
        _finish_out(fh)
    return 0


def cmd_dump_reps(args) -> int:
    data = Path(args.input).read_bytes()
    cfg, _ = _load_configs(args)
    cfg, params, source = _model_from_args(args, cfg)
    seq = np.concatenate(([BOS], np.frombuffer(data, dtype=np.uint8).astype(np.int64)))
    if seq.size > cfg.max_seq:
        seq = seq[: cfg.max_seq]
    h = M.encode_local(seq, params, cfg).data[0]
    out = args.out or "reps.npy"
    np.save(out, h)
    print(json.dumps({"T": int(h.shape[0]), "d": int(h.shape[1]), "encoder": source, "out": out}))
    return 0


def cmd_make_corpus(args) -> int:
    data = make_synthetic_corpus(args.size, seed=args.seed)
    out = args.out or "corpus.txt"
    Path(out).write_bytes(data)
    print(json.dumps({"out": out, "bytes": len(data), "seed": args.seed}))
    return 0


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except (OSError, EmptyCorpus) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, InvalidK, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NonFinite, NonFiniteGradient) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

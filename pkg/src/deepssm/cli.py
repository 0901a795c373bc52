"""Command-line entry point: ``deepssm {train,predict,evaluate,ablate,gen-data}``.

Failures exit nonzero with a single ``error: <category>: <message>`` line on stderr.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ABLATION_ROWS, ConfigError, RunConfig, _key
from .data import (
    DEFAULT_HORIZONS,
    DataFormatError,
    DescriptorError,
    generate_suite,
    load_sequence,
    save_sequence,
    write_suite,
)
from .numeric import ContractError, ShapeError
from .representation import MotionSequence
from .train import (
    CHECKPOINT,
    MANIFEST,
    TrainingDiverged,
    baseline_predictor,
    evaluate_rows,
    format_table,
    load_checkpoint,
    resolve_dataset,
    train,
)

log = logging.getLogger("deepssm")

TABLE = "table.tsv"
PREDICTION = "prediction.txt"
EVALUATE_OUT = "runs/evaluate"


class UsageError(ValueError):
    pass


# ----------------------------------------------------------------------------
# argument handling
# ----------------------------------------------------------------------------

_VALUE_FLAGS = {
    "dataset": str, "generator": str, "t1": int, "t2": int, "channels": int,
    "learning_rate": float, "epochs": int, "steps": int, "batch_size": int, "seed": int,
    "lambda1": float, "lambda2": float, "stride": int, "slope": float, "out": str,
}
_BOOL_FLAGS = ("no_xyz_split", "no_pose_branch", "no_velocity_branch", "no_Lp", "no_Lv", "no_ATPL",
               "use_observed_v0")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; flags given here override it")
    for name, typ in _VALUE_FLAGS.items():
        p.add_argument(f"--{_key(name)}", dest=name, type=typ, default=None)
    for name in _BOOL_FLAGS:
        p.add_argument(f"--{_key(name)}", dest=name, action="store_const", const=True, default=None)
    p.add_argument("--integration", choices=["consistent", "paper-literal"], default=None)


def _horizons(text: str) -> list[int]:
    try:
        hs = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad horizon list {text!r}") from None
    if not hs or min(hs) < 1:
        raise argparse.ArgumentTypeError("horizons must be positive integers")
    return hs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepssm", description="Deep state-space human motion prediction.")
    parser.add_argument("--version", action="version", version=f"deepssm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_run_flags(p)
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")

    p = sub.add_parser("predict", help="predict future frames for one sequence file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="sequence file; its last T1 frames are used")
    p.add_argument("--t2", type=int, default=None, help="frames to predict (default: model maximum)")
    p.add_argument("--out", default="runs/predict")

    p = sub.add_parser("evaluate", help="MPJPE table for a checkpoint and/or baselines")
    _add_run_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", action="append", choices=["zero", "const"], default=[])
    p.add_argument("--horizons", type=_horizons, default=None)

    p = sub.add_parser("ablate", help="train and evaluate every ablation row")
    _add_run_flags(p)
    p.add_argument("--horizons", type=_horizons, default=None)

    p = sub.add_parser("gen-data", help="write a synthetic suite with its dataset descriptor")
    p.add_argument("--generator", required=True)
    p.add_argument("--out", required=True)
    return parser


def run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {k: getattr(args, k, None) for k in (*_VALUE_FLAGS, *_BOOL_FLAGS, "integration")}
    return cfg.updated(**overrides)


def write_run_manifest(out_dir, command: str, items: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(Path(out_dir) / MANIFEST, "w", encoding="utf-8") as fh:
        fh.write(f"# deepssm {__version__}\n# numpy {np.__version__}\n")
        fh.write(f"command = {command}\n")
        for k, v in items.items():
            fh.write(f"{k} = {v}\n")


# ----------------------------------------------------------------------------
# evaluation tables
# ----------------------------------------------------------------------------

def select_horizons(requested, t2_max: int) -> list[int]:
    """Explicit horizons must fit the model; the default list is cut at ``t2_max``."""
    if requested is None:
        hs = [h for h in DEFAULT_HORIZONS if h <= t2_max]
        return hs or [t2_max]
    if max(requested) > t2_max:
        raise UsageError(f"horizon {max(requested)} exceeds the maximum T2 of {t2_max}")
    return list(requested)


def evaluation_table(sources, seqs, t1: int, horizons, stride: int = 1) -> str:
    """``sources`` is a list of ``(label, predict)``; the first gets plain ``h<t>`` columns."""
    t2 = max(horizons)
    header = ["sequence"]
    per_source = []
    for i, (label, predict) in enumerate(sources):
        header += [f"h{h}" if i == 0 else f"{label}:h{h}" for h in horizons]
        per_source.append(evaluate_rows(predict, seqs, t1, t2, horizons, stride))
    rows = []
    for k, (name, _) in enumerate(per_source[0]):
        rows.append((name, np.concatenate([src[k][1] for src in per_source])))
    return format_table(header, rows)


def _write_table(out_dir, text: str) -> Path:
    path = Path(out_dir) / TABLE
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = run_config(args).validate()
    state = train(cfg, out_dir=cfg.out, resume=args.resume)
    last = state.epoch_rows[-1] if state.epoch_rows else None
    if last:
        print(f"trained {state.step} steps; last epoch loss {last[2]:.6g}")
    print(Path(cfg.out) / CHECKPOINT)
    return 0


def cmd_predict(args) -> int:
    state = load_checkpoint(args.checkpoint)
    model = state.predictor.model
    t1, t2_max = model.config.t1, model.config.max_horizon
    t2 = t2_max if args.t2 is None else args.t2
    if not 1 <= t2 <= t2_max:
        raise UsageError(f"T2={t2} is outside 1..{t2_max} supported by the checkpoint")
    seq = load_sequence(args.input)
    if seq.frames < t1:
        raise UsageError(f"input has {seq.frames} frames; the model needs {t1}")
    window = seq.positions[-t1:]
    pred = state.predictor.predict(window[None], t2)[0]
    comments = [f"predicted {t2} frames from {args.input} with {args.checkpoint}"]
    comments += [f"input {i}: " + " ".join(repr(float(x)) for x in frame.ravel())
                  for i, frame in enumerate(window)]
    write_run_manifest(args.out, "predict", {"checkpoint": args.checkpoint, "input": args.input, "t2": t2})
    path = Path(args.out) / PREDICTION
    save_sequence(path, MotionSequence(pred, seq.frame_rate, seq.unit, seq.name), comments)
    print(path)
    return 0


def cmd_evaluate(args) -> int:
    if not args.checkpoint and not args.baseline:
        raise UsageError("give --checkpoint and/or --baseline")
    sources = []
    if args.checkpoint:
        state = load_checkpoint(args.checkpoint)
        base = state.config
        cfg = base.updated(stride=args.stride)
        if args.dataset or args.generator:
            cfg = cfg.updated(dataset=args.dataset or "", generator=args.generator or "")
        t1, t2_max = state.predictor.model.config.t1, state.predictor.model.config.max_horizon
        sources.append(("model", state.predictor.predict))
    else:
        cfg = run_config(args)
        t1, t2_max = cfg.t1, max(args.horizons or DEFAULT_HORIZONS)
    if not (cfg.dataset or cfg.generator):
        raise ConfigError("either --dataset or --generator must be given")
    # never write into a training directory unless asked to
    cfg = cfg.updated(out=args.out or EVALUATE_OUT)
    sources += [(name, baseline_predictor(name)) for name in args.baseline]
    horizons = select_horizons(args.horizons, t2_max)
    dataset = resolve_dataset(cfg)
    text = evaluation_table(sources, dataset.test, t1, horizons, cfg.stride)
    items = {"checkpoint": args.checkpoint or "", "baseline": ",".join(args.baseline),
             "horizons": ",".join(map(str, horizons)), "t1": t1}
    items.update({k: v for k, v in cfg.to_items().items() if k in ("dataset", "generator", "stride", "seed")})
    write_run_manifest(cfg.out, "evaluate", items)
    _write_table(cfg.out, text)
    sys.stdout.write(text)
    return 0


def run_ablation(cfg: RunConfig, horizons=None) -> str:
    """Train and evaluate each ablation row under ``cfg.out/rowK``; returns the combined table."""
    cfg.validate()
    dataset = resolve_dataset(cfg)
    horizons = select_horizons(horizons, cfg.t2)
    rows = []
    for k, (label, flags) in enumerate(ABLATION_ROWS, start=1):
        row_cfg = cfg.updated(out=str(Path(cfg.out) / f"row{k}"), **flags)
        row_cfg.validate()
        log.info("ablation %s: %s", label, ", ".join(_key(f) for f in flags) or "full model")
        state = train(row_cfg, dataset, out_dir=row_cfg.out)
        text = evaluation_table([("model", state.predictor.predict)], dataset.test, cfg.t1, horizons, cfg.stride)
        _write_table(row_cfg.out, text)
        average = [float(x) for x in text.rstrip("\n").split("\n")[-1].split("\t")[1:]]
        name = f"{label} " + ("+".join(_key(f) for f in flags) or "full")
        rows.append((name, average))
    return format_table(["row"] + [f"h{h}" for h in horizons], rows)


def cmd_ablate(args) -> int:
    cfg = run_config(args).validate()
    write_run_manifest(cfg.out, "ablate", cfg.to_items())
    text = run_ablation(cfg, args.horizons)
    _write_table(cfg.out, text)
    sys.stdout.write(text)
    return 0


def cmd_gen_data(args) -> int:
    suite = generate_suite(args.generator)
    path = write_suite(args.out, suite)
    write_run_manifest(args.out, "gen-data", {"generator": args.generator})
    print(path)
    return 0


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate,
            "ablate": cmd_ablate, "gen-data": cmd_gen_data}

# most specific first: several of these subclass ValueError
_CATEGORIES = [
    (ConfigError, "config"),
    (UsageError, "usage"),
    (DescriptorError, "dataset"),
    (DataFormatError, "data-format"),
    (TrainingDiverged, "diverged"),
    (ShapeError, "shape"),
    (ContractError, "contract"),
    (FileNotFoundError, "missing-file"),
    (OSError, "io"),
    (ValueError, "invalid"),
]


def error_category(exc: BaseException) -> str:
    for cls, name in _CATEGORIES:
        if isinstance(exc, cls):
            return name
    return "internal"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # one line on stderr, category first
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {error_category(exc)}: {msg}", file=sys.stderr)
        if args.verbose:
            logging.exception("traceback")
        return 1


if __name__ == "__main__":
    sys.exit(main())

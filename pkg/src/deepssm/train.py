"""Training loop, checkpoints and evaluation tables."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import numeric as nm
from .config import RunConfig
from .data import BASELINES, DatasetDescriptor, SampleWindow, generate_suite, make_windows, mpjpe
from .decoder import stack_observations
from .loss import total_loss
from .model import DeepSSM, ModelConfig
from .representation import MotionSequence, NormStats, denormalize, normalize

log = logging.getLogger(__name__)

CHECKPOINT = "checkpoint.npz"
TRAIN_LOG = "train_log.tsv"
MANIFEST = "manifest.txt"


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass
class Dataset:
    name: str
    train: list[MotionSequence]
    test: list[MotionSequence]
    ordering: list[int] | None = None
    unit: str = "mm"

    @property
    def joints(self) -> int:
        return (self.train or self.test)[0].joints


def resolve_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset:
        desc = DatasetDescriptor.load(cfg.dataset)
        return Dataset(desc.name, desc.split("train"), desc.split("test"), desc.ordering, desc.unit)
    suite = generate_suite(cfg.generator)
    return Dataset(cfg.generator, suite["train"], suite["test"], None, suite["train"][0].unit)


@dataclass
class Predictor:
    """A model plus the normalisation it was trained with; works in dataset units."""

    model: DeepSSM
    stats: NormStats

    def predict(self, inputs, horizon: int) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        anchor = inputs[..., -1:, :, :]
        poses, _ = self.model.predict(normalize(inputs - anchor, self.stats), horizon)
        return denormalize(poses, self.stats) + anchor


@dataclass
class TrainState:
    predictor: Predictor
    config: RunConfig
    step: int = 0
    step_losses: list[tuple[float, float, float]] = field(default_factory=list)
    epoch_rows: list[tuple[int, int, float, float, float]] = field(default_factory=list)


def anchored_windows(seqs, cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """Training windows expressed relative to their last observed pose."""
    wins = make_windows(seqs, cfg.t1, cfg.t2, cfg.stride)
    if not wins:
        raise ValueError(f"no training windows of length {cfg.t1 + cfg.t2} in the dataset")
    x = np.stack([w.inputs for w in wins])
    y = np.stack([w.target for w in wins])
    anchor = x[:, -1:]
    return x - anchor, y - anchor


def fit_stats(seqs, cfg: RunConfig) -> NormStats:
    x, y = anchored_windows(seqs, cfg)
    return NormStats.fit([x, y])


def build_windows(seqs, cfg: RunConfig, stats: NormStats) -> tuple[np.ndarray, np.ndarray]:
    x, y = anchored_windows(seqs, cfg)
    return normalize(x, stats), normalize(y, stats)


def batch_schedule(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train_step(model: DeepSSM, inputs: np.ndarray, targets: np.ndarray, cfg: RunConfig) -> tuple[float, float, float]:
    """One Adam step on a batch (model units). Returns ``(L, L_v, L_p)``."""
    loss_cfg = cfg.loss_config()
    targets = model.reorder(targets)
    with nm.Tape() as tape:
        obs = model.forward(inputs, targets.shape[1])
        poses, vels = stack_observations(obs)
        total, lv, lp = total_loss(poses, vels, targets, model.reorder(inputs[:, -1]), loss_cfg)
    values = (float(total.data), float(lv.data), float(lp.data))
    if not np.isfinite(values[0]):
        raise TrainingDiverged(model.store.step + 1)
    grads = model.store.named_gradients(tape.backward(total))
    nm.adam_step(model.store, grads, lr=cfg.learning_rate)
    return values


def new_state(cfg: RunConfig, dataset: Dataset) -> TrainState:
    stats = fit_stats(dataset.train, cfg)
    model = DeepSSM(cfg.model_config(dataset.joints, dataset.ordering), seed=cfg.seed)
    return TrainState(Predictor(model, stats), cfg)


def train(cfg: RunConfig, dataset: Dataset | None = None, out_dir=None, resume: bool = False,
          state: TrainState | None = None) -> TrainState:
    """Train per ``cfg``; ``steps > 0`` caps the run at that many steps, else ``epochs`` passes.

    With ``out_dir`` a checkpoint, a tab-separated per-epoch log and a manifest
    are written there. ``resume`` continues from an existing checkpoint.
    """
    cfg.validate()
    dataset = dataset or resolve_dataset(cfg)
    if state is None:
        ckpt = Path(out_dir) / CHECKPOINT if out_dir else None
        state = load_checkpoint(ckpt) if resume and ckpt and ckpt.exists() else new_state(cfg, dataset)
    model, stats = state.predictor.model, state.predictor.stats
    x, y = build_windows(dataset.train, cfg, stats)
    n = len(x)
    per_epoch = -(-n // cfg.batch_size)
    total_steps = cfg.steps if cfg.steps > 0 else cfg.epochs * per_epoch
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_manifest(Path(out_dir) / MANIFEST, cfg)
        if not resume or state.step == 0:
            with open(Path(out_dir) / TRAIN_LOG, "w", encoding="utf-8") as fh:
                fh.write("epoch\tstep\ttotal\tL_v\tL_p\n")

    while state.step < total_steps:
        epoch, offset = divmod(state.step, per_epoch)
        batches = batch_schedule(n, cfg.batch_size, cfg.seed, epoch)
        sums = np.zeros(3)
        count = 0
        for idx in batches[offset:]:
            if state.step >= total_steps:
                break
            vals = train_step(model, x[idx], y[idx], cfg)
            state.step_losses.append(vals)
            state.step += 1
            sums += vals
            count += 1
        row = (epoch + 1, state.step, *(float(v) for v in sums / max(count, 1)))
        state.epoch_rows.append(row)
        log.info("epoch %d step %d loss %.6g (L_v %.6g, L_p %.6g)", *row)
        if out_dir:
            with open(Path(out_dir) / TRAIN_LOG, "a", encoding="utf-8") as fh:
                fh.write("\t".join([str(row[0]), str(row[1])] + [repr(v) for v in row[2:]]) + "\n")
            save_checkpoint(Path(out_dir) / CHECKPOINT, state)
    return state


# ----------------------------------------------------------------------------
# checkpoints and manifests
# ----------------------------------------------------------------------------

def write_manifest(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# deepssm {__version__}\n")
        fh.write(f"# numpy {np.__version__}\n")
        for k, v in cfg.to_items().items():
            fh.write(f"{k} = {v}\n")


def save_checkpoint(path, state: TrainState) -> None:
    model = state.predictor.model
    stats = state.predictor.stats
    meta = {
        "version": __version__,
        "run_config": state.config.to_items(),
        "model_config": model.config.to_dict(),
        "seed": model.store.seed,
        "step": state.step,
        "stats": {"mean": stats.mean.tolist(), "std": stats.std.tolist(),
                  "passthrough": stats.passthrough.tolist()},
    }
    arrays = model.store.state_arrays()
    tmp = Path(str(path) + ".tmp.npz")
    np.savez(tmp, meta=np.array(json.dumps(meta)), **arrays)
    os.replace(tmp, path)


def load_checkpoint(path) -> TrainState:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        model = DeepSSM(ModelConfig(**meta["model_config"]), seed=meta["seed"])
        model.store.load_state_arrays({k: z[k] for k in z.files if k != "meta"})
    s = meta["stats"]
    stats = NormStats(np.array(s["mean"]), np.array(s["std"]), np.array(s["passthrough"], dtype=bool))
    cfg = RunConfig.from_items(meta["run_config"])
    return TrainState(Predictor(model, stats), cfg, step=meta["step"])


# ----------------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------------

def _windows_by_sequence(seqs, t1: int, t2: int, stride: int) -> list[tuple[str, list[SampleWindow]]]:
    return [(s.name, make_windows([s], t1, t2, stride)) for s in seqs]


def evaluate_rows(predict, seqs, t1: int, t2: int, horizons, stride: int = 1,
                  chunk: int = 64) -> list[tuple[str, np.ndarray]]:
    """Per-sequence MPJPE (mean over that sequence's windows) plus an ``average`` row.

    ``predict(inputs (B, T1, J, 3), t2) -> (B, t2, J, 3)`` in dataset units.
    """
    rows = []
    for name, wins in _windows_by_sequence(seqs, t1, t2, stride):
        if not wins:
            continue
        errs = []
        for i in range(0, len(wins), chunk):
            part = wins[i:i + chunk]
            x = np.stack([w.inputs for w in part])
            gt = np.stack([w.target for w in part])
            pred = predict(x, t2)
            errs.append(mpjpe(pred, gt, horizons) * len(part))
        rows.append((name, np.sum(errs, axis=0) / len(wins)))
    if not rows:
        raise ValueError("no evaluation windows in the test split")
    rows.append(("average", np.mean([r[1] for r in rows], axis=0)))
    return rows


def baseline_predictor(name: str):
    try:
        fn = BASELINES[name]
    except KeyError:
        raise ValueError(f"unknown baseline {name!r}; choose from {sorted(BASELINES)}") from None
    return fn


def format_table(header: list[str], rows: list[tuple[str, list[float]]]) -> str:
    lines = ["\t".join(header)]
    for name, vals in rows:
        lines.append("\t".join([name] + [f"{v:.4f}" for v in vals]))
    return "\n".join(lines) + "\n"

"""Sequence files, dataset descriptors, synthetic generators, baselines and MPJPE.

Sequence text format (one file per sequence)::

    J=<int> T=<int> rate=<float> unit=<string>
    x1 y1 z1 x2 y2 z2 ...      # T lines of 3*J numbers, one frame per line

Lines starting with ``#`` are comments.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .representation import MotionSequence, compute_velocities, depth_first_ordering, validate_ordering

log = logging.getLogger(__name__)

DESCRIPTOR_NAME = "dataset.txt"
DEFAULT_HORIZONS = (2, 4, 8, 10, 14, 25)

# 17-joint skeleton: pelvis, spine, thorax, neck, head, then right leg, left
# leg, right arm, left arm, each listed root-to-tip.
SKELETON_17_NAMES = (
    "pelvis", "spine", "thorax", "neck", "head",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
)
SKELETON_17_PARENTS = (-1, 0, 1, 2, 3, 0, 5, 6, 0, 8, 9, 2, 11, 12, 2, 14, 15)


class DataFormatError(ValueError):
    """A sequence or descriptor file does not follow the documented format."""


class DescriptorError(ValueError):
    """A sequence disagrees with its dataset descriptor."""


# ----------------------------------------------------------------------------
# flat key = value files (descriptors, run configs, manifests)
# ----------------------------------------------------------------------------

def read_key_values(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_key_values(path, items: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in items.items():
            fh.write(f"{key} = {value}\n")


# ----------------------------------------------------------------------------
# descriptors
# ----------------------------------------------------------------------------

@dataclass
class DatasetDescriptor:
    name: str
    joints: int
    ordering: list[int]
    frame_rate: float = 25.0
    unit: str = "mm"
    splits: dict[str, list[str]] = field(default_factory=lambda: {"train": [], "validation": [], "test": []})
    root: Path = Path(".")

    def __post_init__(self):
        validate_ordering(self.ordering, self.joints)
        if self.frame_rate <= 0:
            raise DescriptorError("frame rate must be positive")

    @classmethod
    def load(cls, path) -> "DatasetDescriptor":
        path = Path(path)
        kv = read_key_values(path)
        try:
            joints = int(kv["joints"])
            if "ordering" in kv:
                ordering = [int(x) for x in kv["ordering"].split(",")]
            elif "parents" in kv:
                ordering = depth_first_ordering(int(x) for x in kv["parents"].split(","))
            else:
                ordering = list(range(joints))
            splits = {
                s: [x.strip() for x in kv.get(s, "").split(",") if x.strip()]
                for s in ("train", "validation", "test")
            }
            return cls(
                name=kv.get("name", path.stem),
                joints=joints,
                ordering=ordering,
                frame_rate=float(kv.get("rate", 25.0)),
                unit=kv.get("unit", "mm"),
                splits=splits,
                root=path.parent,
            )
        except (KeyError, ValueError) as exc:
            raise DescriptorError(f"{path}: {exc}") from exc

    def save(self, path) -> None:
        write_key_values(path, {
            "name": self.name,
            "joints": self.joints,
            "ordering": ",".join(map(str, self.ordering)),
            "rate": repr(float(self.frame_rate)),
            "unit": self.unit,
            **{s: ", ".join(v) for s, v in self.splits.items()},
        })

    def split(self, which: str) -> list[MotionSequence]:
        return [load_sequence(self.root / name, self) for name in self.splits.get(which, [])]


# ----------------------------------------------------------------------------
# sequence files
# ----------------------------------------------------------------------------

def save_sequence(path, seq: MotionSequence, comments: list[str] | None = None) -> None:
    t, j, _ = seq.positions.shape
    with open(path, "w", encoding="utf-8") as fh:
        for c in comments or []:
            fh.write(f"# {c}\n")
        fh.write(f"J={j} T={t} rate={float(seq.frame_rate)!r} unit={seq.unit}\n")
        for frame in seq.positions.reshape(t, -1):
            fh.write(" ".join(repr(float(x)) for x in frame) + "\n")


def load_sequence(path, descriptor: DatasetDescriptor | None = None) -> MotionSequence:
    path = Path(path)
    header = None
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                try:
                    header = dict(tok.split("=", 1) for tok in line.split())
                    joints, frames = int(header["J"]), int(header["T"])
                    rate = float(header.get("rate", 25.0))
                except (KeyError, ValueError) as exc:
                    raise DataFormatError(f"{path}:{lineno}: bad header ({exc})") from exc
                continue
            toks = line.split()
            if len(toks) != 3 * joints:
                raise DataFormatError(f"{path}:{lineno}: expected {3 * joints} values, got {len(toks)}")
            try:
                vals = [float(x) for x in toks]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            for col, v in enumerate(vals, 1):
                if not math.isfinite(v):
                    raise DataFormatError(f"{path}:{lineno}: non-finite value at column {col}")
            rows.append(vals)
    if header is None:
        raise DataFormatError(f"{path}: missing header")
    if len(rows) != frames:
        raise DataFormatError(f"{path}: header says T={frames}, found {len(rows)} frames")
    if descriptor is not None and joints != descriptor.joints:
        raise DescriptorError(f"{path}: {joints} joints, descriptor {descriptor.name!r} expects {descriptor.joints}")
    return MotionSequence(
        np.asarray(rows).reshape(frames, joints, 3),
        frame_rate=rate,
        unit=header.get("unit", "mm"),
        name=path.stem,
    )


def load_sequences(path, descriptor: DatasetDescriptor | None = None) -> list[MotionSequence]:
    """Load one sequence file, or every ``*.txt`` file of a directory in name order.

    A ``dataset.txt`` descriptor inside the directory is skipped.
    """
    path = Path(path)
    files = sorted(f for f in path.glob("*.txt") if f.name != DESCRIPTOR_NAME) if path.is_dir() else [path]
    return [load_sequence(f, descriptor) for f in files]


# ----------------------------------------------------------------------------
# windows
# ----------------------------------------------------------------------------

@dataclass
class SampleWindow:
    inputs: np.ndarray   # (T1, J, 3)
    target: np.ndarray   # (T2, J, 3), immediately after inputs
    source: str = ""
    start: int = 0


def window_starts(frames: int, t1: int, t2: int, stride: int = 1) -> range:
    return range(0, frames - (t1 + t2) + 1, stride)


def make_windows(sequences, t1: int, t2: int, stride: int = 1) -> list[SampleWindow]:
    out = []
    for seq in sequences:
        p = seq.positions
        for s in window_starts(seq.frames, t1, t2, stride):
            out.append(SampleWindow(p[s:s + t1], p[s + t1:s + t1 + t2], seq.name, s))
    return out


# ----------------------------------------------------------------------------
# synthetic generators
# ----------------------------------------------------------------------------

def _chain_rest_pose(joints: int, rng: np.random.Generator, bone: float = 100.0) -> np.ndarray:
    """A kinematic chain: joint j hangs off joint j-1 by a random bone direction."""
    pose = np.zeros((joints, 3))
    for j in range(1, joints):
        d = rng.normal(size=3)
        pose[j] = pose[j - 1] + bone * d / np.linalg.norm(d)
    return pose


def gen_constant_velocity(joints: int, frames: int, velocity, seed: int = 0,
                          rate: float = 25.0, unit: str = "mm", name: str = "") -> MotionSequence:
    """``p(t) = p(0) + t c`` with an integer-valued start pose drawn from ``seed``.

    ``velocity`` is a 3-vector shared by all joints or a ``(J, 3)`` array.
    """
    if frames < 2:
        raise ValueError("need at least two frames")
    rng = np.random.default_rng(seed)
    start = rng.integers(-500, 500, size=(joints, 3)).astype(np.float64)
    c = np.broadcast_to(np.asarray(velocity, dtype=np.float64), (joints, 3))
    t = np.arange(frames, dtype=np.float64)[:, None, None]
    return MotionSequence(start[None] + t * c[None], rate, unit, name or f"constvel_{seed}")


def gen_sinusoid_chain(joints: int, frames: int, frequencies, amplitudes, seed: int = 0,
                       rate: float = 25.0, unit: str = "mm", name: str = "") -> MotionSequence:
    """Joints oscillate about a kinematic-chain rest pose.

    Joint ``j`` moves along a seeded unit direction with amplitude
    ``amplitudes[j]`` and frequency ``frequencies[j]`` (cycles per frame) and a
    seeded phase. Scalars broadcast over joints.
    """
    if frames < 2:
        raise ValueError("need at least two frames")
    rng = np.random.default_rng(seed)
    rest = _chain_rest_pose(joints, rng)
    dirs = rng.normal(size=(joints, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    phase = rng.uniform(0, 2 * np.pi, size=joints)
    freq = np.broadcast_to(np.asarray(frequencies, dtype=np.float64), (joints,))
    amp = np.broadcast_to(np.asarray(amplitudes, dtype=np.float64), (joints,))
    t = np.arange(frames, dtype=np.float64)[:, None]
    offset = amp * np.sin(2 * np.pi * freq * t + phase)  # (T, J)
    return MotionSequence(rest[None] + offset[..., None] * dirs[None], rate, unit, name or f"sinusoid_{seed}")


def parse_generator_spec(spec: str) -> tuple[str, dict[str, str]]:
    """``"constvel:count=8,joints=4"`` -> ``("constvel", {"count": "8", "joints": "4"})``."""
    kind, _, rest = spec.partition(":")
    opts = {}
    for item in filter(None, (x.strip() for x in rest.split(","))):
        if "=" not in item:
            raise DataFormatError(f"generator option {item!r} is not key=value")
        k, v = item.split("=", 1)
        opts[k.strip()] = v.strip()
    return kind.strip(), opts


def generate_suite(spec: str) -> dict[str, list[MotionSequence]]:
    """Build train/validation/test splits from a generator spec.

    Kinds: ``constvel`` (random integer velocity per sequence, shared by all
    joints, components in ``[-vmax, vmax]``) and ``sinusoid``. Options:
    ``count``, ``test``, ``joints``, ``frames``, ``seed``, ``vmax``,
    ``amplitude``, ``freq``.
    """
    kind, o = parse_generator_spec(spec)
    count = int(o.get("count", 16))
    n_test = int(o.get("test", max(1, count // 4)))
    joints = int(o.get("joints", 4))
    frames = int(o.get("frames", 40))
    seed = int(o.get("seed", 0))
    rng = np.random.default_rng([seed, 7919])
    seqs = []
    for i in range(count + n_test):
        s = seed * 100003 + i
        if kind == "constvel":
            vmax = int(o.get("vmax", 5))
            c = rng.integers(-vmax, vmax + 1, size=3)
            seqs.append(gen_constant_velocity(joints, frames, c, seed=s, name=f"constvel_{i:03d}"))
        elif kind == "sinusoid":
            amp = float(o.get("amplitude", 50.0))
            fmax = float(o.get("freq", 0.05))
            freqs = rng.uniform(0.2 * fmax, fmax, size=joints)
            seqs.append(gen_sinusoid_chain(joints, frames, freqs, amp, seed=s, name=f"sinusoid_{i:03d}"))
        else:
            raise DataFormatError(f"unknown generator kind {kind!r}")
    return {"train": seqs[:count], "validation": [], "test": seqs[count:]}


def write_suite(out_dir, suite: dict[str, list[MotionSequence]], name: str = "synthetic") -> Path:
    """Write every sequence plus a descriptor; returns the descriptor path."""
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    splits = {}
    first = None
    for split, seqs in suite.items():
        splits[split] = []
        for seq in seqs:
            fname = f"{seq.name}.txt"
            save_sequence(out_dir / fname, seq)
            splits[split].append(fname)
            first = first or seq
    desc = DatasetDescriptor(name, first.joints, list(range(first.joints)), first.frame_rate, first.unit, splits, out_dir)
    path = out_dir / DESCRIPTOR_NAME
    desc.save(path)
    return path


# ----------------------------------------------------------------------------
# baselines and metric
# ----------------------------------------------------------------------------

def baseline_zero_velocity(inputs: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the last observed pose. ``inputs`` is ``(..., T1, J, 3)``."""
    last = np.asarray(inputs)[..., -1:, :, :]
    reps = [1] * (last.ndim - 3) + [horizon, 1, 1]
    return np.tile(last, reps)


def baseline_constant_velocity(inputs: np.ndarray, horizon: int) -> np.ndarray:
    """Extrapolate with the last observed frame difference."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[-3] < 2:
        log.warning("constant-velocity baseline needs two frames; falling back to zero velocity")
        return baseline_zero_velocity(inputs, horizon)
    last = inputs[..., -1, :, :]
    vel = compute_velocities(inputs[..., -2:, :, :])[..., -1, :, :]
    out = np.empty(inputs.shape[:-3] + (horizon,) + inputs.shape[-2:])
    acc = last
    for t in range(horizon):
        acc = acc + vel
        out[..., t, :, :] = acc
    return out


BASELINES = {"zero": baseline_zero_velocity, "const": baseline_constant_velocity}


def mpjpe(pred: np.ndarray, gt: np.ndarray, horizons=None) -> np.ndarray:
    """Mean Euclidean joint error at each 1-based horizon.

    ``pred``/``gt`` are ``(T2, J, 3)`` or batched ``(B, T2, J, 3)``; batched
    errors are averaged over the batch. ``horizons=None`` means every step.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"mpjpe: prediction {pred.shape} and target {gt.shape} differ")
    steps = pred.shape[-3]
    horizons = list(range(1, steps + 1)) if horizons is None else list(horizons)
    for h in horizons:
        if not 1 <= h <= steps:
            raise ValueError(f"horizon {h} outside 1..{steps}")
    err = np.linalg.norm(pred - gt, axis=-1).mean(axis=-1)  # (..., T2)
    err = err.reshape(-1, steps).mean(axis=0)
    return err[[h - 1 for h in horizons]]

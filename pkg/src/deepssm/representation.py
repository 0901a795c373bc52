"""Skeletal representation: per-axis position and velocity maps (joints x frames)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MotionSequence:
    """``positions`` is ``(T, J, 3)``; units are whatever ``unit`` says (mm by default)."""

    positions: np.ndarray
    frame_rate: float = 25.0
    unit: str = "mm"
    name: str = ""

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise ValueError(f"positions must be (T, J, 3), got {self.positions.shape}")
        if self.positions.shape[0] < 1 or self.positions.shape[1] < 1:
            raise ValueError("a motion sequence needs at least one frame and one joint")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions contain non-finite values")

    @property
    def frames(self) -> int:
        return self.positions.shape[0]

    @property
    def joints(self) -> int:
        return self.positions.shape[1]

    def slice(self, start: int, stop: int) -> "MotionSequence":
        return MotionSequence(self.positions[start:stop], self.frame_rate, self.unit, self.name)


@dataclass
class SkeletalTensors:
    """Axis-split maps with joints on rows and frames on columns.

    ``positions`` and ``velocities`` are ``(..., 3, J, T)``; axis 0/1/2 of the
    third-from-last dimension is x/y/z. A leading batch dimension is allowed.
    """

    positions: np.ndarray
    velocities: np.ndarray

    @property
    def s_x(self): return self.positions[..., 0, :, :]
    @property
    def s_y(self): return self.positions[..., 1, :, :]
    @property
    def s_z(self): return self.positions[..., 2, :, :]
    @property
    def v_x(self): return self.velocities[..., 0, :, :]
    @property
    def v_y(self): return self.velocities[..., 1, :, :]
    @property
    def v_z(self): return self.velocities[..., 2, :, :]


def compute_velocities(positions) -> np.ndarray:
    """First differences along the frame axis with a zero first frame.

    Accepts a :class:`MotionSequence` or a ``(..., T, J, 3)`` array.
    """
    p = positions.positions if isinstance(positions, MotionSequence) else np.asarray(positions, dtype=np.float64)
    v = np.zeros_like(p)
    v[..., 1:, :, :] = p[..., 1:, :, :] - p[..., :-1, :, :]
    return v


def integrate_velocities(first_pose: np.ndarray, velocities: np.ndarray) -> np.ndarray:
    """Inverse of :func:`compute_velocities` given the first pose."""
    out = np.empty_like(velocities)
    acc = np.array(first_pose, dtype=np.float64)
    out[..., 0, :, :] = acc
    for t in range(1, velocities.shape[-3]):
        acc = acc + velocities[..., t, :, :]
        out[..., t, :, :] = acc
    return out


def validate_ordering(ordering, joints: int) -> np.ndarray:
    order = np.asarray(ordering, dtype=np.int64)
    if order.shape != (joints,):
        raise ValueError(f"joint ordering has {order.size} entries, sequence has {joints} joints")
    if sorted(order.tolist()) != list(range(joints)):
        raise ValueError("joint ordering is not a permutation")
    return order


def depth_first_ordering(parents) -> list[int]:
    """Depth-first joint order from a parent list (root has parent -1).

    Children are visited in index order, so a skeleton listed as trunk, right
    leg, left leg, right arm, left arm yields that limb order with every chain
    contiguous.
    """
    parents = list(parents)
    children: dict[int, list[int]] = {i: [] for i in range(len(parents))}
    roots = []
    for j, p in enumerate(parents):
        (roots if p < 0 else children[p]).append(j)
    order: list[int] = []
    stack = list(reversed(roots))
    while stack:
        j = stack.pop()
        order.append(j)
        stack.extend(reversed(children[j]))
    return order


def build_skeletal_representation(positions, ordering=None) -> SkeletalTensors:
    """Reorder joints and split positions/velocities per axis.

    ``positions`` is a :class:`MotionSequence` or a ``(..., T, J, 3)`` array.
    """
    p = positions.positions if isinstance(positions, MotionSequence) else np.asarray(positions, dtype=np.float64)
    joints = p.shape[-2]
    if ordering is not None:
        p = p[..., validate_ordering(ordering, joints), :]
    v = compute_velocities(p)
    # (..., T, J, 3) -> (..., 3, J, T)
    return SkeletalTensors(np.swapaxes(p, -1, -3).copy(), np.swapaxes(v, -1, -3).copy())


def recover_positions(tensors: SkeletalTensors, ordering=None) -> np.ndarray:
    """Invert :func:`build_skeletal_representation` back to ``(..., T, J, 3)``."""
    p = np.swapaxes(tensors.positions, -1, -3)
    if ordering is not None:
        order = validate_ordering(ordering, p.shape[-2])
        p = p[..., np.argsort(order), :]
    return p.copy()


@dataclass
class NormStats:
    """Per-axis mean/std; ``passthrough[k]`` marks a zero-variance axis left unscaled."""

    mean: np.ndarray
    std: np.ndarray
    passthrough: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=bool))

    @classmethod
    def fit(cls, sequences) -> "NormStats":
        data = np.concatenate([np.asarray(getattr(s, "positions", s)).reshape(-1, 3) for s in sequences])
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        flat = std == 0
        return cls(np.where(flat, 0.0, mean), np.where(flat, 1.0, std), flat)

    @classmethod
    def identity(cls) -> "NormStats":
        return cls(np.zeros(3), np.ones(3), np.zeros(3, dtype=bool))


def normalize(positions, stats: NormStats):
    if isinstance(positions, MotionSequence):
        return MotionSequence(normalize(positions.positions, stats), positions.frame_rate, positions.unit, positions.name)
    return (np.asarray(positions, dtype=np.float64) - stats.mean) / stats.std


def denormalize(positions, stats: NormStats):
    if isinstance(positions, MotionSequence):
        return MotionSequence(denormalize(positions.positions, stats), positions.frame_rate, positions.unit, positions.name)
    return np.asarray(positions, dtype=np.float64) * stats.std + stats.mean


def scale_velocities(velocities, stats: NormStats) -> np.ndarray:
    """Velocities in normalised units (the mean shift cancels in a difference)."""
    return np.asarray(velocities, dtype=np.float64) / stats.std


def unscale_velocities(velocities, stats: NormStats) -> np.ndarray:
    return np.asarray(velocities, dtype=np.float64) * stats.std

"""State initialisation: encode the observed window into ``h(0)`` and ``I(0)``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .dccm import DccmConfig, DccmParams, dccm_forward
from .representation import SkeletalTensors


@dataclass
class BranchParams:
    coordinate: list[DccmParams]  # the 2-DCCM stack shared by the x, y and z sub-branches
    joint: DccmParams


@dataclass
class EncoderParams:
    pose: BranchParams | None
    velocity: BranchParams | None
    fusion: nm.Conv
    xyz_split: bool = True
    dccm: DccmConfig = field(default_factory=DccmConfig)

    @classmethod
    def create(cls, store: nm.ParamStore, dccm: DccmConfig, pose_branch: bool = True,
               velocity_branch: bool = True, xyz_split: bool = True) -> "EncoderParams":
        if not (pose_branch or velocity_branch):
            raise ValueError("at least one of the pose and velocity branches must be enabled")
        n = dccm.channels

        def branch(name: str) -> BranchParams:
            in_c = 1 if xyz_split else 3
            stack = [DccmParams.create(store, f"encoder.{name}.coord{i}", in_c if i == 0 else n, dccm)
                     for i in range(2)]
            joint_in = 3 * n if xyz_split else n
            return BranchParams(stack, DccmParams.create(store, f"encoder.{name}.joint", joint_in, dccm))

        pose = branch("pose") if pose_branch else None
        velocity = branch("velocity") if velocity_branch else None
        branches = int(pose_branch) + int(velocity_branch)
        fusion = store.conv("encoder.fusion", branches * n, n, 3)
        return cls(pose, velocity, fusion, xyz_split, dccm)


@dataclass
class SystemState:
    """``I(t)``: previous pose and velocity, the feature memory, and bookkeeping.

    ``pose_prev`` and ``vel_prev`` are ``(B, J, 3)``; ``feature`` and ``h0`` are
    ``(B, N, J, T1)``. ``odd_step_history`` holds ``h_hat(t)`` for odd ``t``
    seen so far and ``memory_log`` the membership of each even-step fusion.
    """

    pose_prev: nm.Tensor
    vel_prev: nm.Tensor
    feature: nm.Tensor
    h0: nm.Tensor
    odd_step_history: list[nm.Tensor] = field(default_factory=list)
    memory_log: list[list] = field(default_factory=list)
    step: int = 0


def coordinate_features(axes: np.ndarray, branch: BranchParams, params: EncoderParams) -> nm.Tensor:
    """Coordinate-level maps of one branch.

    ``axes`` is ``(B, 3, J, T)``. With the axis split on, the result is
    ``(B, 3N, J, T)`` with channel blocks ordered x, y, z; otherwise the three
    axes enter as channels of one map and the result is ``(B, N, J, T)``.
    """
    b, _, j, t = axes.shape
    cfg = params.dccm
    if params.xyz_split:
        # x, y, z go through the same weights as one batch of 3B single-channel maps
        h = nm.Tensor(np.ascontiguousarray(axes.transpose(1, 0, 2, 3)).reshape(3 * b, 1, j, t))
    else:
        h = nm.Tensor(axes)
    for block in branch.coordinate:
        h = dccm_forward(h, block, cfg)
    if params.xyz_split:
        n = h.shape[1]
        h = nm.reshape(h, (3, b, n, j, t))
        h = nm.transpose(h, (1, 0, 2, 3, 4))
        h = nm.reshape(h, (b, 3 * n, j, t))
    return h


def branch_forward(axes: np.ndarray, branch: BranchParams, params: EncoderParams) -> nm.Tensor:
    """Joint-level features ``(B, N, J, T)`` of one branch."""
    return dccm_forward(coordinate_features(axes, branch, params), branch.joint, params.dccm)


def encode(tensors: SkeletalTensors, params: EncoderParams) -> nm.Tensor:
    """Return ``h(0)`` of shape ``(B, N, J, T1)`` for batched skeletal tensors."""
    pos = np.asarray(tensors.positions, dtype=np.float64)
    vel = np.asarray(tensors.velocities, dtype=np.float64)
    if pos.ndim == 3:
        pos, vel = pos[None], vel[None]
    if pos.shape != vel.shape or pos.ndim != 4 or pos.shape[1] != 3:
        raise nm.ShapeError(f"skeletal tensors must be (B, 3, J, T); got {pos.shape} and {vel.shape}")
    feats = []
    if params.pose is not None:
        feats.append(branch_forward(pos, params.pose, params))
    if params.velocity is not None:
        feats.append(branch_forward(vel, params.velocity, params))
    fused = params.fusion(nm.concat_channels(feats))
    return nm.leaky_relu(fused, params.dccm.slope)


def init_state(last_pose: np.ndarray, h0: nm.Tensor, last_velocity: np.ndarray | None = None) -> SystemState:
    """Build ``I(0)`` from the last observed pose ``p(0)`` (``(B, J, 3)``) and ``h(0)``.

    ``vel_prev`` is zero unless ``last_velocity`` is given (the observed-v0 variant).
    """
    last_pose = np.asarray(last_pose, dtype=np.float64)
    if last_pose.ndim == 2:
        last_pose = last_pose[None]
    vel = np.zeros_like(last_pose) if last_velocity is None else np.asarray(last_velocity, dtype=np.float64).reshape(last_pose.shape)
    return SystemState(nm.Tensor(last_pose), nm.Tensor(vel), h0, h0)

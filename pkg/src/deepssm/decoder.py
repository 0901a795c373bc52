"""Recursive decoder: state transition, observation, and the sparse feature memory."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .encoder import SystemState

CONSISTENT = "consistent"
PAPER_LITERAL = "paper-literal"


@dataclass
class Observation:
    pose: nm.Tensor      # (B, J, 3)
    velocity: nm.Tensor  # (B, J, 3)


@dataclass
class DecoderParams:
    hist1: nm.Conv
    hist2: nm.Conv
    vel: nm.Conv
    post: nm.Conv
    head: nm.Linear
    mem1: nm.Conv  # input channels: max_blocks * N, one N-wide slice per memory member
    mem2: nm.Conv
    channels: int
    max_horizon: int
    slope: float = nm.LEAKY_SLOPE

    @classmethod
    def create(cls, store: nm.ParamStore, channels: int, joints: int, frames: int,
               max_horizon: int = 25, slope: float = nm.LEAKY_SLOPE) -> "DecoderParams":
        n = channels
        return cls(
            hist1=store.conv("decoder.hist1", n, n, 3),
            hist2=store.conv("decoder.hist2", n, n, 3),
            vel=store.conv("decoder.vel", 3, n, 3),
            post=store.conv("decoder.post", n, n, 3),
            head=store.linear("decoder.head", n * joints * frames, joints * 3),
            mem1=store.conv("decoder.mem1", memory_blocks(max_horizon) * n, n, 3),
            mem2=store.conv("decoder.mem2", n, n, 3),
            channels=n,
            max_horizon=max_horizon,
            slope=slope,
        )


def memory_blocks(max_horizon: int) -> int:
    return math.ceil(max_horizon / 2) + 1


def memory_members(t: int) -> list:
    """Membership of ``F_hat(t)``: step indices, with ``"t+h0"`` for the fused current step.

    Odd ``t`` is a passthrough of ``h_hat(t)`` alone.
    """
    if t < 1:
        raise nm.ContractError(f"memory step must be >= 1, got {t}")
    if t % 2 == 1:
        return [t]
    return list(range(1, t, 2)) + [f"{t}+h0"]


def decode_step(state: SystemState, t: int, params: DecoderParams) -> tuple[nm.Tensor, nm.Tensor]:
    """One decoder pass: returns ``h_hat(t)`` ``(B, N, J, T1)`` and ``v_hat(t)`` ``(B, J, 3)``."""
    feat = state.feature
    b, n, j, frames = feat.shape
    if n != params.channels:
        raise nm.ShapeError(f"decoder expects {params.channels} feature channels, state has {feat.shape}")
    slope = params.slope
    hist = nm.leaky_relu(params.hist1(feat), slope)
    hist = nm.leaky_relu(params.hist2(hist), slope)
    # previous velocity tiled along frames: (B, J, 3) -> (B, 3, J, T1)
    v = nm.transpose(state.vel_prev, (0, 2, 1))
    v = nm.reshape(v, (b, 3, j, 1))
    v = nm.broadcast_to(v, (b, 3, j, frames))
    cur = params.vel(v)
    h_hat = nm.leaky_relu(params.post(nm.add(hist, cur)), slope)
    v_hat = nm.reshape(params.head(h_hat), (b, j, 3))
    return h_hat, v_hat


def _memory_weight(params: DecoderParams, odd_count: int) -> nm.Tensor:
    """First memory kernel sliced for ``[h(1), h(3), ..., h(t-1), h(t)+h0]``.

    Slice 0 always serves the current step, slice ``i`` serves ``h_hat(2i-1)``.
    """
    n = params.channels
    w = params.mem1.weight
    parts = [nm.take(w, (slice(None), slice(i * n, (i + 1) * n))) for i in range(1, odd_count + 1)]
    parts.append(nm.take(w, (slice(None), slice(0, n))))
    return nm.concat(parts, axis=1)


def update_memory(odd_step_history: list[nm.Tensor], h_hat: nm.Tensor, h0: nm.Tensor, t: int,
                  params: DecoderParams, log: list | None = None) -> nm.Tensor:
    """Compute ``F_hat(t)``; appends ``h_hat(t)`` to the history on odd steps."""
    members = memory_members(t)
    if t % 2 == 1:
        if len(odd_step_history) != (t - 1) // 2:
            raise nm.ContractError(f"step {t}: history holds {len(odd_step_history)} odd features, expected {(t - 1) // 2}")
        odd_step_history.append(h_hat)
        return h_hat
    if len(odd_step_history) != t // 2:
        raise nm.ContractError(f"step {t}: history holds {len(odd_step_history)} odd features, expected {t // 2}")
    if t > params.max_horizon:
        raise nm.ContractError(f"step {t} exceeds the decoder's maximum horizon {params.max_horizon}")
    if log is not None:
        log.append(members)
    blocks = list(odd_step_history) + [nm.add(h_hat, h0)]
    weight = _memory_weight(params, len(odd_step_history))
    x = nm.leaky_relu(nm.conv2d(nm.concat_channels(blocks), weight, params.mem1.bias), params.slope)
    return nm.leaky_relu(params.mem2(x), params.slope)


def integrate_pose(pose_prev: nm.Tensor, velocity: nm.Tensor) -> nm.Tensor:
    return nm.add(pose_prev, velocity)


def rollout(state: SystemState, horizon: int, params: DecoderParams,
            integration: str = CONSISTENT) -> list[Observation]:
    """Advance ``state`` ``horizon`` steps, returning one observation per step.

    With ``integration="consistent"`` the pose update uses the velocity emitted
    at the same step; ``"paper-literal"`` uses the previous step's velocity.
    """
    if horizon < 1:
        raise nm.ContractError("rollout horizon must be >= 1")
    if horizon > params.max_horizon:
        raise nm.ContractError(f"horizon {horizon} exceeds the decoder's maximum {params.max_horizon}")
    if integration not in (CONSISTENT, PAPER_LITERAL):
        raise ValueError(f"unknown integration mode {integration!r}")
    out = []
    for _ in range(horizon):
        t = state.step + 1
        h_hat, v_hat = decode_step(state, t, params)
        step_velocity = v_hat if integration == CONSISTENT else state.vel_prev
        pose = integrate_pose(state.pose_prev, step_velocity)
        feature = update_memory(state.odd_step_history, h_hat, state.h0, t, params, state.memory_log)
        out.append(Observation(pose, v_hat))
        state.pose_prev, state.vel_prev, state.feature, state.step = pose, v_hat, feature, t
    return out


def stack_observations(observations: list[Observation]) -> tuple[nm.Tensor, nm.Tensor]:
    """Poses and velocities as ``(B, T2, J, 3)`` tensors."""
    poses = nm.stack([o.pose for o in observations], axis=1)
    vels = nm.stack([o.velocity for o in observations], axis=1)
    return poses, vels


def to_numpy(observations: list[Observation]) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([o.pose.data for o in observations], axis=1),
            np.stack([o.velocity.data for o in observations], axis=1))

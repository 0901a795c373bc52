"""Attention temporal prediction loss and the combined velocity/position objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm


@dataclass
class LossConfig:
    lambda_v: float = 3.0
    lambda_p: float = 1.0
    atpl_enabled: bool = True

    def __post_init__(self):
        if self.lambda_v < 0 or self.lambda_p < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lambda_v + self.lambda_p <= 0:
            raise ValueError("at least one of lambda_v, lambda_p must be positive")


def atpl_weights(horizon: int) -> np.ndarray:
    """Per-step weights proportional to ``2 (T2 - t + 1)``, normalised to sum to one."""
    if horizon < 1:
        raise nm.ContractError(f"horizon must be >= 1, got {horizon}")
    raw = 2.0 * (horizon - np.arange(1, horizon + 1) + 1)
    return raw / raw.sum()


def uniform_weights(horizon: int) -> np.ndarray:
    if horizon < 1:
        raise nm.ContractError(f"horizon must be >= 1, got {horizon}")
    return np.full(horizon, 1.0 / horizon)


def atpl(pred: nm.Tensor, gt, weights: np.ndarray) -> nm.Tensor:
    """Weighted squared joint error, divided by the joint count.

    ``pred`` and ``gt`` are ``(T2, J, 3)`` or batched ``(B, T2, J, 3)``; the
    batched value is the mean over the batch.
    """
    pred = nm.as_tensor(pred)
    gt = nm.as_tensor(gt)
    if pred.shape != gt.shape:
        raise nm.ShapeError(f"atpl: prediction {pred.shape} and target {gt.shape} differ")
    if pred.shape[-3] != len(weights) or pred.shape[-1] != 3:
        raise nm.ShapeError(f"atpl: shape {pred.shape} does not match {len(weights)} step weights")
    joints = pred.shape[-2]
    batch = pred.shape[0] if pred.ndim == 4 else 1
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64)[:, None, None], pred.shape[-3:])
    w = np.broadcast_to(w, pred.shape) / (joints * batch)
    diff = nm.sub(pred, gt)
    return nm.sum_all(nm.mul(nm.mul(diff, diff), nm.Tensor(w)))


def target_velocities(last_pose: np.ndarray, future: np.ndarray) -> np.ndarray:
    """Ground-truth velocities of ``future`` ``(..., T2, J, 3)`` anchored at ``last_pose``."""
    future = np.asarray(future, dtype=np.float64)
    prev = np.concatenate([np.asarray(last_pose, dtype=np.float64)[..., None, :, :], future[..., :-1, :, :]], axis=-3)
    return future - prev


def total_loss(poses: nm.Tensor, velocities: nm.Tensor, gt_future: np.ndarray, last_pose: np.ndarray,
               cfg: LossConfig) -> tuple[nm.Tensor, nm.Tensor, nm.Tensor]:
    """Return ``(L, L_v, L_p)`` with ``L = lambda_v L_v + lambda_p L_p``."""
    gt_future = np.asarray(gt_future, dtype=np.float64)
    if poses.shape != gt_future.shape:
        raise nm.ShapeError(f"prediction horizon {poses.shape} does not match target {gt_future.shape}")
    horizon = gt_future.shape[-3]
    weights = atpl_weights(horizon) if cfg.atpl_enabled else uniform_weights(horizon)
    lv = atpl(velocities, target_velocities(last_pose, gt_future), weights)
    lp = atpl(poses, gt_future, weights)
    total = nm.add(nm.scale(lv, cfg.lambda_v), nm.scale(lp, cfg.lambda_p))
    return total, lv, lp

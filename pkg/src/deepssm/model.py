"""The full predictor: encoder + recursive decoder over one parameter store."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import numeric as nm
from .dccm import DccmConfig
from .decoder import CONSISTENT, PAPER_LITERAL, DecoderParams, Observation, rollout
from .encoder import EncoderParams, SystemState, encode, init_state
from .representation import MotionSequence, build_skeletal_representation, compute_velocities


@dataclass
class ModelConfig:
    joints: int
    t1: int = 10
    max_horizon: int = 25
    channels: int = 32
    slope: float = nm.LEAKY_SLOPE
    xyz_split: bool = True
    pose_branch: bool = True
    velocity_branch: bool = True
    integration: str = CONSISTENT
    observed_v0: bool = False
    ordering: list[int] | None = field(default=None)

    def __post_init__(self):
        if not (self.pose_branch or self.velocity_branch):
            raise ValueError("disabling both the pose and velocity branches leaves no input path")
        if self.integration not in (CONSISTENT, PAPER_LITERAL):
            raise ValueError(f"integration must be {CONSISTENT!r} or {PAPER_LITERAL!r}")
        if self.t1 < 1 or self.max_horizon < 1 or self.joints < 1:
            raise ValueError("t1, max_horizon and joints must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class DeepSSM:
    """Deep state-space motion predictor.

    Inputs are ``(B, T1, J, 3)`` positions in the model's working units (the
    training pipeline feeds normalised coordinates). ``predict`` returns the
    future poses and velocities in the same units.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.store = nm.ParamStore(seed=seed)
        dccm = DccmConfig(channels=config.channels, slope=config.slope)
        self.encoder = EncoderParams.create(
            self.store, dccm,
            pose_branch=config.pose_branch,
            velocity_branch=config.velocity_branch,
            xyz_split=config.xyz_split,
        )
        self.decoder = DecoderParams.create(
            self.store, config.channels, config.joints, config.t1, config.max_horizon, config.slope
        )
        order = config.ordering if config.ordering is not None else list(range(config.joints))
        self._order = np.asarray(order, dtype=np.int64)
        self._inverse = np.argsort(self._order)

    def _check_inputs(self, inputs) -> np.ndarray:
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != (self.config.t1, self.config.joints, 3):
            raise nm.ShapeError(
                f"expected inputs (B, {self.config.t1}, {self.config.joints}, 3), got {np.shape(inputs)}"
            )
        return x

    def initial_state(self, inputs) -> SystemState:
        """``I(0)`` for a batch of observed windows (joints already in model order)."""
        x = self._check_inputs(inputs)
        h0 = encode(build_skeletal_representation(x), self.encoder)
        v0 = compute_velocities(x)[:, -1] if self.config.observed_v0 else None
        return init_state(x[:, -1], h0, v0)

    def forward(self, inputs, horizon: int) -> list[Observation]:
        """Differentiable rollout; joints stay in the model's internal order."""
        x = self._check_inputs(inputs)[:, :, self._order]
        state = self.initial_state(x)
        return rollout(state, horizon, self.decoder, self.config.integration)

    def predict(self, inputs, horizon: int) -> tuple[np.ndarray, np.ndarray]:
        """Future ``(poses, velocities)``, each ``(B, horizon, J, 3)`` in input joint order."""
        obs = self.forward(inputs, horizon)
        poses = np.stack([o.pose.data for o in obs], axis=1)[:, :, self._inverse]
        vels = np.stack([o.velocity.data for o in obs], axis=1)[:, :, self._inverse]
        return poses, vels

    def reorder(self, arr: np.ndarray) -> np.ndarray:
        """Put the joint axis (second to last) of ``arr`` in model order."""
        return np.asarray(arr)[..., self._order, :]


def init_state_from_sequence(seq: MotionSequence, model: DeepSSM) -> SystemState:
    """``I(0)`` from the last ``T1`` frames of ``seq`` (unnormalised, as given)."""
    if seq.frames < model.config.t1:
        raise ValueError(f"sequence has {seq.frames} frames, model needs {model.config.t1}")
    window = seq.positions[-model.config.t1:][None]
    return model.initial_state(model.reorder(window))

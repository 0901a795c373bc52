"""Run configuration as a flat ``key = value`` file; command-line flags override it."""
from __future__ import annotations

from dataclasses import dataclass, fields

from .data import read_key_values, write_key_values
from .decoder import CONSISTENT, PAPER_LITERAL
from .loss import LossConfig
from .model import ModelConfig

ABLATION_FLAGS = ("no-xyz-split", "no-pose-branch", "no-velocity-branch", "no-Lp", "no-Lv", "no-ATPL")


class ConfigError(ValueError):
    pass


def _key(name: str) -> str:
    """Dataclass field -> config key (``no_Lp`` -> ``no-Lp``)."""
    return name.replace("_", "-")


def _parse_bool(value: str) -> bool:
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


@dataclass
class RunConfig:
    dataset: str = ""
    generator: str = ""
    t1: int = 10
    t2: int = 25
    channels: int = 32
    learning_rate: float = 1e-4
    epochs: int = 1
    steps: int = 0
    batch_size: int = 16
    seed: int = 0
    lambda1: float = 3.0
    lambda2: float = 1.0
    stride: int = 1
    slope: float = 0.2
    no_xyz_split: bool = False
    no_pose_branch: bool = False
    no_velocity_branch: bool = False
    no_Lp: bool = False
    no_Lv: bool = False
    no_ATPL: bool = False
    integration: str = CONSISTENT
    use_observed_v0: bool = False
    out: str = "runs/default"

    def validate(self) -> "RunConfig":
        if not (self.dataset or self.generator):
            raise ConfigError("either dataset or generator must be set")
        if self.no_pose_branch and self.no_velocity_branch:
            raise ConfigError("no-pose-branch and no-velocity-branch together leave no input path")
        if self.no_Lp and self.no_Lv:
            raise ConfigError("no-Lp and no-Lv together leave no training signal")
        if self.integration not in (CONSISTENT, PAPER_LITERAL):
            raise ConfigError(f"integration must be {CONSISTENT} or {PAPER_LITERAL}")
        if self.t1 < 1 or self.t2 < 1 or self.channels < 1 or self.batch_size < 1 or self.stride < 1:
            raise ConfigError("t1, t2, channels, batch-size and stride must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning-rate must be positive")
        return self

    def updated(self, **overrides) -> "RunConfig":
        data = self.to_dict_raw()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig(**data)

    def to_dict_raw(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_items(self) -> dict[str, str]:
        return {_key(f.name): str(getattr(self, f.name)).lower() if f.type in ("bool", bool)
                else str(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "RunConfig":
        by_key = {_key(f.name): f for f in fields(cls)}
        values = {}
        for key, raw in items.items():
            f = by_key.get(key)
            if f is None:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                if f.type in ("bool", bool):
                    values[f.name] = _parse_bool(raw)
                elif f.type in ("int", int):
                    values[f.name] = int(raw)
                elif f.type in ("float", float):
                    values[f.name] = float(raw)
                else:
                    values[f.name] = str(raw)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_items(read_key_values(path))

    def save(self, path) -> None:
        write_key_values(path, self.to_items())

    def model_config(self, joints: int, ordering=None) -> ModelConfig:
        return ModelConfig(
            joints=joints,
            t1=self.t1,
            max_horizon=self.t2,
            channels=self.channels,
            slope=self.slope,
            xyz_split=not self.no_xyz_split,
            pose_branch=not self.no_pose_branch,
            velocity_branch=not self.no_velocity_branch,
            integration=self.integration,
            observed_v0=self.use_observed_v0,
            ordering=list(ordering) if ordering is not None else None,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            lambda_v=0.0 if self.no_Lv else self.lambda1,
            lambda_p=0.0 if self.no_Lp else self.lambda2,
            atpl_enabled=not self.no_ATPL,
        )


# Analogues of the nine ablation rows: which flags each row switches on.
ABLATION_ROWS: list[tuple[str, dict[str, bool]]] = [
    ("#1", {"no_xyz_split": True}),
    ("#2", {"no_pose_branch": True}),
    ("#3", {"no_velocity_branch": True}),
    ("#4", {"no_Lp": True}),
    ("#5", {"no_Lv": True}),
    ("#6", {"no_ATPL": True}),
    ("#7", {"no_pose_branch": True, "no_Lp": True}),
    ("#8", {"no_velocity_branch": True, "no_Lv": True}),
    ("#9", {}),
]

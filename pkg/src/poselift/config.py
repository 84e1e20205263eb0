"""Flat key=value run configuration shared by the CLI and the scripts.

Every key is a field of :class:`RunConfig`.  Values resolve as
flags > config file > defaults.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .data import SynthSpec
from .diffcore import SGDConfig
from .geometry import CameraModel
from .losses import LossWeights
from .student import SkeletonGraph, StudentConfig, default_skeleton
from .teacher import TeacherConfig
from .training import RotationConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # training
    stage: str = "teacher"
    seed: int = 0
    epochs: int = 0  # 0 selects the stage default
    batch_size: int = 256
    lr: float = 0.001
    momentum: float = 0.9
    checkpoint_every: int = 10
    lambda_rep: float = 5.0
    lambda_ric: float = 1.0
    lambda_kd: float = 5.0
    lambda_rec: float = 1.0
    detach_cycle_target: bool = False
    rotation_mode: str = "azimuth"
    elevation_min: float = -0.2
    elevation_max: float = 0.2
    azimuth_min: float = -math.pi
    azimuth_max: float = math.pi
    # geometry and input normalization
    camera_t: float = 5.0
    target_spread: float = 0.1
    # teacher
    n_atoms: int = 12
    teacher_width: int = 1024
    teacher_bottleneck: int = 256
    teacher_blocks: int = 6
    # student
    student_width: int = 64
    student_blocks: int = 8
    physical: bool = True
    nonphysical: bool = True
    literal_eq4: bool = False
    # synthetic data
    synth_mode: str = "dictionary"
    n_samples: int = 5000
    k_true: int = 4
    coefficient_sigma: float = 1.0
    deformation_scale: float = 0.3
    bone_scale: float = 1.0
    skeleton: str = ""  # empty selects the packaged 17-joint skeleton
    # evaluation: multiplier from pose units to the PCK threshold unit
    unit_scale: float = 1.0

    def camera(self) -> CameraModel:
        return CameraModel(self.camera_t)

    def sgd(self) -> SGDConfig:
        return SGDConfig(learning_rate=self.lr, momentum=self.momentum, seed=self.seed)

    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_rep, self.lambda_ric, self.lambda_kd, self.lambda_rec)

    def teacher(self, n_joints: int = 17) -> TeacherConfig:
        return TeacherConfig(
            n_joints=n_joints,
            n_atoms=self.n_atoms,
            width=self.teacher_width,
            bottleneck=self.teacher_bottleneck,
            n_blocks=self.teacher_blocks,
        )

    def student(self, n_joints: int = 17) -> StudentConfig:
        return StudentConfig(
            n_joints=n_joints,
            width=self.student_width,
            n_blocks=self.student_blocks,
            physical=self.physical,
            nonphysical=self.nonphysical,
            literal_eq4=self.literal_eq4,
        )

    def rotation(self) -> RotationConfig:
        return RotationConfig(
            self.rotation_mode, (self.elevation_min, self.elevation_max), (self.azimuth_min, self.azimuth_max)
        )

    def train(self, stage: str | None = None) -> TrainConfig:
        stage = stage or self.stage
        return TrainConfig(
            stage=stage,
            epochs=self.epochs or None,
            batch_size=self.batch_size,
            sgd=self.sgd(),
            weights=self.weights(),
            seed=self.seed,
            checkpoint_every=self.checkpoint_every,
            rotation=self.rotation(),
            detach_cycle_target=self.detach_cycle_target,
            camera=self.camera(),
        )

    def synth(self) -> SynthSpec:
        return SynthSpec(
            mode=self.synth_mode,
            n_samples=self.n_samples,
            k_true=self.k_true,
            coefficient_sigma=self.coefficient_sigma,
            deformation_scale=self.deformation_scale,
            bone_scale=self.bone_scale,
            rotation_mode=self.rotation_mode,
            elevation_range=(self.elevation_min, self.elevation_max),
            azimuth_range=(self.azimuth_min, self.azimuth_max),
            seed=self.seed,
        )

    def graph(self) -> SkeletonGraph:
        return SkeletonGraph.from_json(self.skeleton) if self.skeleton else default_skeleton()

    def as_text(self) -> str:
        return "".join(f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self))


KEYS = {f.name: f for f in fields(RunConfig)}
_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(key: str, raw: str):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[KEYS[key].type]
    text = raw.strip()
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        try:
            out[key] = _coerce(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), str(path))


def resolve(file_values: dict | None = None, flag_values: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then flags; validates the result."""
    merged = {}
    for layer in (file_values or {}, flag_values or {}):
        for k, v in layer.items():
            if v is None:
                continue
            merged[k] = _coerce(k, v) if isinstance(v, str) else v
    cfg = dataclasses.replace(RunConfig(), **merged)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.stage not in ("teacher", "student"):
        raise ConfigError(f"stage must be teacher or student, got {cfg.stage!r}")
    if cfg.epochs < 0 or cfg.batch_size <= 0 or cfg.checkpoint_every <= 0:
        raise ConfigError("epochs, batch_size and checkpoint_every must be positive")
    try:
        cfg.sgd()
        cfg.weights()
        cfg.camera()
        cfg.teacher()
        cfg.student()
        cfg.train()
        cfg.synth()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

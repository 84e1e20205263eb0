"""Two-stage training: the teacher first, then the student under a frozen teacher.

Each epoch draws its shuffle and its cycle rotations from
``default_rng([seed, stage, epoch])``, so a run resumed from any checkpoint
replays exactly the batches an uninterrupted run would have seen.
"""

from __future__ import annotations

import csv
import hashlib
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, SGDConfig
from .geometry import CameraModel, depth_to_pose3d, sample_random_rotation
from .losses import LossWeights, kd_loss, rec_loss, reprojection_loss, ric_loss
from .student import SkeletonGraph, StudentConfig, default_skeleton, init_student, student_forward
from .teacher import TeacherConfig, init_teacher, teacher_forward

STAGE_IDS = {"teacher": 0, "student": 1}
DEFAULT_EPOCHS = {"teacher": 40, "student": 30}
CHECKPOINT_NAME = "checkpoint.json"
METRICS_NAME = "metrics.csv"


class NumericFailure(FloatingPointError):
    """Training hit a non-finite loss or gradient."""


@dataclass
class RotationConfig:
    mode: str = "azimuth"
    elevation_range: tuple[float, float] = (-0.2, 0.2)
    azimuth_range: tuple[float, float] = (-math.pi, math.pi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return sample_random_rotation(rng, self.mode, self.elevation_range, size=n, azimuth_range=self.azimuth_range)


@dataclass
class TrainConfig:
    stage: str = "teacher"
    epochs: int | None = None
    batch_size: int = 256
    sgd: SGDConfig = field(default_factory=SGDConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 10
    rotation: RotationConfig = field(default_factory=RotationConfig)
    detach_cycle_target: bool = False
    camera: CameraModel = field(default_factory=CameraModel)
    teacher_checkpoint: str | None = None

    def __post_init__(self):
        if self.stage not in STAGE_IDS:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.epochs is None:
            self.epochs = DEFAULT_EPOCHS[self.stage]
        if self.epochs <= 0 or self.batch_size <= 0 or self.checkpoint_every <= 0:
            raise ValueError("epochs, batch_size and checkpoint_every must be positive")

    def fingerprint(self) -> dict:
        """Settings that must match for a resume; epoch counts may differ."""
        d = asdict(self)
        for k in ("epochs", "checkpoint_every", "teacher_checkpoint"):
            d.pop(k)
        d["rotation"]["elevation_range"] = list(self.rotation.elevation_range)
        d["rotation"]["azimuth_range"] = list(self.rotation.azimuth_range)
        return d


@dataclass
class TrainResult:
    params: ParamStore
    history: list[dict]
    checkpoint: Path
    metrics: Path
    extra: dict = field(default_factory=dict)


def params_hash(store: ParamStore) -> str:
    h = hashlib.sha256()
    for name, t in store:
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data, dtype=np.float64).tobytes())
    return h.hexdigest()


def _batches(rng: np.random.Generator, m: int, batch_size: int):
    perm = rng.permutation(m)
    for start in range(0, m, batch_size):
        yield perm[start : start + batch_size]


def _check(value: float, what: str, epoch: int) -> None:
    if not math.isfinite(value):
        raise NumericFailure(f"non-finite {what} in epoch {epoch}")


def _write_metrics(path: Path, columns: list[str], history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch"] + columns + ["wall_time"])
        for row in history:
            w.writerow([row["epoch"]] + [repr(row[c]) for c in columns] + [f"{row.get('wall_time', float('nan')):.3f}"])


def _save(path: Path, store: ParamStore, velocity: dict, extra: dict) -> None:
    doc_extra = dict(extra)
    doc_extra["optimizer"] = {"velocity": dict(velocity)}
    dc.save_checkpoint(path, store.state(), doc_extra)


def _resume(path, store: ParamStore, cfg: TrainConfig) -> tuple[int, dict, list[dict]]:
    params, doc = dc.load_checkpoint(path)
    if doc.get("stage") != cfg.stage:
        raise ValueError(f"checkpoint {path} is from stage {doc.get('stage')!r}, not {cfg.stage!r}")
    if doc.get("train") != cfg.fingerprint():
        raise ValueError(f"checkpoint {path} was written with different training settings")
    store.load_state(params)
    velocity = dc.decode_arrays(doc["optimizer"]["velocity"])
    return int(doc["epoch"]), velocity, list(doc.get("history", []))


def _loop(
    stage: str,
    store: ParamStore,
    step_losses: Callable[[np.ndarray, np.random.Generator], tuple[dc.Tensor, dict]],  # (batch indices, rng)
    columns: list[str],
    inputs: np.ndarray,
    cfg: TrainConfig,
    out_dir: Path,
    extra: dict,
    resume,
    on_epoch=None,
) -> TrainResult:
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / CHECKPOINT_NAME
    metrics = out_dir / METRICS_NAME
    start, history = 0, []
    velocity = {k: np.zeros_like(t.data) for k, t in store}
    if resume is not None:
        start, velocity, history = _resume(resume, store, cfg)
    extra = dict(extra, stage=stage, train=cfg.fingerprint())
    m = len(inputs)
    t0 = time.perf_counter()
    for epoch in range(start, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, STAGE_IDS[stage], epoch])
        sums = dict.fromkeys(columns, 0.0)
        for idx in _batches(rng, m, cfg.batch_size):
            try:
                total, parts = step_losses(idx, rng)
            except dc.NonFiniteError as exc:
                raise NumericFailure(f"{exc} in epoch {epoch}") from None
            _check(total.item(), "loss", epoch)
            total.backward()
            try:
                dc.sgd_step(store, cfg.sgd, velocity)
            except FloatingPointError as exc:
                raise NumericFailure(f"{exc} in epoch {epoch}") from None
            for k in columns:
                sums[k] += parts[k] * len(idx)
        row = {"epoch": epoch + 1, **{k: sums[k] / m for k in columns}}
        history.append(row)
        for k in columns:
            _check(row[k], k, epoch)
        if (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs:
            saved = [{k: v for k, v in r.items() if k != "wall_time"} for r in history]
            _save(ckpt, store, velocity, dict(extra, epoch=epoch + 1, history=saved))
        row["wall_time"] = time.perf_counter() - t0
        _write_metrics(metrics, columns, history)
        if on_epoch is not None:
            on_epoch(row)
    return TrainResult(store, history, ckpt, metrics, extra)


def train_teacher(
    inputs: np.ndarray,
    cfg: TrainConfig,
    model: TeacherConfig,
    out_dir,
    resume=None,
    on_epoch=None,
) -> TrainResult:
    """Stage 1: minimise lambda_rep * L_REP + lambda_ric * L_RIC.

    ``inputs`` holds normalized 2D poses (M, 2, N).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if len(inputs) == 0:
        raise ValueError("training set is empty")
    cam, w = cfg.camera, cfg.weights
    store = init_teacher(model, np.random.default_rng([cfg.seed, STAGE_IDS["teacher"]]), inputs.mean(0), cam)

    def teacher(z):
        return teacher_forward(z, store, model)

    def step(idx, rng):
        xb = inputs[idx]
        out = teacher(xb)
        rep = reprojection_loss(out, xb, cam)
        r_rand = cfg.rotation.sample(rng, len(xb))
        ric = ric_loss(teacher, out, r_rand, cam, detach_target=cfg.detach_cycle_target)
        total = w.rep * rep + w.ric * ric
        return total, {"rep": rep.item(), "ric": ric.item(), "total": total.item()}

    extra = {"model": {"kind": "teacher", **asdict(model)}}
    return _loop("teacher", store, step, ["rep", "ric", "total"], inputs, cfg, Path(out_dir), extra, resume, on_epoch)


def load_teacher(path) -> tuple[ParamStore, TeacherConfig]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"teacher checkpoint not found: {path}")
    try:
        params, doc = dc.load_checkpoint(path)
        model = dict(doc["model"])
    except (ValueError, KeyError) as exc:
        raise ValueError(f"corrupt teacher checkpoint {path}: {exc}") from None
    if model.pop("kind", None) != "teacher":
        raise ValueError(f"{path} is not a teacher checkpoint")
    cfg = TeacherConfig(**model)
    store = ParamStore()
    for k, v in params.items():
        store.add(k, v)
    store.freeze()
    return store, cfg


def load_student(path) -> tuple[ParamStore, StudentConfig, SkeletonGraph]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"student checkpoint not found: {path}")
    try:
        params, doc = dc.load_checkpoint(path)
        model = dict(doc["model"])
        sk = doc["skeleton"]
    except (ValueError, KeyError) as exc:
        raise ValueError(f"corrupt student checkpoint {path}: {exc}") from None
    if model.pop("kind", None) != "student":
        raise ValueError(f"{path} is not a student checkpoint")
    graph = SkeletonGraph(int(sk["n_joints"]), [tuple(e) for e in sk["edges"]], int(sk["root"]))
    store = ParamStore()
    for k, v in params.items():
        store.add(k, v)
    store.freeze()
    return store, StudentConfig(**model), graph


def train_student(
    inputs: np.ndarray,
    teacher_checkpoint,
    cfg: TrainConfig,
    model: StudentConfig,
    out_dir,
    graph: SkeletonGraph | None = None,
    resume=None,
    on_epoch=None,
) -> TrainResult:
    """Stage 2: minimise lambda_kd * L_KD + lambda_rec * L_REC with the teacher frozen.

    A zero ``weights.kd`` drops the teacher from the objective (the REC-only
    ablation) but the checkpoint is still loaded and hash-checked.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if len(inputs) == 0:
        raise ValueError("training set is empty")
    graph = graph or default_skeleton()
    t_store, t_cfg = load_teacher(teacher_checkpoint)
    before = params_hash(t_store)
    cam, w = cfg.camera, cfg.weights
    store = init_student(model, np.random.default_rng([cfg.seed, STAGE_IDS["student"]]))

    def student(z):
        return student_forward(z, store, model, graph)

    # frozen teacher on fixed inputs: distillation targets are computed once
    t_depth = teacher_poses(inputs, t_store, t_cfg)[1][:, 2, :]

    def step(idx, rng):
        xb = inputs[idx]
        d = student(xb)
        kd = kd_loss(d, t_depth[idx])
        y_s = depth_to_pose3d(xb, d, cam)
        r_rand = cfg.rotation.sample(rng, len(xb))
        rec = rec_loss(student, y_s, r_rand, cam, detach_target=cfg.detach_cycle_target)
        total = w.kd * kd + w.rec * rec
        return total, {"kd": kd.item(), "rec": rec.item(), "total": total.item()}

    extra = {
        "model": {"kind": "student", **asdict(model)},
        "skeleton": {"n_joints": graph.n_joints, "root": graph.root_index, "edges": [list(e) for e in graph.edges]},
        "teacher_sha256": before,
    }
    result = _loop("student", store, step, ["kd", "rec", "total"], inputs, cfg, Path(out_dir), extra, resume, on_epoch)
    after = params_hash(t_store)
    if after != before:
        raise RuntimeError("teacher parameters changed during student training")
    result.extra["teacher_sha256_after"] = after
    return result


def lift(inputs: np.ndarray, s_store: ParamStore, s_cfg: StudentConfig, graph: SkeletonGraph, cam: CameraModel = CameraModel(), batch: int = 1024) -> np.ndarray:
    """Final framework output: the student's 3D pose for normalized 2D inputs."""
    out = []
    with dc.no_grad():
        for s in range(0, len(inputs), batch):
            xb = inputs[s : s + batch]
            d = student_forward(xb, s_store, s_cfg, graph).data
            out.append(depth_to_pose3d(xb, d, cam))
    return np.concatenate(out) if out else np.zeros((0, 3, inputs.shape[-1]))


def teacher_poses(inputs: np.ndarray, t_store: ParamStore, t_cfg: TeacherConfig, batch: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Canonical poses Y_t and camera-frame poses R_hat Y_t."""
    ys, cams = [], []
    with dc.no_grad():
        for s in range(0, len(inputs), batch):
            o = teacher_forward(inputs[s : s + batch], t_store, t_cfg)
            ys.append(o.y_t.data)
            cams.append(o.camera_pose().data)
    return np.concatenate(ys), np.concatenate(cams)

"""Synthetic benchmark pipeline used by the experiment scripts and the acceptance tests.

Every stage reads hidden ground truth only when scoring; training sees the
normalized 2D inputs alone.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluate as ev
from .config import RunConfig
from .data import SynthDataset, ground_truth_array, input_array, synth_generate
from .metrics import p_mpjpe
from .training import TrainResult, lift, load_student, load_teacher, teacher_poses, train_student, train_teacher

EVAL_SEED_OFFSET = 1000
N_EVAL = 1000


@dataclass
class Splits:
    train: SynthDataset
    held_out: SynthDataset
    x_train: np.ndarray
    x_eval: np.ndarray
    gt_eval: np.ndarray  # camera-frame, root-centred
    mean_pose: np.ndarray
    baseline: float


def make_splits(cfg: RunConfig, n_eval: int = N_EVAL) -> Splits:
    graph = cfg.graph()
    train = synth_generate(cfg.synth(), cfg.camera(), graph)
    held = synth_generate(
        dataclasses.replace(cfg.synth(), n_samples=n_eval, seed=cfg.seed + EVAL_SEED_OFFSET), cfg.camera(), graph
    )
    gt_eval = ground_truth_array(held.records, graph.root_index)
    mean = ev.mean_pose(ground_truth_array(train.records, graph.root_index), graph.root_index)
    baseline = float(p_mpjpe(ev.baseline_predictions(mean, n_eval), gt_eval).mean())
    return Splits(
        train,
        held,
        input_array(train.records, graph, cfg.target_spread),
        input_array(held.records, graph, cfg.target_spread),
        gt_eval,
        mean,
        baseline,
    )


@dataclass
class StageScore:
    p_mpjpe: float
    residuals: np.ndarray  # invariance (teacher) or equivariance (student), per held-out sample
    seconds: float
    checkpoint: Path
    history: list[dict] = field(default_factory=list)

    def share_below(self, threshold: float) -> float:
        return float(np.mean(self.residuals < threshold))


def _rotations(cfg: RunConfig, n: int, stream: int) -> np.ndarray:
    return cfg.rotation().sample(np.random.default_rng([cfg.seed, EVAL_SEED_OFFSET, stream]), n)


def score_teacher(ckpt, cfg: RunConfig, splits: Splits) -> tuple[float, np.ndarray]:
    t_store, t_cfg = load_teacher(ckpt)
    y, _ = teacher_poses(splits.x_eval, t_store, t_cfg)
    err = float(p_mpjpe(y, splits.held_out.canonical).mean())
    res = ev.invariance_residuals(splits.x_eval, t_store, t_cfg, _rotations(cfg, len(y), 0), cfg.camera())
    return err, res


def score_student(ckpt, cfg: RunConfig, splits: Splits) -> tuple[float, np.ndarray]:
    s_store, s_cfg, graph = load_student(ckpt)
    cam = cfg.camera()

    def lift_fn(x):
        return lift(x, s_store, s_cfg, graph, cam)

    y = lift_fn(splits.x_eval)
    err = float(p_mpjpe(y, splits.gt_eval).mean())
    res = ev.equivariance_residuals(splits.x_eval, lift_fn, _rotations(cfg, len(y), 1), cam)
    return err, res


def run_teacher(cfg: RunConfig, splits: Splits, out_dir, on_epoch=None) -> StageScore:
    t0 = time.perf_counter()
    res: TrainResult = train_teacher(splits.x_train, cfg.train("teacher"), cfg.teacher(), out_dir, on_epoch=on_epoch)
    seconds = time.perf_counter() - t0
    err, resid = score_teacher(res.checkpoint, cfg, splits)
    return StageScore(err, resid, seconds, res.checkpoint, res.history)


def run_student(cfg: RunConfig, splits: Splits, teacher_ckpt, out_dir, on_epoch=None) -> StageScore:
    t0 = time.perf_counter()
    res = train_student(splits.x_train, teacher_ckpt, cfg.train("student"), cfg.student(), out_dir, cfg.graph(), on_epoch=on_epoch)
    seconds = time.perf_counter() - t0
    err, resid = score_student(res.checkpoint, cfg, splits)
    return StageScore(err, resid, seconds, res.checkpoint, res.history)


def format_scores(baseline: float, scores: dict[str, StageScore]) -> str:
    lines = [f"{'run':<28}{'p_mpjpe':>10}{'/baseline':>11}{'resid_med':>11}{'seconds':>9}"]
    lines.append(f"{'mean-pose baseline':<28}{baseline:>10.4f}{1.0:>11.3f}")
    for name, s in scores.items():
        lines.append(f"{name:<28}{s.p_mpjpe:>10.4f}{s.p_mpjpe / baseline:>11.3f}{np.median(s.residuals):>11.4f}{s.seconds:>9.1f}")
    return "\n".join(lines)

"""Evaluation reports, the mean-pose baseline, trained-property residuals and SVG rendering."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .geometry import CameraModel, project_perspective, rotate_pose, root_center
from .student import SkeletonGraph
from .teacher import TeacherConfig, teacher_forward
from .diffcore import ParamStore, no_grad

REPORT_COLUMNS = ("action", "n", "mpjpe", "p_mpjpe", "pck150", "auc")
AGGREGATE = "ALL"


@dataclass
class EvalRow:
    action: str
    n: int
    mpjpe: float
    p_mpjpe: float
    pck150: float
    auc: float

    def values(self) -> tuple[float, float, float, float]:
        return (self.mpjpe, self.p_mpjpe, self.pck150, self.auc)


@dataclass
class EvalReport:
    rows: list[EvalRow]
    aggregate: EvalRow
    fingerprint: str = ""
    per_sample: dict = field(default_factory=dict, repr=False)

    def has_nan(self) -> bool:
        return any(math.isnan(v) for r in self.rows + [self.aggregate] for v in r.values())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for r in self.rows + [self.aggregate]:
                w.writerow([r.action, r.n] + [repr(float(v)) for v in r.values()])

    @classmethod
    def from_csv(cls, path) -> EvalReport:
        with open(path, newline="") as fh:
            rows = [
                EvalRow(d["action"], int(d["n"]), float(d["mpjpe"]), float(d["p_mpjpe"]), float(d["pck150"]), float(d["auc"]))
                for d in csv.DictReader(fh)
            ]
        agg = [r for r in rows if r.action == AGGREGATE]
        if not agg:
            raise ValueError(f"{path}: report has no {AGGREGATE} row")
        return cls([r for r in rows if r.action != AGGREGATE], agg[0])


def _scaled(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    return pred * metrics.optimal_scale(pred, gt)[:, None, None]


def build_report(pred, gt, actions, fingerprint: str = "", unit_scale: float = 1.0) -> EvalReport:
    """Per-action and aggregate metrics for (M, 3, N) predictions.

    PCK and AUC use the scale-normalized prediction without rotation
    alignment; ``unit_scale`` converts pose units to the threshold unit.
    """
    pred = np.asarray(pred, dtype=float) * unit_scale
    gt = np.asarray(gt, dtype=float) * unit_scale
    if len(pred) == 0:
        raise ValueError("nothing to evaluate")
    ok = np.all(np.isfinite(pred), axis=(-2, -1))
    per = {k: np.full(len(pred), np.nan) for k in REPORT_COLUMNS[2:]}
    if ok.any():
        # non-finite samples keep NaN so the report flags them
        p, g = pred[ok], gt[ok]
        scaled = _scaled(p, g)
        per["mpjpe"][ok] = metrics.mpjpe(p, g)
        per["p_mpjpe"][ok] = metrics.p_mpjpe(p, g)
        per["pck150"][ok] = metrics.pck(scaled, g)
        per["auc"][ok] = metrics.auc(scaled, g)
    actions = np.asarray(actions)
    rows = []
    for a in sorted(set(actions.tolist())):
        sel = actions == a
        rows.append(EvalRow(a, int(sel.sum()), *(float(per[k][sel].mean()) for k in REPORT_COLUMNS[2:])))
    agg = aggregate_rows(rows)
    return EvalReport(rows, agg, fingerprint, per)


def aggregate_rows(rows: list[EvalRow]) -> EvalRow:
    """Sample-weighted mean of per-action rows."""
    n = sum(r.n for r in rows)
    vals = [sum(r.n * r.values()[i] for r in rows) / n for i in range(4)]
    return EvalRow(AGGREGATE, n, *vals)


def fingerprint(*paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        if p is not None:
            h.update(Path(p).read_bytes())
    return h.hexdigest()[:16]


def mean_pose(gt, root_index: int = 0, iterations: int = 5) -> np.ndarray:
    """Average training pose after similarity-aligning every pose to the running mean.

    Alignment keeps view rotations from blurring the average when ground
    truth is stored in camera coordinates.
    """
    gt = root_center(np.asarray(gt, dtype=float), root_index)
    ref = gt[0]
    for _ in range(iterations):
        aligned = metrics.similarity_align(gt, np.broadcast_to(ref, gt.shape))
        ref = root_center(aligned.mean(axis=0), root_index)
        ref = ref / np.linalg.norm(ref) * np.mean(np.linalg.norm(gt, axis=(-2, -1)))
    return ref


def baseline_predictions(mean: np.ndarray, m: int) -> np.ndarray:
    return np.broadcast_to(mean, (m,) + mean.shape).copy()


def invariance_residuals(
    inputs: np.ndarray,
    t_store: ParamStore,
    t_cfg: TeacherConfig,
    rotations: np.ndarray,
    cam: CameraModel = CameraModel(),
) -> np.ndarray:
    """||F_t(P(R Y_t)).y_t - Y_t|| / ||Y_t|| per sample."""
    with no_grad():
        y = teacher_forward(inputs, t_store, t_cfg).y_t.data
        y2 = teacher_forward(project_perspective(rotations @ y, cam), t_store, t_cfg).y_t.data
    return metrics.relative_residual(y2, y)


def equivariance_residuals(inputs: np.ndarray, lift_fn, rotations: np.ndarray, cam: CameraModel = CameraModel()) -> np.ndarray:
    """||lift(P(R Y_s)) - R Y_s|| / ||Y_s|| per sample; ``lift_fn`` maps 2D to 3D poses."""
    y = lift_fn(inputs)
    ry = rotate_pose(y, rotations)
    y2 = lift_fn(project_perspective(ry, cam))
    return np.linalg.norm(y2 - ry, axis=(-2, -1)) / np.linalg.norm(y, axis=(-2, -1))


# -- rendering ----------------------------------------------------------------
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _panel(points: np.ndarray, graph: SkeletonGraph, x0: float, size: float, color: str, title: str) -> list[str]:
    pts = np.asarray(points, dtype=float)[:2]
    pts = pts - pts.mean(axis=1, keepdims=True)
    extent = max(float(np.abs(pts).max()), 1e-12)
    s = 0.42 * size / extent
    px = x0 + size / 2 + s * pts[0]
    py = size / 2 + 10 + s * pts[1]  # image y already points down
    out = [f'<text x="{x0 + size / 2:.1f}" y="14" text-anchor="middle" font-size="12">{title}</text>']
    for i, j in graph.edges:
        out.append(f'<line x1="{px[i]:.2f}" y1="{py[i]:.2f}" x2="{px[j]:.2f}" y2="{py[j]:.2f}" stroke="{color}" stroke-width="2"/>')
    for k in range(len(px)):
        out.append(f'<circle cx="{px[k]:.2f}" cy="{py[k]:.2f}" r="2.5" fill="{color}"/>')
    return out


def render_skeleton(poses: dict, graph: SkeletonGraph, path, size: float = 200.0) -> None:
    """Write an SVG with one panel per labelled pose (2, N) or (3, N); 3D poses are drawn front-on."""
    if not poses:
        raise ValueError("nothing to render")
    body = []
    for k, (label, pose) in enumerate(poses.items()):
        pose = np.asarray(pose, dtype=float)
        if pose.shape[-1] != graph.n_joints:
            raise ValueError(f"pose {label!r} has {pose.shape[-1]} joints, skeleton has {graph.n_joints}")
        body += _panel(pose, graph, k * size, size, _COLORS[k % len(_COLORS)], label)
    w = size * len(poses)
    svg = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{size + 10:.0f}">'] + body + ["</svg>"]
    Path(path).write_text("\n".join(svg) + "\n")

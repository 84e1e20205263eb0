"""Training losses for the teacher and the student.

Every loss is computed per sample as (1/N)·||·||² over joints and then
averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .geometry import CameraModel, depth_to_pose3d, project_perspective, rotate_pose
from .teacher import TeacherOutput


@dataclass
class LossWeights:
    rep: float = 5.0
    ric: float = 1.0
    kd: float = 5.0
    rec: float = 1.0

    def __post_init__(self):
        for k in ("rep", "ric", "kd", "rec"):
            if getattr(self, k) < 0:
                raise ValueError(f"loss weight {k} must be non-negative")


def per_joint_sq(diff: Tensor) -> Tensor:
    """(1/N)·||diff||_F² per sample for diff of shape (B, C, N) -> (B,)."""
    n = diff.shape[-1]
    return dc.square(diff).sum(axis=(-2, -1)) * (1.0 / n)


def _batch_mean(per_sample: Tensor, reduce: bool) -> Tensor:
    return per_sample.mean() if reduce else per_sample


def reprojection_loss(out: TeacherOutput, x, cam: CameraModel = CameraModel(), reduce: bool = True) -> Tensor:
    proj = project_perspective(out.camera_pose(), cam)
    return _batch_mean(per_joint_sq(proj - dc.as_tensor(x)), reduce)


def ric_loss(
    teacher: Callable[[Tensor], TeacherOutput],
    out: TeacherOutput,
    r_rand,
    cam: CameraModel = CameraModel(),
    detach_target: bool = False,
    reduce: bool = True,
) -> Tensor:
    """|| F_t(P(R_rand · Y_t)).y_t - Y_t ||² / N.

    ``teacher`` maps 2D poses to a TeacherOutput with the current parameters.
    With ``detach_target`` the first-pass pose enters the cycle as a constant.
    """
    y = out.y_t.detach() if detach_target else out.y_t
    x_new = project_perspective(rotate_pose(y, dc.as_tensor(r_rand)), cam)
    y_again = teacher(x_new).y_t
    return _batch_mean(per_joint_sq(y_again - y), reduce)


def teacher_depth(out: TeacherOutput) -> np.ndarray:
    """Third row of R_hat · Y_t as a constant array (B, N)."""
    with dc.no_grad():
        return out.camera_pose().data[..., 2, :].copy()


def kd_loss(d, t_out: TeacherOutput | np.ndarray, reduce: bool = True) -> Tensor:
    """(1/N)·||d - (R_hat Y_t)_z||²; the teacher side carries no gradient.

    ``t_out`` may also be the precomputed (B, N) teacher depth array.
    """
    d = dc.as_tensor(d)
    target = teacher_depth(t_out) if isinstance(t_out, TeacherOutput) else np.asarray(t_out, dtype=float)
    diff = d - target
    n = d.shape[-1]
    return _batch_mean(dc.square(diff).sum(axis=-1) * (1.0 / n), reduce)


def rec_loss(
    student: Callable[[Tensor], Tensor],
    y_s,
    r_rand,
    cam: CameraModel = CameraModel(),
    detach_target: bool = False,
    reduce: bool = True,
) -> Tensor:
    """|| lift(F_s(P(R_rand · Y_s))) - R_rand · Y_s ||² / N.

    ``student`` maps 2D poses to depth offsets with the current parameters.
    """
    y_s = dc.as_tensor(y_s)
    if detach_target:
        y_s = y_s.detach()
    rotated = rotate_pose(y_s, dc.as_tensor(r_rand))
    x_new = project_perspective(rotated, cam)
    y_again = depth_to_pose3d(x_new, student(x_new), cam)
    return _batch_mean(per_joint_sq(y_again - rotated), reduce)


def teacher_total(rep, ric, w: LossWeights):
    return w.rep * rep + w.ric * ric


def student_total(kd, rec, w: LossWeights):
    return w.kd * kd + w.rec * rec


def clamp_active_count(x_or_d, cam: CameraModel = CameraModel()) -> int:
    """Number of joints whose depth t + d falls below the clamp at 1."""
    d = x_or_d.data if isinstance(x_or_d, Tensor) else np.asarray(x_or_d)
    return int(np.sum(d + cam.t < 1.0))

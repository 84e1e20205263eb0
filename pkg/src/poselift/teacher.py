"""Pose-dictionary teacher: 2D pose -> (coefficients, camera rotation, canonical 3D pose)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor
from .geometry import CameraModel, depth_to_pose3d, rotation_from_params

PREFIX = "teacher."
DICT_KEY = "teacher.dict.B"


@dataclass
class TeacherConfig:
    n_joints: int = 17
    n_atoms: int = 12
    width: int = 1024
    bottleneck: int = 256
    n_blocks: int = 6
    root_index: int = 0
    atom_init_sigma: float = 0.1
    input_scale: float = 10.0

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")
        if min(self.width, self.bottleneck, self.n_blocks, self.n_joints) < 1:
            raise ValueError("teacher widths must be positive")


@dataclass
class TeacherOutput:
    c: Tensor  # (B, K)
    r_hat: Tensor  # (B, 3, 3)
    y_t: Tensor  # (B, 3, N), canonical and root-centered

    def camera_pose(self) -> Tensor:
        """R_hat · Y_t, the estimate rotated into the input view."""
        return dc.matmul(self.r_hat, self.y_t)


def _he(rng, fan_out, fan_in, gain=2.0):
    return rng.standard_normal((fan_out, fan_in)) * np.sqrt(gain / fan_in)


def init_teacher(
    cfg: TeacherConfig,
    rng: np.random.Generator,
    mean_pose2d: np.ndarray | None = None,
    cam: CameraModel = CameraModel(),
) -> ParamStore:
    """Fresh teacher parameters.

    The first atom is ``mean_pose2d`` lifted at zero depth; the rest are
    N(0, atom_init_sigma^2).
    """
    n, k, w, bn = cfg.n_joints, cfg.n_atoms, cfg.width, cfg.bottleneck
    p = ParamStore()
    p.add(PREFIX + "in.W", _he(rng, w, 2 * n))
    p.add(PREFIX + "in.b", np.zeros(w))
    for i in range(cfg.n_blocks):
        p.add(f"{PREFIX}block{i}.W1", _he(rng, bn, w))
        p.add(f"{PREFIX}block{i}.b1", np.zeros(bn))
        # small second layer keeps the residual stack near identity at init
        p.add(f"{PREFIX}block{i}.W2", _he(rng, w, bn) * 0.1)
        p.add(f"{PREFIX}block{i}.b2", np.zeros(w))
    p.add(PREFIX + "coef.W", _he(rng, k, w, gain=1.0) * 0.01)
    coef_b = np.zeros(k)
    coef_b[0] = 1.0
    p.add(PREFIX + "coef.b", coef_b)
    p.add(PREFIX + "rot.W", _he(rng, 6, w, gain=1.0) * 0.01)
    p.add(PREFIX + "rot.b", np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]))

    atoms = rng.standard_normal((k, 3, n)) * cfg.atom_init_sigma
    if mean_pose2d is not None:
        atoms[0] = depth_to_pose3d(np.asarray(mean_pose2d, dtype=float), np.zeros(n), cam)
    p.add(DICT_KEY, atoms.reshape(3 * k, n))
    return p


def pose_from_coefficients(c, dictionary, root_index: int = 0):
    """sum_k c_k B_k, root-centered.

    ``c`` is (..., K); ``dictionary`` is the (3K, N) matrix of stacked atoms.
    Works on Tensors (differentiable in both) or plain arrays.
    """
    if isinstance(c, Tensor) or isinstance(dictionary, Tensor):
        c, B = dc.as_tensor(c), dc.as_tensor(dictionary)
        k = c.shape[-1]
        if B.shape[0] != 3 * k:
            raise ValueError(f"{k} coefficients do not match dictionary of shape {B.shape}")
        n = B.shape[1]
        lead = c.shape[:-1]
        c2 = c.reshape((-1, k))
        y = dc.matmul(c2, B.reshape((k, 3 * n))).reshape(lead + (3, n))
        return y - y[..., :, root_index : root_index + 1]
    c = np.asarray(c, dtype=float)
    B = np.asarray(dictionary, dtype=float)
    k = c.shape[-1]
    if B.shape[0] != 3 * k:
        raise ValueError(f"{k} coefficients do not match dictionary of shape {B.shape}")
    n = B.shape[1]
    y = (c @ B.reshape(k, 3 * n)).reshape(c.shape[:-1] + (3, n))
    return y - y[..., :, root_index : root_index + 1]


def teacher_forward(x, params: ParamStore, cfg: TeacherConfig) -> TeacherOutput:
    """Run the teacher on 2D poses (B, 2, N) (or a single (2, N) pose)."""
    x = dc.as_tensor(x)
    single = x.ndim == 2
    if single:
        x = x.reshape((1,) + x.shape)
    b, _, n = x.shape
    if n != cfg.n_joints:
        raise ValueError(f"teacher expects {cfg.n_joints} joints, got {n}")
    # samples as columns
    h = (x * cfg.input_scale).reshape((b, 2 * n)).T
    h = dc.relu(dc.linear(h, params[PREFIX + "in.W"], params[PREFIX + "in.b"]))
    for i in range(cfg.n_blocks):
        z = dc.relu(dc.linear(h, params[f"{PREFIX}block{i}.W1"], params[f"{PREFIX}block{i}.b1"]))
        z = dc.relu(dc.linear(z, params[f"{PREFIX}block{i}.W2"], params[f"{PREFIX}block{i}.b2"]))
        h = h + z
    c = dc.linear(h, params[PREFIX + "coef.W"], params[PREFIX + "coef.b"]).T
    r6 = dc.linear(h, params[PREFIX + "rot.W"], params[PREFIX + "rot.b"]).T
    r_hat = rotation_from_params(r6)
    y_t = pose_from_coefficients(c, params[DICT_KEY], cfg.root_index)
    if single:
        return TeacherOutput(c[0], r_hat[0], y_t[0])
    return TeacherOutput(c, r_hat, y_t)


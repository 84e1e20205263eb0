"""Rotations, perspective projection and pose normalization.

Poses are stored as (..., 3, N) for 3D and (..., 2, N) for 2D, one column per
joint.  A 3D pose is root-relative; projection places the root at depth ``t``
in front of a camera with identity intrinsics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class CameraModel:
    t: float = 5.0

    def __post_init__(self):
        if not self.t > 1:
            raise ValueError(f"camera distance t must exceed 1, got {self.t}")


def _check_finite(x, what: str = "pose") -> None:
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if not np.all(np.isfinite(data)):
        raise dc.NonFiniteError(f"non-finite {what}")


def project_perspective(pose, cam: CameraModel = CameraModel()):
    """Project root-relative 3D joints (..., 3, N) to the image plane (..., 2, N).

    Depth is ``max(1, z + t)``.  Accepts a Tensor (differentiable) or an array.
    """
    _check_finite(pose)
    if isinstance(pose, Tensor):
        depth = dc.clamp_min(pose[..., 2:3, :] + cam.t, 1.0)
        return pose[..., 0:2, :] / depth
    pose = np.asarray(pose, dtype=float)
    depth = np.maximum(1.0, pose[..., 2:3, :] + cam.t)
    return pose[..., 0:2, :] / depth


def depth_to_pose3d(x, d, cam: CameraModel = CameraModel()):
    """Lift 2D joints (..., 2, N) with depth offsets (..., N) to a 3D pose.

    z_i = max(1, t + d_i); joint i becomes (u_i z_i, v_i z_i, z_i - t).
    """
    if isinstance(x, Tensor) or isinstance(d, Tensor):
        x, d = dc.as_tensor(x), dc.as_tensor(d)
        if x.shape[-1] != d.shape[-1]:
            raise ValueError("joint counts of 2D pose and depth vector differ")
        z = dc.clamp_min(d + cam.t, 1.0)
        z = z.reshape(z.shape[:-1] + (1,) + z.shape[-1:])
        return dc.concat([x * z, z - cam.t], axis=-2)
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    if x.shape[-1] != d.shape[-1]:
        raise ValueError("joint counts of 2D pose and depth vector differ")
    z = np.maximum(1.0, d + cam.t)[..., None, :]
    return np.concatenate([x * z, z - cam.t], axis=-2)


def rotate_pose(pose, r):
    """r · pose for r of shape (..., 3, 3) and pose (..., 3, N)."""
    _check_finite(pose)
    if isinstance(pose, Tensor) or isinstance(r, Tensor):
        return dc.matmul(r, pose)
    return np.asarray(r) @ np.asarray(pose)


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    """Rotation about the vertical (y) axis."""
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def is_rotation(m: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    m = np.asarray(m)
    eye = np.eye(3)
    gram = np.swapaxes(m, -1, -2) @ m
    return bool(
        np.all(np.abs(gram - eye) <= tol) and np.all(np.abs(np.linalg.det(m) - 1.0) <= tol)
    )


def sample_random_rotation(
    rng: np.random.Generator,
    mode: str = "azimuth",
    elevation_range: tuple[float, float] = (-0.2, 0.2),
    size: int | None = None,
    azimuth_range: tuple[float, float] = (-np.pi, np.pi),
) -> np.ndarray:
    """Draw rotation(s); ``size`` gives a (size, 3, 3) stack.

    azimuth: R = R_x(phi) R_y(theta), theta ~ U(azimuth_range), phi ~ U(elevation_range).
    so3-uniform: Haar measure via normalized quaternions.
    """
    n = 1 if size is None else size
    if mode == "azimuth":
        lo, hi = elevation_range
        if not hi >= lo:
            raise ValueError("empty elevation range")
        if not azimuth_range[1] >= azimuth_range[0]:
            raise ValueError("empty azimuth range")
        theta = rng.uniform(azimuth_range[0], azimuth_range[1], size=n)
        phi = rng.uniform(lo, hi, size=n)
        out = np.stack([rot_x(p) @ rot_y(t) for t, p in zip(theta, phi)])
    elif mode == "so3-uniform":
        q = rng.standard_normal((n, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        out = quat_to_matrix(q)
    else:
        raise ValueError(f"unknown rotation mode {mode!r}")
    return out[0] if size is None else out


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
            np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
            np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
        ],
        -2,
    )


def rotation_from_params(p, eps: float = 1e-8):
    """Gram-Schmidt map from 6 reals (..., 6) to a rotation matrix (..., 3, 3).

    Columns are b1 = normalize(p[0:3]), b2 = the normalized part of p[3:6]
    orthogonal to b1, and b3 = b1 x b2.
    """
    data = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=float)
    a1, a2 = data[..., 0:3], data[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1)
    perp = a2 - (np.sum(a1 * a2, axis=-1, keepdims=True) / np.maximum(n1, eps)[..., None] ** 2) * a1
    if np.any(n1 < eps) or np.any(np.linalg.norm(perp, axis=-1) < eps * np.maximum(1.0, np.linalg.norm(a2, axis=-1))):
        raise ValueError("degenerate rotation parameters")
    if not isinstance(p, Tensor):
        b1 = a1 / n1[..., None]
        b2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
        b2 /= np.linalg.norm(b2, axis=-1, keepdims=True)
        b3 = np.cross(b1, b2)
        return np.stack([b1, b2, b3], axis=-1)
    b1 = dc.normalize(p[..., 0:3])
    a2t = p[..., 3:6]
    b2 = dc.normalize(a2t - (b1 * a2t).sum(axis=-1, keepdims=True) * b1)
    b3 = dc.cross(b1, b2)
    return dc.stack([b1, b2, b3], axis=-1)


def root_center(pose, root_index: int = 0):
    """Subtract the root joint from every joint of a (..., C, N) pose."""
    pose = np.asarray(pose, dtype=float)
    n = pose.shape[-1]
    if not -n <= root_index < n:
        raise IndexError(f"root index {root_index} out of range for {n} joints")
    out = pose - pose[..., root_index : root_index + 1]
    out[..., root_index] = 0.0
    return out

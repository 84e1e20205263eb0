"""Dataset ingestion, input normalization and synthetic pose generation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .geometry import CameraModel, project_perspective, root_center, rotate_pose, sample_random_rotation
from .student import SkeletonGraph, default_skeleton

TARGET_SPREAD = 0.1


class DatasetError(ValueError):
    """Malformed dataset file; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class PoseRecord:
    id: str
    joints2d_raw: np.ndarray  # (N, 2)
    subject: str = ""
    action: str = ""
    camera_id: str = ""
    _joints3d: np.ndarray | None = field(default=None, repr=False)
    scale: float | None = None  # set by normalize_input

    @property
    def has_ground_truth(self) -> bool:
        return self._joints3d is not None

    def ground_truth_3d(self) -> np.ndarray:
        """Evaluation-only accessor for the (N, 3) ground-truth joints."""
        if self._joints3d is None:
            raise ValueError("evaluation requires ground truth")
        return self._joints3d

    def to_json(self) -> str:
        doc = {"id": self.id, "joints2d": self.joints2d_raw.tolist()}
        if self._joints3d is not None:
            doc["joints3d"] = self._joints3d.tolist()
        doc.update(subject=self.subject, action=self.action, camera=self.camera_id)
        return json.dumps(doc)


def _parse_joints(value, n: int | None, width: int, key: str, line: int) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise DatasetError(f"{key} must be a list of numeric {width}-tuples", line) from None
    if arr.ndim != 2 or arr.shape[1] != width:
        raise DatasetError(f"{key} must be a list of {width}-tuples, got shape {arr.shape}", line)
    if n is not None and arr.shape[0] != n:
        raise DatasetError(f"{key} has {arr.shape[0]} joints, skeleton has {n}", line)
    if not np.all(np.isfinite(arr)):
        raise DatasetError(f"{key} contains non-finite values", line)
    return arr


def parse_record(text: str, line: int, n_joints: int | None = None) -> PoseRecord:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"invalid JSON ({exc.msg})", line) from None
    if not isinstance(doc, dict):
        raise DatasetError("record must be a JSON object", line)
    if "joints2d" not in doc:
        raise DatasetError("record lacks joints2d", line)
    j2 = _parse_joints(doc["joints2d"], n_joints, 2, "joints2d", line)
    j3 = None
    if doc.get("joints3d") is not None:
        j3 = _parse_joints(doc["joints3d"], j2.shape[0], 3, "joints3d", line)
    return PoseRecord(
        id=str(doc.get("id", f"line{line}")),
        joints2d_raw=j2,
        subject=str(doc.get("subject", "")),
        action=str(doc.get("action", "")),
        camera_id=str(doc.get("camera", "")),
        _joints3d=j3,
    )


def iter_dataset(path, skeleton: SkeletonGraph | None = None) -> Iterator[PoseRecord]:
    """Stream records from a JSONL file in file order; blank lines are skipped."""
    n = skeleton.n_joints if skeleton is not None else None
    with open(path) as fh:
        for i, text in enumerate(fh, start=1):
            if text.strip():
                yield parse_record(text, i, n)


def load_dataset(path, skeleton: SkeletonGraph | None = None) -> list[PoseRecord]:
    return list(iter_dataset(path, skeleton))


def save_dataset(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def normalize_input(rec: PoseRecord, skeleton: SkeletonGraph, target_spread: float = TARGET_SPREAD) -> np.ndarray:
    """Root-center and rescale so the mean joint-to-root distance is ``target_spread``.

    Returns a (2, N) pose and stores the applied scale on ``rec.scale``.
    """
    x = normalize_pose2d(rec.joints2d_raw.T, skeleton.root_index, target_spread)
    rec.scale = _spread_scale(rec.joints2d_raw.T, skeleton.root_index, target_spread)
    return x


def _spread_scale(x: np.ndarray, root: int, target_spread: float) -> float:
    centred = root_center(x, root)
    spread = np.linalg.norm(centred, axis=0).mean()
    if not spread > 1e-12:
        raise ValueError("degenerate pose: all joints coincide")
    return target_spread / spread


def normalize_pose2d(x: np.ndarray, root: int = 0, target_spread: float = TARGET_SPREAD) -> np.ndarray:
    """Same as :func:`normalize_input` for a bare (2, N) array."""
    centred = root_center(x, root)
    out = centred * _spread_scale(x, root, target_spread)
    out[:, root] = 0.0
    return out


def input_array(records, skeleton: SkeletonGraph, target_spread: float = TARGET_SPREAD) -> np.ndarray:
    """Stack normalized inputs of all records into (M, 2, N)."""
    n = skeleton.n_joints
    if not records:
        return np.zeros((0, 2, n))
    return np.stack([normalize_input(r, skeleton, target_spread) for r in records])


def ground_truth_array(records, root: int = 0) -> np.ndarray:
    """Root-centred ground truth (M, 3, N); evaluation only."""
    return np.stack([root_center(r.ground_truth_3d().T, root) for r in records])


# -- synthetic data ------------------------------------------------------------
# base pose in metres: x right, y down, z away from the camera
BASE_POSE = np.array(
    [
        [0.00, 0.00, 0.00],  # pelvis
        [-0.13, 0.00, 0.00],  # r_hip
        [-0.14, 0.44, -0.03],  # r_knee
        [-0.14, 0.87, 0.02],  # r_ankle
        [0.13, 0.00, 0.00],  # l_hip
        [0.14, 0.44, -0.03],  # l_knee
        [0.14, 0.87, 0.02],  # l_ankle
        [0.00, -0.23, 0.01],  # spine
        [0.00, -0.48, 0.00],  # thorax
        [0.00, -0.58, -0.06],  # neck/nose
        [0.00, -0.70, -0.02],  # head
        [0.17, -0.46, 0.00],  # l_shoulder
        [0.22, -0.20, 0.02],  # l_elbow
        [0.24, 0.04, -0.05],  # l_wrist
        [-0.17, -0.46, 0.00],  # r_shoulder
        [-0.22, -0.20, 0.02],  # r_elbow
        [-0.24, 0.04, -0.05],  # r_wrist
    ]
).T

# anatomical ranges (radians) about (x, z) at the parent joint of each bone
_ANGLE_RANGES = {
    2: ((-1.6, 0.3), (-0.3, 0.3)),  # r_hip -> r_knee
    3: ((0.0, 1.8), (-0.1, 0.1)),  # knee
    5: ((-1.6, 0.3), (-0.3, 0.3)),
    6: ((0.0, 1.8), (-0.1, 0.1)),
    7: ((-0.4, 0.4), (-0.2, 0.2)),  # spine
    8: ((-0.3, 0.3), (-0.2, 0.2)),
    9: ((-0.4, 0.4), (-0.3, 0.3)),
    10: ((-0.3, 0.3), (-0.3, 0.3)),
    12: ((-1.8, 1.0), (-1.4, 0.3)),  # l_shoulder -> l_elbow
    13: ((-2.0, 0.0), (-0.2, 0.2)),
    15: ((-1.8, 1.0), (-0.3, 1.4)),
    16: ((-2.0, 0.0), (-0.2, 0.2)),
}

# joints whose parent bone is articulated by dictionary deformations
LIMB_JOINTS = (2, 3, 5, 6, 10, 12, 13, 15, 16)


@dataclass
class SynthSpec:
    mode: str = "dictionary"
    n_samples: int = 5000
    k_true: int = 4
    coefficient_sigma: float = 1.0
    deformation_scale: float = 0.3
    bone_scale: float = 1.0
    rotation_mode: str = "azimuth"
    elevation_range: tuple[float, float] = (-0.2, 0.2)
    azimuth_range: tuple[float, float] = (-np.pi, np.pi)
    seed: int = 0

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValueError("n_samples must be positive")
        if self.mode not in ("dictionary", "articulated"):
            raise ValueError(f"unknown synthetic mode {self.mode!r}")
        if self.mode == "dictionary" and self.k_true < 1:
            raise ValueError("k_true must be >= 1")


@dataclass
class SynthDataset:
    records: list[PoseRecord]
    canonical: np.ndarray  # (M, 3, N) hidden Y
    rotations: np.ndarray  # (M, 3, 3) hidden R
    dictionary: np.ndarray | None  # (K_true, 3, N) hidden atoms or None

    @property
    def inputs(self) -> np.ndarray:
        """Emitted 2D poses (M, 2, N) = P(R·Y)."""
        return np.stack([r.joints2d_raw.T for r in self.records])

    @property
    def camera_frame(self) -> np.ndarray:
        return self.rotations @ self.canonical


def hidden_dictionary(k_true: int, deformation_scale: float, rng: np.random.Generator) -> np.ndarray:
    """Base pose followed by k_true-1 orthogonalized deformation atoms.

    Each deformation is the displacement produced by a random articulation of
    the limbs, so atoms move whole limbs and leave the torso rigid.
    """
    base = root_center(BASE_POSE, 0)
    atoms = [base]
    norm = np.linalg.norm(base)
    basis = []
    while len(atoms) < k_true:
        v = (root_center(_articulated_pose(rng, 1.0, LIMB_JOINTS), 0) - base).ravel()
        for b in basis:
            v -= (v @ b) * b
        nv = np.linalg.norm(v)
        if nv < 1e-6 * norm:
            continue
        v /= nv
        basis.append(v)
        atoms.append(v.reshape(base.shape) * deformation_scale * norm)
    return np.stack(atoms)


def _articulated_pose(rng: np.random.Generator, bone_scale: float, joints=None) -> np.ndarray:
    from .geometry import rot_x, rot_z

    parents = {1: 0, 2: 1, 3: 2, 4: 0, 5: 4, 6: 5, 7: 0, 8: 7, 9: 8, 10: 9, 11: 8, 12: 11, 13: 12, 14: 8, 15: 14, 16: 15}
    base = BASE_POSE * bone_scale
    n = base.shape[1]
    pose = np.zeros((3, n))
    frames = {0: np.eye(3)}
    for j in range(1, n):
        p = parents[j]
        bone = base[:, j] - base[:, p]
        local = np.eye(3)
        if j in _ANGLE_RANGES and (joints is None or j in joints):
            (ax_lo, ax_hi), (az_lo, az_hi) = _ANGLE_RANGES[j]
            local = rot_x(rng.uniform(ax_lo, ax_hi)) @ rot_z(rng.uniform(az_lo, az_hi))
        frame = frames[p] @ local
        frames[j] = frame
        pose[:, j] = pose[:, p] + frame @ bone
    return pose


def synth_generate(spec: SynthSpec, cam: CameraModel = CameraModel(), skeleton: SkeletonGraph | None = None) -> SynthDataset:
    """Sample poses and views; emit X = P(R·Y) and keep (Y, R) hidden."""
    skeleton = skeleton or default_skeleton()
    n = skeleton.n_joints
    if n != BASE_POSE.shape[1]:
        raise ValueError(f"synthetic generator supports {BASE_POSE.shape[1]} joints, skeleton has {n}")
    rng = np.random.default_rng(spec.seed)
    dictionary = None
    if spec.mode == "dictionary":
        dictionary = hidden_dictionary(spec.k_true, spec.deformation_scale, rng)
        coef = rng.standard_normal((spec.n_samples, spec.k_true)) * spec.coefficient_sigma
        coef[:, 0] = 1.0
        canonical = np.einsum("mk,kcn->mcn", coef, dictionary)
    else:
        canonical = np.stack([_articulated_pose(rng, spec.bone_scale) for _ in range(spec.n_samples)])
    canonical = root_center(canonical, skeleton.root_index)
    rotations = sample_random_rotation(
        rng, spec.rotation_mode, spec.elevation_range, size=spec.n_samples, azimuth_range=spec.azimuth_range
    )
    x = project_perspective(rotate_pose(canonical, rotations), cam)
    cam_frame = rotations @ canonical
    records = [
        PoseRecord(
            id=f"synth-{i:06d}",
            joints2d_raw=x[i].T.copy(),
            subject="synth",
            action=spec.mode,
            camera_id="virtual",
            _joints3d=cam_frame[i].T.copy(),
        )
        for i in range(spec.n_samples)
    ]
    return SynthDataset(records, canonical, rotations, dictionary)

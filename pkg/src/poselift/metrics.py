"""Pose error metrics: scale-normalized MPJPE, P-MPJPE, PCK and AUC.

Poses are (..., 3, N) root-relative arrays; batched inputs give per-sample
values.
"""

from __future__ import annotations

import numpy as np

PCK_THRESHOLD = 150.0
AUC_THRESHOLDS = np.arange(5.0, 150.0 + 1e-9, 5.0)


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"pose shapes differ: {pred.shape} vs {gt.shape}")
    if pred.shape[-2] != 3:
        raise ValueError("poses must be (..., 3, N)")
    return pred, gt


def optimal_scale(pred, gt) -> np.ndarray:
    """s* = <pred, gt> / <pred, pred> per sample."""
    pred, gt = _check_pair(pred, gt)
    denom = np.sum(pred * pred, axis=(-2, -1))
    if np.any(denom <= 0):
        raise ValueError("zero-norm prediction")
    return np.sum(pred * gt, axis=(-2, -1)) / denom


def joint_errors(pred, gt) -> np.ndarray:
    """Euclidean error of every joint, (..., N)."""
    pred, gt = _check_pair(pred, gt)
    return np.linalg.norm(pred - gt, axis=-2)


def mpjpe(pred, gt):
    """Mean per-joint error after rescaling pred by the optimal scalar."""
    pred, gt = _check_pair(pred, gt)
    s = optimal_scale(pred, gt)
    return joint_errors(pred * s[..., None, None], gt).mean(axis=-1)


def similarity_align(pred, gt) -> np.ndarray:
    """Closed-form similarity (rotation, scale, translation) alignment of pred to gt."""
    pred, gt = _check_pair(pred, gt)
    mu_p = pred.mean(axis=-1, keepdims=True)
    mu_g = gt.mean(axis=-1, keepdims=True)
    p0 = pred - mu_p
    g0 = gt - mu_g
    var_p = np.sum(p0 * p0, axis=(-2, -1))
    if np.any(np.sum(g0 * g0, axis=(-2, -1)) <= 0):
        raise ValueError("degenerate ground truth: all joints coincide")
    if np.any(var_p <= 0):
        raise ValueError("degenerate prediction: all joints coincide")
    cov = g0 @ np.swapaxes(p0, -1, -2)  # (..., 3, 3)
    u, sig, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    fix = np.ones(sig.shape)
    fix[..., -1] = d
    r = u @ (fix[..., :, None] * vt)
    scale = np.sum(sig * fix, axis=-1) / var_p
    return scale[..., None, None] * (r @ p0) + mu_g


def p_mpjpe(pred, gt):
    """Mean per-joint error after optimal similarity alignment."""
    pred, gt = _check_pair(pred, gt)
    return joint_errors(similarity_align(pred, gt), gt).mean(axis=-1)


def pck(pred, gt, threshold_mm: float = PCK_THRESHOLD):
    """Percentage of joints with error below ``threshold_mm``, no alignment."""
    err = joint_errors(pred, gt)
    # integer counts keep the result a single rounding of an exact ratio
    return 100.0 * np.count_nonzero(err < threshold_mm, axis=-1) / err.shape[-1]


def auc(pred, gt, thresholds=AUC_THRESHOLDS):
    """Mean PCK over ``thresholds`` (5..150 step 5 by default)."""
    err = joint_errors(pred, gt)
    thresholds = np.asarray(thresholds)
    hits = err[..., None, :] < thresholds[:, None]
    return 100.0 * np.count_nonzero(hits, axis=(-2, -1)) / (len(thresholds) * err.shape[-1])


def relative_residual(a, b) -> np.ndarray:
    """||a - b||_F / ||b||_F per sample."""
    a = np.asarray(a)
    b = np.asarray(b)
    return np.linalg.norm(a - b, axis=(-2, -1)) / np.linalg.norm(b, axis=(-2, -1))

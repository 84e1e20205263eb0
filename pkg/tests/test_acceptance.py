"""Acceptance criteria, one test per criterion; each prints a PASS/FAIL line.

The synthetic end-to-end runs use the default configuration and take about
an hour on one core in total.  Weight sweeps and the detach/literal variants
run on a reduced budget (see REDUCED).
"""

import dataclasses
import itertools
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from poselift import experiments as ex
from poselift import gradcheck, metrics
from poselift.config import RunConfig
from poselift.geometry import (
    CameraModel,
    depth_to_pose3d,
    is_rotation,
    project_perspective,
    rotate_pose,
    rotation_from_params,
    sample_random_rotation,
)
from poselift.training import params_hash, load_teacher

BUDGET_SECONDS = 15 * 60
# reduced budget for the sweep ablations: 1k samples, 5 + 5 epochs
REDUCED = dict(n_samples=1000, epochs=5)


def record(tag: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} [{tag}] {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- 1. gradients ---------------------------------------------------------------
def test_c1_gradient_suite():
    t0 = time.perf_counter()
    results = gradcheck.run_all(seed=0)
    seconds = time.perf_counter() - t0
    ops = {r.op for r in results}
    per_op = min(sum(r.op == o for r in results) for o in ops)
    worst = max(r.max_error for r in results)
    ok = all(r.passed for r in results) and worst < 1e-5 and per_op >= 5 and len(ops) == 11 and seconds < 60
    record("1 gradients", ok, f"{len(ops)} ops x {per_op} shapes, worst rel err {worst:.2e} (<1e-5), {seconds:.1f}s (<60s)")


# -- 2. geometry ------------------------------------------------------------------
def test_c2_projection_round_trip():
    rng = np.random.default_rng(2)
    cam = CameraModel()
    y = rng.uniform(-1.5, 1.5, size=(1000, 3, 17))
    y[:, 2] = rng.uniform(-3.5, 3.5, size=(1000, 17))  # keeps z + t >= 1.5
    back = depth_to_pose3d(project_perspective(y, cam), y[:, 2], cam)
    err = float(np.abs(back - y).max())
    record("2a projection/lift round trip", err < 1e-12, f"1000 cases, max abs err {err:.1e} (<1e-12)")


def test_c2_decomposition_ambiguity():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        r = sample_random_rotation(rng, "so3-uniform")
        g = sample_random_rotation(rng, "so3-uniform")
        y = rng.standard_normal((3, 17)) * 0.3
        a = project_perspective(rotate_pose(y, r))
        b = project_perspective(rotate_pose(g.T @ y, r @ g))
        worst = max(worst, float(np.abs(a - b).max()))
    record("2b ambiguity P(RY) = P((RG)(G'Y))", worst < 1e-12, f"1000 cases, max abs err {worst:.1e} (<1e-12)")


def test_c2_rotation_invariants():
    rng = np.random.default_rng(4)
    mats = [
        sample_random_rotation(rng, "azimuth", size=1000),
        sample_random_rotation(rng, "so3-uniform", size=1000),
        rotation_from_params(rng.standard_normal((1000, 6))),
    ]
    worst_orth = max(float(np.abs(np.swapaxes(m, -1, -2) @ m - np.eye(3)).max()) for m in mats)
    worst_det = max(float(np.abs(np.linalg.det(m) - 1).max()) for m in mats)
    ok = worst_orth < 1e-10 and worst_det < 1e-10 and all(is_rotation(x) for m in mats for x in m[:50])
    record("2c SO(3) invariants", ok, f"3000 rotations, |R'R-I| {worst_orth:.1e}, |det-1| {worst_det:.1e} (<1e-10)")


# -- 3. metric oracles ----------------------------------------------------------------
def test_c3_p_mpjpe_similarity_invariance():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        gt = rng.standard_normal((3, 17))
        r = sample_random_rotation(rng, "so3-uniform")
        pred = rng.uniform(0.1, 10.0) * r @ gt + rng.standard_normal((3, 1)) * 5
        worst = max(worst, float(metrics.p_mpjpe(pred, gt)))
    record("3a P-MPJPE similarity invariance", worst < 1e-8, f"200 transforms, max P-MPJPE {worst:.1e} (<1e-8)")


def _golden(f, lo, hi, iters=80):
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return (a + b) / 2


def _axis_angle(v):
    th = np.linalg.norm(v)
    if th < 1e-15:
        return np.eye(3)
    k = v / th
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(th) * kx + (1 - math.cos(th)) * kx @ kx


def brute_force_p_mpjpe(pred, gt, rng):
    """Search rotations (random start plus shrinking random perturbations) and scale (golden section)."""
    p0 = pred - pred.mean(axis=1, keepdims=True)
    g0 = gt - gt.mean(axis=1, keepdims=True)

    def sq_err(r):
        rp = r @ p0
        s = _golden(lambda s: float(np.sum((s * rp - g0) ** 2)), 0.0, 10.0)
        return float(np.sum((s * rp - g0) ** 2)), s

    best_r = min(sample_random_rotation(rng, "so3-uniform", size=300), key=lambda r: sq_err(r)[0])
    best = sq_err(best_r)[0]
    for step in np.geomspace(0.5, 1e-5, 30):
        for _ in range(12):
            cand = _axis_angle(rng.standard_normal(3) * step) @ best_r
            e = sq_err(cand)[0]
            if e < best:
                best, best_r = e, cand
    _, s = sq_err(best_r)
    aligned = s * best_r @ p0 + gt.mean(axis=1, keepdims=True)
    return float(np.linalg.norm(aligned - gt, axis=0).mean())


def test_c3_p_mpjpe_brute_force_oracle():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        gt = rng.standard_normal((3, 17))
        r = sample_random_rotation(rng, "so3-uniform")
        pred = rng.uniform(0.5, 2.0) * r @ (gt + rng.standard_normal((3, 17)) * 0.3)
        closed = float(metrics.p_mpjpe(pred, gt))
        oracle = brute_force_p_mpjpe(pred, gt, rng)
        worst = max(worst, abs(closed - oracle) / oracle)
    record("3b P-MPJPE vs brute-force oracle", worst < 0.01, f"100 perturbed poses, max rel diff {worst:.2e} (<1%)")


def test_c3_pck_auc_loop_oracles():
    rng = np.random.default_rng(7)
    gt = rng.standard_normal((50, 3, 17)) * 300
    pred = gt + rng.standard_normal(gt.shape) * 90
    pck_loop, auc_loop = [], []
    for m in range(50):
        hits = [0] * 30
        inside = 0
        for j in range(17):
            e = math.sqrt(sum((pred[m, c, j] - gt[m, c, j]) ** 2 for c in range(3)))
            inside += e < 150.0
            for k in range(30):
                hits[k] += e < 5.0 * (k + 1)
        pck_loop.append(100.0 * inside / 17)
        auc_loop.append(100.0 * sum(hits) / (30 * 17))
    ok = np.array_equal(metrics.pck(pred, gt), np.array(pck_loop)) and np.array_equal(metrics.auc(pred, gt), np.array(auc_loop))
    record("3c PCK/AUC loop oracles", ok, "50 poses, PCK and AUC bit-identical to per-joint loops")


# -- 4 and 5. synthetic end to end ---------------------------------------------------------
@pytest.fixture(scope="session")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def default_cfg():
    return RunConfig()


@pytest.fixture(scope="session")
def main_run(work, default_cfg):
    t0 = time.perf_counter()
    splits = ex.make_splits(default_cfg)
    teacher = ex.run_teacher(default_cfg, splits, work / "teacher")
    student = ex.run_student(default_cfg, splits, teacher.checkpoint, work / "student")
    seconds = time.perf_counter() - t0
    print(ex.format_scores(splits.baseline, {"teacher": teacher, "student": student}))
    return splits, teacher, student, seconds


@pytest.fixture(scope="session")
def variant_students(work, main_run):
    """Full-budget students under the default teacher: REC-only, KD-only, single branches."""
    splits, teacher, _, _ = main_run
    variants = {
        "rec_only": dict(lambda_kd=0.0),
        "kd_only": dict(lambda_rec=0.0),
        "physical_only": dict(nonphysical=False),
        "nonphysical_only": dict(physical=False),
    }
    out = {}
    for name, kw in variants.items():
        cfg = dataclasses.replace(RunConfig(), **kw)
        out[name] = ex.run_student(cfg, splits, teacher.checkpoint, work / name)
    return out


@pytest.fixture(scope="session")
def no_ric_teacher(work, main_run):
    splits = main_run[0]
    return ex.run_teacher(dataclasses.replace(RunConfig(), lambda_ric=0.0), splits, work / "teacher_no_ric")


def test_c4_time_budget(main_run):
    seconds = main_run[3]
    record("4 time budget", seconds <= BUDGET_SECONDS, f"data + teacher + student + scoring {seconds:.0f}s (<= {BUDGET_SECONDS}s)")


def test_c4a_teacher_beats_baseline(main_run):
    splits, teacher, _, _ = main_run
    ratio = teacher.p_mpjpe / splits.baseline
    record("4a teacher < 30% of baseline", ratio < 0.3, f"teacher {teacher.p_mpjpe:.4f} / baseline {splits.baseline:.4f} = {ratio:.3f} (<0.30)")


def test_c4b_student_not_worse_than_teacher(main_run):
    _, teacher, student, _ = main_run
    record("4b student <= teacher", student.p_mpjpe <= teacher.p_mpjpe, f"student {student.p_mpjpe:.4f} vs teacher {teacher.p_mpjpe:.4f}")


def test_c4c_removing_ric_degrades_invariance(main_run, no_ric_teacher):
    full = float(np.mean(main_run[1].residuals))
    ablated = float(np.mean(no_ric_teacher.residuals))
    record("4c no L_RIC degrades invariance >= 2x", ablated >= 2 * full, f"mean residual {ablated:.4f} without vs {full:.4f} with ({ablated / full:.2f}x)")


def test_c4d_rec_only_fails_to_beat_baseline(main_run, variant_students):
    splits = main_run[0]
    rec = variant_students["rec_only"].p_mpjpe
    record("4d REC-only student >= baseline", rec >= splits.baseline, f"REC-only {rec:.4f} vs baseline {splits.baseline:.4f}")


def test_c5_teacher_invariance(main_run):
    share = main_run[1].share_below(0.1)
    record("5a teacher invariance residual < 0.1", share >= 0.9, f"{100 * share:.1f}% of held-out samples (>= 90%)")


def test_c5_student_equivariance(main_run):
    share = main_run[2].share_below(0.15)
    record("5b student equivariance residual < 0.15", share >= 0.9, f"{100 * share:.1f}% of held-out samples (>= 90%)")


# module examples tied to the end-to-end runs
def test_example_teacher_loss_drops(main_run):
    h = main_run[1].history
    ratio = h[-1]["total"] / h[0]["total"]
    record("ex training: final L^t < 25% of epoch 1", ratio < 0.25, f"ratio {ratio:.3f}")


def test_example_teacher_frozen_during_stage2(main_run, variant_students):
    store, _ = load_teacher(main_run[1].checkpoint)
    digest = params_hash(store)
    import json

    doc = json.loads(main_run[2].checkpoint.read_text())
    ok = doc["teacher_sha256"] == digest
    record("ex training: teacher hash unchanged through stage 2", ok, digest[:16])


def test_example_full_beats_kd_only(main_run, variant_students):
    full, kd = main_run[2].p_mpjpe, variant_students["kd_only"].p_mpjpe
    record("ex training: full <= lambda_REC=0 student", full <= kd, f"full {full:.4f} vs KD-only {kd:.4f}")


# -- 6. determinism -----------------------------------------------------------------------
def test_c6_bit_identical_and_resume(work):
    cfg = RunConfig(n_samples=512, epochs=2)
    splits = ex.make_splits(cfg, n_eval=10)
    from poselift.training import train_student, train_teacher

    def teacher(out, epochs, resume=None):
        tc = dataclasses.replace(cfg, epochs=epochs).train("teacher")
        return train_teacher(splits.x_train, tc, cfg.teacher(), work / out, resume=resume).checkpoint

    def student(t_ckpt, out, epochs, resume=None):
        tc = dataclasses.replace(cfg, epochs=epochs).train("student")
        return train_student(splits.x_train, t_ckpt, tc, cfg.student(), work / out, resume=resume).checkpoint

    a, b = teacher("det_a", 2), teacher("det_b", 2)
    c = teacher("det_c", 2, resume=teacher("det_c1", 1))
    t_same = a.read_bytes() == b.read_bytes() == c.read_bytes()
    sa, sb = student(a, "det_sa", 2), student(a, "det_sb", 2)
    sc = student(a, "det_sc", 2, resume=student(a, "det_sc1", 1))
    s_same = sa.read_bytes() == sb.read_bytes() == sc.read_bytes()
    record("6 bit-identical runs and resume", t_same and s_same, f"teacher {'identical' if t_same else 'DIFFERS'}, student {'identical' if s_same else 'DIFFERS'}")


# -- 7. ablations ---------------------------------------------------------------------------
def test_c7_combined_graph_beats_single_branches(main_run, variant_students):
    full = main_run[2].p_mpjpe
    phys, nonphys = variant_students["physical_only"].p_mpjpe, variant_students["nonphysical_only"].p_mpjpe
    finite = all(np.isfinite(v) for v in (full, phys, nonphys))
    record("7a combined graph <= each branch", finite and full <= phys and full <= nonphys, f"both {full:.4f}, physical {phys:.4f}, nonphysical {nonphys:.4f}")


@pytest.fixture(scope="session")
def reduced(work):
    cfg = RunConfig(**REDUCED)
    splits = ex.make_splits(cfg, n_eval=200)
    teacher = ex.run_teacher(cfg, splits, work / "reduced_teacher")
    return cfg, splits, teacher


def _finite(score) -> bool:
    return bool(np.isfinite(score.p_mpjpe) and all(np.isfinite(r["total"]) for r in score.history))


def test_c7_variants_run(work, reduced):
    cfg, splits, teacher = reduced
    scores = {"literal_eq4": ex.run_student(dataclasses.replace(cfg, literal_eq4=True), splits, teacher.checkpoint, work / "r_lit")}
    det = dataclasses.replace(cfg, detach_cycle_target=True)
    det_t = ex.run_teacher(det, splits, work / "r_det_t")
    scores["detach teacher"] = det_t
    scores["detach student"] = ex.run_student(det, splits, det_t.checkpoint, work / "r_det_s")
    print(ex.format_scores(splits.baseline, scores))
    bad = [k for k, s in scores.items() if not _finite(s)]
    record("7b literal_eq4 and detach_cycle_target run", not bad, "finite" if not bad else f"non-finite: {bad}")


def test_c7_lambda_rep_sweep(work, reduced):
    cfg, splits, _ = reduced
    scores = {}
    for v in (1, 3, 5, 8, 10):
        scores[f"lambda_rep={v}"] = ex.run_teacher(dataclasses.replace(cfg, lambda_rep=float(v), lambda_ric=1.0), splits, work / f"r_rep{v}")
    print(ex.format_scores(splits.baseline, scores))
    bad = [k for k, s in scores.items() if not _finite(s)]
    record("7c lambda_REP sweep (lambda_RIC=1)", not bad, "5 runs finite" if not bad else f"non-finite: {bad}")


def test_c7_lambda_kd_sweep(work, reduced):
    cfg, splits, teacher = reduced
    scores = {}
    for v in (1, 3, 5, 8, 10):
        c = dataclasses.replace(cfg, lambda_kd=float(v), lambda_rec=1.0)
        scores[f"lambda_kd={v}"] = ex.run_student(c, splits, teacher.checkpoint, work / f"r_kd{v}")
    print(ex.format_scores(splits.baseline, scores))
    bad = [k for k, s in scores.items() if not _finite(s)]
    record("7d lambda_KD sweep (lambda_REC=1)", not bad, "5 runs finite" if not bad else f"non-finite: {bad}")

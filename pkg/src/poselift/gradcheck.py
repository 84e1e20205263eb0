"""Finite-difference checks for every differentiable building block.

Each case builds a scalar objective sum(G * op(params)) for a fixed random G,
so every output entry contributes to the checked gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor
from .geometry import CameraModel, depth_to_pose3d, project_perspective, rotation_from_params, sample_random_rotation
from .losses import kd_loss, rec_loss, reprojection_loss, ric_loss
from .student import AGCBlockParams, SkeletonGraph, StudentConfig, init_block, init_student, nonphysical_graph_conv, physical_graph_conv, student_forward
from .teacher import TeacherConfig, init_teacher, teacher_forward

STEP = 1e-6
TOLERANCE = 1e-5
MAX_ENTRIES = 12


@dataclass
class CaseResult:
    op: str
    shape: str
    max_error: float
    passed: bool


def _param(rng, shape, name, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, name=name)


def _chain(n: int) -> SkeletonGraph:
    return SkeletonGraph(n, [(i, i + 1) for i in range(n - 1)])


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x) * margin + x, x)


def case_linear(rng, b, d_in, d_out):
    x = _param(rng, (b, d_in, 3), "x")
    W = _param(rng, (d_out, d_in), "W")
    bias = _param(rng, (d_out,), "b")
    g = rng.standard_normal((b, d_out, 3))
    return (lambda: (dc.linear(x, W, bias) * g).sum()), [x, W, bias], f"x({b},{d_in},3) W({d_out},{d_in})"


def case_relu(rng, b, d, _):
    x = Tensor(_away_from_zero(rng, (b, d)), requires_grad=True, name="x")
    g = rng.standard_normal((b, d))
    return (lambda: (dc.relu(x) * g).sum()), [x], f"x({b},{d})"


def case_masked_softmax(rng, b, n, _):
    graph = _chain(n)
    x = _param(rng, (b, n, n), "M")
    mask = np.broadcast_to(graph.adjacency, x.shape)
    g = rng.standard_normal((b, n, n))
    return (lambda: (dc.column_softmax(x, mask=mask) * g).sum()), [x], f"M({b},{n},{n})"


def _block(rng, d, n, physical, nonphysical):
    store = ParamStore()
    cfg = StudentConfig(n_joints=n, width=d, n_blocks=2, physical=physical, nonphysical=nonphysical)
    init_block(store, "b.", cfg, rng)
    for _, t in store:
        t.data = t.data + 0.3 * rng.standard_normal(t.data.shape)
    return store, AGCBlockParams.from_store(store, "b.")


def case_physical(rng, b, d, n):
    store, blk = _block(rng, d, n, True, False)
    H = _param(rng, (b, d, n), "H")
    graph = _chain(n)
    g = rng.standard_normal((b, d, n))
    return (lambda: (physical_graph_conv(H, blk, graph) * g).sum()), [H] + store.tensors(), f"H({b},{d},{n})"


def case_nonphysical(rng, b, d, n):
    store, blk = _block(rng, d, n, False, True)
    H = _param(rng, (b, d, n), "H")
    g = rng.standard_normal((b, d, n))
    return (lambda: (nonphysical_graph_conv(H, blk) * g).sum()), [H] + store.tensors(), f"H({b},{d},{n})"


def case_rotation(rng, b, a, _):
    p = _param(rng, (b, a, 6), "p")
    g = rng.standard_normal((b, a, 3, 3))
    return (lambda: (rotation_from_params(p) * g).sum()), [p], f"p({b},{a},6)"


def case_projection(rng, b, n, _):
    pose = _param(rng, (b, 3, n), "Y", scale=0.5)
    g = rng.standard_normal((b, 2, n))
    return (lambda: (project_perspective(pose) * g).sum()), [pose], f"Y({b},3,{n})"


def _small_teacher(rng, n, width):
    cfg = TeacherConfig(n_joints=n, n_atoms=3, width=width, bottleneck=max(2, width // 2), n_blocks=2)
    store = init_teacher(cfg, rng, rng.standard_normal((2, n)) * 0.1)
    for _, t in store:
        t.data = t.data + 0.05 * rng.standard_normal(t.data.shape)
    return cfg, store


def _inputs(rng, b, n):
    return rng.standard_normal((b, 2, n)) * 0.1


def case_rep(rng, b, n, width):
    cfg, store = _small_teacher(rng, n, width)
    x = _inputs(rng, b, n)
    return (lambda: reprojection_loss(teacher_forward(x, store, cfg), x)), store, f"B={b} N={n} width={width}"


def case_ric(rng, b, n, width):
    cfg, store = _small_teacher(rng, n, width)
    x = _inputs(rng, b, n)
    r = sample_random_rotation(rng, size=b)

    def fn():
        def teacher(z):
            return teacher_forward(z, store, cfg)

        return ric_loss(teacher, teacher(x), r)

    return fn, store, f"B={b} N={n} width={width}"


def _small_student(rng, n, width):
    cfg = StudentConfig(n_joints=n, width=width, n_blocks=2)
    store = init_student(cfg, rng)
    for _, t in store:
        t.data = t.data + 0.1 * rng.standard_normal(t.data.shape)
    return cfg, store, _chain(n)


def case_kd(rng, b, n, width):
    cfg, store, graph = _small_student(rng, n, width)
    t_cfg, t_store = _small_teacher(rng, n, 6)
    x = _inputs(rng, b, n)
    with dc.no_grad():
        t_out = teacher_forward(x, t_store, t_cfg)
    return (lambda: kd_loss(student_forward(x, store, cfg, graph), t_out)), store, f"B={b} N={n} width={width}"


def case_rec(rng, b, n, width):
    cfg, store, graph = _small_student(rng, n, width)
    x = _inputs(rng, b, n)
    r = sample_random_rotation(rng, size=b)

    def fn():
        def student(z):
            return student_forward(z, store, cfg, graph)

        y_s = depth_to_pose3d(x, student(x), CameraModel())
        return rec_loss(student, y_s, r)

    return fn, store, f"B={b} N={n} width={width}"


CASES = {
    "linear": case_linear,
    "relu": case_relu,
    "masked_softmax": case_masked_softmax,
    "physical_branch": case_physical,
    "nonphysical_branch": case_nonphysical,
    "rotation_from_params": case_rotation,
    "projection": case_projection,
    "loss_rep": case_rep,
    "loss_ric": case_ric,
    "loss_kd": case_kd,
    "loss_rec": case_rec,
}

# (b, a, c) triples; the meaning of a and c depends on the case
SHAPES = [(1, 3, 4), (2, 4, 5), (3, 5, 3), (2, 6, 6), (4, 3, 7)]


def run_case(name: str, shape, seed: int = 0, step: float = STEP, tolerance: float = TOLERANCE) -> CaseResult:
    rng = np.random.default_rng([seed, list(CASES).index(name), *shape])
    fn, params, desc = CASES[name](rng, *shape)
    report = dc.finite_difference_check(fn, params, step=step, tolerance=tolerance, max_entries=MAX_ENTRIES, rng=rng)
    return CaseResult(name, desc, report.max_error, report.passed)


def run_all(seed: int = 0, ops=None) -> list[CaseResult]:
    return [run_case(name, shape, seed) for name in (ops or CASES) for shape in SHAPES]


def format_table(results: list[CaseResult]) -> str:
    lines = [f"{'op':<22}{'shape':<28}{'max_rel_err':>12}  result"]
    for r in results:
        lines.append(f"{r.op:<22}{r.shape:<28}{r.max_error:>12.2e}  {'pass' if r.passed else 'FAIL'}")
    return "\n".join(lines)

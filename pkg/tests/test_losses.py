import numpy as np
import pytest

from poselift import diffcore as dc
from poselift.geometry import CameraModel, depth_to_pose3d, project_perspective, sample_random_rotation
from poselift.losses import LossWeights, clamp_active_count, kd_loss, rec_loss, reprojection_loss, ric_loss, student_total, teacher_total
from poselift.teacher import TeacherOutput


def fake_output(y, r):
    return TeacherOutput(dc.Tensor(np.zeros((len(y), 1))), dc.Tensor(r), dc.Tensor(y, requires_grad=True))


def test_defaults():
    w = LossWeights()
    assert (w.rep, w.ric, w.kd, w.rec) == (5.0, 1.0, 5.0, 1.0)
    with pytest.raises(ValueError):
        LossWeights(rep=-1)


def test_reprojection_zero_at_exact_explanation(rng):
    y = rng.standard_normal((4, 3, 17)) * 0.3
    r = sample_random_rotation(rng, size=4)
    x = project_perspective(r @ y)
    assert reprojection_loss(fake_output(y, r), x).item() == pytest.approx(0.0, abs=1e-28)


def test_reprojection_per_joint_mean():
    y = np.zeros((1, 3, 2))
    x = np.array([[[0.3, 0.0], [0.4, 0.0]]])  # one joint off by 0.5
    assert reprojection_loss(fake_output(y, np.eye(3)[None]), x).item() == pytest.approx(0.25 / 2)


def test_ric_zero_for_constant_teacher(rng):
    y = rng.standard_normal((3, 3, 17)) * 0.3
    out = fake_output(y, np.broadcast_to(np.eye(3), (3, 3, 3)).copy())

    def teacher(z):
        return TeacherOutput(None, None, dc.Tensor(y))

    r = sample_random_rotation(rng, size=3)
    assert ric_loss(teacher, out, r).item() == 0.0


def test_ric_detach_blocks_first_pass_gradient(rng):
    y = rng.standard_normal((2, 3, 5)) * 0.3
    out = fake_output(y, np.broadcast_to(np.eye(3), (2, 3, 3)).copy())

    def teacher(z):
        return TeacherOutput(None, None, z[:, :1, :] * 0.0 + dc.Tensor(np.ones((2, 3, 5))))

    r = sample_random_rotation(rng, size=2)
    ric_loss(teacher, out, r, detach_target=True).backward()
    assert out.y_t.grad is None
    ric_loss(teacher, out, r).backward()
    assert out.y_t.grad is not None


def test_kd_route_and_value(rng):
    y = rng.standard_normal((2, 3, 6))
    r = sample_random_rotation(rng, size=2)
    t_out = fake_output(y, r)
    target = (r @ y)[:, 2]
    d = dc.Tensor(target + 1.0, requires_grad=True)
    loss = kd_loss(d, t_out)
    assert loss.item() == pytest.approx(1.0)
    loss.backward()
    assert t_out.y_t.grad is None
    np.testing.assert_allclose(d.grad, 2.0 / 6 / 2)


def test_rec_zero_for_exact_student(rng):
    cam = CameraModel()
    y_s = rng.standard_normal((3, 3, 17)) * 0.3
    r = sample_random_rotation(rng, size=3)
    truth = (r @ y_s)[:, 2]

    def student(z):
        return dc.Tensor(truth)

    assert rec_loss(student, y_s, r, cam).item() == pytest.approx(0.0, abs=1e-28)


def test_rec_penalizes_flat_student(rng):
    y_s = rng.standard_normal((3, 3, 17)) * 0.3
    r = sample_random_rotation(rng, size=3)
    assert rec_loss(lambda z: dc.Tensor(np.zeros((3, 17))), y_s, r).item() > 1e-3


def test_totals_and_clamp_count():
    assert teacher_total(2.0, 3.0, LossWeights()) == 13.0
    assert student_total(2.0, 3.0, LossWeights()) == 13.0
    assert clamp_active_count(np.array([0.0, -4.5, -3.9])) == 1
    x = np.zeros((1, 2, 2))
    assert np.all(depth_to_pose3d(x, np.array([[-10.0, 0.0]]))[0, 2] == [-4.0, 0.0])


def test_kd_accepts_precomputed_teacher_depth(rng):
    from poselift.losses import teacher_depth
    from poselift.teacher import TeacherConfig, init_teacher, teacher_forward

    cfg = TeacherConfig(width=16, bottleneck=4, n_blocks=1)
    store = init_teacher(cfg, rng)
    x = rng.standard_normal((3, 2, 17)) * 0.1
    out = teacher_forward(x, store, cfg)
    d = rng.standard_normal((3, 17)) * 0.1
    assert kd_loss(d, out).item() == kd_loss(d, teacher_depth(out)).item()

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poselift import diffcore as dc
from poselift.diffcore import ParamStore, SGDConfig, Tensor


def leaf(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def test_sum_of_products_gradient():
    a, b = leaf([1.0, 2.0]), leaf([3.0, -1.0])
    (a * b).sum().backward()
    np.testing.assert_array_equal(a.grad, [3.0, -1.0])
    np.testing.assert_array_equal(b.grad, [1.0, 2.0])


def test_shared_node_accumulates():
    x = leaf(3.0)
    y = x * x + x
    y.backward()
    assert x.grad == pytest.approx(7.0)


def test_broadcast_gradient_is_summed():
    x = leaf(np.ones((4, 3)))
    b = leaf(np.zeros(3))
    (x + b).sum().backward()
    np.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])


def test_no_grad_records_nothing():
    x = leaf(2.0)
    with dc.no_grad():
        y = x * 3.0
    assert not y.requires_grad and y._parents == ()


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        (leaf(np.ones(3)) * 2.0).backward()


def test_matmul_shape_error():
    with pytest.raises(ValueError, match="shape mismatch"):
        dc.matmul(leaf(np.ones((2, 3))), leaf(np.ones((2, 3))))


def test_linear_bias_shape_error():
    with pytest.raises(ValueError):
        dc.linear(leaf(np.ones((3, 5))), leaf(np.ones((4, 3))), leaf(np.ones(3)))


def test_masked_softmax_columns_and_support():
    mask = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]])
    s = dc.column_softmax(Tensor(np.random.default_rng(0).standard_normal((3, 3))), mask=mask).data
    np.testing.assert_allclose(s.sum(axis=0), 1.0, atol=1e-15)
    assert np.all(s[mask == 0] == 0.0)


def test_masked_softmax_isolated_column():
    mask = np.array([[1, 0], [1, 0]])
    with pytest.raises(ValueError, match="isolated joint"):
        dc.column_softmax(Tensor(np.zeros((2, 2))), mask=mask)


def test_sgd_definition_example():
    store = ParamStore()
    p = store.add("p", np.array(1.0))
    p.grad = np.array(1.0)
    dc.sgd_step(store, SGDConfig(learning_rate=0.1, momentum=0.0), {})
    assert p.data == pytest.approx(0.9)
    assert p.grad is None


def test_sgd_momentum_two_steps():
    store = ParamStore()
    p = store.add("p", np.array(0.0))
    vel = {}
    for _ in range(2):
        p.grad = np.array(1.0)
        dc.sgd_step(store, SGDConfig(learning_rate=1.0, momentum=0.5), vel)
    # v1 = 1, v2 = 1.5
    assert p.data == pytest.approx(-2.5)


def test_sgd_rejects_non_finite_gradient():
    store = ParamStore()
    p = store.add("w", np.zeros(2))
    p.grad = np.array([0.0, np.nan])
    with pytest.raises(FloatingPointError, match="'w'"):
        dc.sgd_step(store, SGDConfig(), {})
    np.testing.assert_array_equal(p.data, 0.0)


@pytest.mark.parametrize("kw", [{"learning_rate": 0.0}, {"momentum": 1.0}, {"momentum": -0.1}])
def test_sgd_config_validation(kw):
    with pytest.raises(ValueError):
        SGDConfig(**kw)


def test_duplicate_parameter_name():
    store = ParamStore()
    store.add("a", 1.0)
    with pytest.raises(KeyError):
        store.add("a", 2.0)


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    arrays = {"w": rng.standard_normal((3, 4)) * 1e-7, "b": np.array([np.pi, 1 / 3, -0.0, 5e-324])}
    path = tmp_path / "c.json"
    dc.save_checkpoint(path, arrays, {"note": "x", "velocity": {"w": arrays["w"] * 2}})
    params, doc = dc.load_checkpoint(path)
    for k, v in arrays.items():
        assert params[k].tobytes() == v.tobytes()
    assert dc.decode_arrays(doc["velocity"])["w"].tobytes() == (arrays["w"] * 2).tobytes()
    raw = json.loads(path.read_text())
    assert raw["version"] == 1 and raw["params"]["w"]["shape"] == [3, 4]


def test_checkpoint_refuses_nan(tmp_path):
    with pytest.raises(FloatingPointError):
        dc.save_checkpoint(tmp_path / "c.json", {"w": np.array([np.nan])})
    assert not (tmp_path / "c.json").exists()


def test_checkpoint_version_check(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"version": 2, "params": {}}))
    with pytest.raises(ValueError, match="version"):
        dc.load_checkpoint(path)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_matmul_gradient_matches_finite_differences(n, m, seed):
    r = np.random.default_rng(seed)
    a, b = leaf(r.standard_normal((n, 3))), leaf(r.standard_normal((3, m)))
    g = r.standard_normal((n, m))
    rep = dc.finite_difference_check(lambda: (dc.matmul(a, b) * g).sum(), [a, b])
    assert rep.passed, rep.errors


def test_gradcheck_detects_wrong_gradient():
    x = leaf(np.array([0.3, -0.7]))

    def bad_square(t):
        return dc.make_op(t.data**2, (t,), lambda g: (g * t.data,))  # missing factor 2

    rep = dc.finite_difference_check(lambda: bad_square(x).sum(), [x])
    assert not rep.passed


def test_gradcheck_zero_gradient_passes():
    x = leaf(np.ones(3))
    rep = dc.finite_difference_check(lambda: (x - x).sum(), [x])
    assert rep.passed and rep.max_error == 0.0

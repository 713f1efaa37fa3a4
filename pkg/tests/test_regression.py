import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmwb.regression import (
    BasisSpec, MLPModel, OLSModel, RegressionError, TrainConfig, extended_rate_b,
    extended_rate_c, get_basis, init_mlp, mlp_fit, mlp_loss_grad, mlp_predict, model_from_dict,
    ols_fit, ols_solve, predict, silu, total_degree_basis,
)


def _wa_sample(n, seed=0):
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(0, 2, n), rng.uniform(0, 1, n), rng.uniform(0, 1, n)])


def test_basis_sizes():
    assert get_basis("cubic_pruned").size == 17
    assert get_basis("quadratic_rate").size == 15
    assert get_basis("later_cubic").size == 10
    assert get_basis("later_cubic_rate").size == 20
    pruned = set(get_basis("cubic_pruned").exponents)
    for gone in [(2, 0, 1), (0, 2, 1), (0, 0, 3)]:
        assert gone not in pruned
    assert (0, 0, 0) in pruned


def test_extended_bases_nest():
    b, c = extended_rate_b(), extended_rate_c()
    assert set(b.exponents) < set(c.exponents)
    assert len(set(c.exponents)) == c.size


def test_unknown_basis():
    with pytest.raises(RegressionError):
        get_basis("nope")


def test_design_monomials():
    basis = BasisSpec(("w", "a"), ((0, 0), (1, 0), (2, 1)))
    x = np.array([[2.0, 3.0], [0.5, -1.0]])
    np.testing.assert_allclose(basis.design(x), [[1, 2, 12], [1, 0.5, -0.25]])
    with pytest.raises(RegressionError):
        basis.design(np.ones((3, 3)))


def test_exact_in_span_recovery():
    basis = total_degree_basis(("w", "a"), 1)
    x = _wa_sample(50)[:, :2]
    y = 2 + 3 * x[:, 0] - x[:, 1]
    mdl = ols_fit(basis.design(x), y, basis)
    coef = dict(zip(basis.exponents, mdl.coef))
    assert coef[(0, 0)] == pytest.approx(2, abs=1e-10)
    assert coef[(1, 0)] == pytest.approx(3, abs=1e-10)
    assert coef[(0, 1)] == pytest.approx(-1, abs=1e-10)
    assert mdl.ridge is None


def test_duplicated_column_uses_ridge_and_matches_pinv():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(200, 3))
    design = np.column_stack([np.ones(200), x, x[:, 0]])
    y = 1 + x @ [0.5, -2, 1] + 0.01 * rng.normal(size=200)
    coef, ridge = ols_solve(design, y)
    assert ridge is not None and ridge > 0
    oracle = design @ (np.linalg.pinv(design) @ y)
    np.testing.assert_allclose(design @ coef, oracle, atol=1e-6)


def test_noisy_design_matches_normal_equations():
    rng = np.random.default_rng(11)
    basis = get_basis("cubic_pruned")
    design = basis.design(_wa_sample(1000, 5))
    y = design @ rng.normal(size=basis.size) + rng.normal(size=1000)
    coef, _ = ols_solve(design, y)
    oracle = np.linalg.solve(design.T @ design, design.T @ y)
    np.testing.assert_allclose(coef, oracle, atol=1e-8)


@pytest.mark.parametrize("design,targets", [
    (np.empty((0, 3)), np.empty(0)),
    (np.ones((2, 3)), np.ones(2)),
    (np.array([[1.0, np.nan]] * 4), np.ones(4)),
    (np.ones((4, 2)), np.array([1, 2, np.inf, 3.0])),
])
def test_ols_rejects_bad_inputs(design, targets):
    with pytest.raises(RegressionError):
        ols_solve(design, targets)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_residuals_orthogonal_to_basis(seed):
    rng = np.random.default_rng(seed)
    basis = get_basis("cubic_pruned")
    design = basis.design(_wa_sample(400, seed))
    y = np.sin(design[:, 1]) + rng.normal(size=400)
    mdl = ols_fit(design, y, basis)
    resid = y - design @ mdl.coef
    scale = np.linalg.norm(design, axis=0) * np.linalg.norm(y)
    assert np.all(np.abs(design.T @ resid) < 1e-8 * scale)


def test_ols_permutation_invariance():
    basis = get_basis("cubic_pruned")
    x = _wa_sample(500, 2)
    y = x[:, 0] ** 2 - x[:, 2] + np.random.default_rng(2).normal(size=500)
    perm = np.random.default_rng(9).permutation(500)
    m1 = ols_fit(basis.design(x), y, basis)
    m2 = ols_fit(basis.design(x[perm]), y[perm], basis)
    np.testing.assert_allclose(predict(m1, x), predict(m2, x), atol=1e-10)


def test_predict_constant_and_roundtrip():
    const = OLSModel(BasisSpec(("w", "a"), ((0, 0),)), np.array([0.7]))
    np.testing.assert_allclose(predict(const, np.random.default_rng(0).random((5, 2))), 0.7)

    basis = get_basis("quadratic_rate")
    x = np.column_stack([_wa_sample(100, 4), np.random.default_rng(4).normal(0.05, 0.02, 100)])
    y = x.sum(axis=1) ** 2
    mdl = ols_fit(basis.design(x), y, basis)
    np.testing.assert_allclose(predict(mdl, x), basis.design(x) @ mdl.coef)
    again = model_from_dict(json.loads(json.dumps(mdl.to_dict())))
    np.testing.assert_array_equal(predict(again, x), predict(mdl, x))


def test_silu_limits():
    assert silu(0.0) == 0.0
    assert silu(40.0) == pytest.approx(40.0, rel=1e-12)
    assert abs(silu(-40.0)) < 1e-15


@pytest.mark.parametrize("dim,count", [(2, 33_537), (3, 33_665)])
def test_network_parameter_count(dim, count):
    layers = init_mlp(dim)
    mdl = MLPModel(layers, np.zeros(dim), np.ones(dim), 0.0, 1.0)
    assert mdl.n_params == count


def test_backprop_against_finite_differences():
    rng = np.random.default_rng(0)
    layers = init_mlp(3, hidden=16, depth=3, seed=1)
    z, t = rng.normal(size=(10, 3)), rng.normal(size=10)
    _, grads = mlp_loss_grad(layers, z, t)
    eps = 1e-5
    worst = 0.0
    for li, (w, b) in enumerate(layers):
        for arr, g in ((w, grads[li][0]), (b, grads[li][1])):
            for idx in list(np.ndindex(arr.shape))[:20]:
                old = arr[idx]
                arr[idx] = old + eps
                up = mlp_loss_grad(layers, z, t)[0]
                arr[idx] = old - eps
                dn = mlp_loss_grad(layers, z, t)[0]
                arr[idx] = old
                fd = (up - dn) / (2 * eps)
                worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-8))
    assert worst < 1e-4


def test_mlp_learns_identity():
    x = np.linspace(0, 1, 1000)[:, None]
    mdl = mlp_fit(x, x[:, 0], TrainConfig(epochs=200, learning_rate=1e-3, seed=0))
    assert np.mean((mlp_predict(mdl, x) - x[:, 0]) ** 2) < 1e-3
    hist = np.convolve(mdl.loss_history, np.ones(10) / 10, mode="valid")
    assert hist[-1] < hist[0]


def test_mlp_deterministic_and_serializable():
    rng = np.random.default_rng(1)
    x, y = rng.random((64, 2)), rng.random(64)
    cfg = TrainConfig(epochs=5, hidden=8, depth=2, seed=7)
    m1, m2 = mlp_fit(x, y, cfg), mlp_fit(x, y, cfg)
    np.testing.assert_array_equal(mlp_predict(m1, x), mlp_predict(m2, x))
    perm = rng.permutation(64)
    m3 = mlp_fit(x[perm], y[perm], cfg)
    np.testing.assert_allclose(mlp_predict(m3, x), mlp_predict(m1, x), atol=1e-12)
    back = model_from_dict(json.loads(json.dumps(m1.to_dict())))
    np.testing.assert_array_equal(mlp_predict(back, x), mlp_predict(m1, x))


def test_zero_head_predicts_target_mean():
    layers = init_mlp(2, hidden=8, depth=2, seed=0)
    w, b = layers[-1]
    layers[-1] = (np.zeros_like(w), np.zeros_like(b))
    mdl = MLPModel(layers, np.zeros(2), np.ones(2), 0.93, 0.2)
    np.testing.assert_allclose(predict(mdl, np.random.default_rng(0).random((6, 2))), 0.93)
    with pytest.raises(RegressionError):
        predict(mdl, np.ones((2, 3)))


def test_training_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsevar import NetworkSpec, generate_network, simulate
from sparsevar.errors import InsufficientData, InvalidLag, NoConvergence, SingularDesign
from sparsevar.estimators import (FitResult, build_problem, coef_to_phi, cross_validate, fit, fit_lasso,
                                  fit_lassle, fit_lse, lambda_grid, lambda_max, lasso_path, phi_to_coef,
                                  select_lambda, soft_threshold)


def kkt_violation(problem, B, lam):
    """Largest violation of the subgradient conditions, relative to lam."""
    G = 2 * problem.X.T @ (problem.Y - problem.X @ B)
    active = B != 0
    v_active = np.abs(G[active] - lam * np.sign(B[active])).max(initial=0.0)
    v_zero = (np.abs(G[~active]) - lam).max(initial=-np.inf)
    return max(v_active, v_zero, 0.0) / lam


@pytest.fixture(scope="module")
def cluster_series():
    m = generate_network(NetworkSpec("cluster", P=6, n_regions=2, connected=((0, 1),)), seed=1)
    return m, simulate(m, T=2000, seed=2)


def test_build_problem_layout():
    x = np.arange(12, dtype=float).reshape(2, 6)  # channel 0: 0..5, channel 1: 6..11
    p = build_problem(x, 2)
    assert (p.m, p.q, p.P) == (4, 4, 2)
    # first row is t = 5 (descending time)
    np.testing.assert_array_equal(p.Y[0], [5, 11])
    np.testing.assert_array_equal(p.X[0], [4, 10, 3, 9])
    np.testing.assert_array_equal(p.Y[-1], [2, 8])
    np.testing.assert_array_equal(p.X[-1], [1, 7, 0, 6])


def test_build_problem_epoch_list_keeps_boundaries():
    a = np.zeros((1, 5))
    b = np.ones((1, 4))
    p = build_problem([a, b], 1)
    assert p.m == 4 + 3
    # no row mixes the two epochs
    assert np.all(p.X[:4] == 0) and np.all(p.X[4:] == 1)


@pytest.mark.parametrize("d", [0, 5, 9])
def test_build_problem_bad_lag(d):
    with pytest.raises(InvalidLag):
        build_problem(np.zeros((2, 5)), d)


@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_coef_phi_roundtrip(P, d, seed):
    phi = np.random.default_rng(seed).normal(size=(d, P, P))
    B = phi_to_coef(phi)
    assert B.shape == (P * d, P)
    np.testing.assert_array_equal(coef_to_phi(B, d), phi)
    l, k, v = d - 1, P - 1, 0
    assert phi[l][k, v] == B[l * P + v, k]


def test_lse_recovers_noise_free_var():
    phi = np.array([[[0.5, 0.1], [-0.2, 0.3]], [[0.1, 0.0], [0.05, -0.1]]])
    rng = np.random.default_rng(0)
    from sparsevar.model import propagate

    x = propagate(phi, rng.normal(size=(2, 400)) * np.r_[1.0, 1.0][:, None])
    res = fit_lse(build_problem(x, 2))
    # oracle: generic least squares on the same design
    p = build_problem(x, 2)
    B = np.linalg.lstsq(p.X, p.Y, rcond=None)[0]
    np.testing.assert_allclose(res.coef, B, atol=1e-10)
    assert res.support.all() and res.lam is None
    np.testing.assert_allclose(res.residuals, p.Y - p.X @ B, atol=1e-10)


def test_lse_singular_design():
    rng = np.random.default_rng(0)
    z = rng.normal(size=200)
    with pytest.raises(SingularDesign):
        fit_lse(build_problem(np.vstack([z, z]), 1))


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.floats(0, 5))
def test_soft_threshold_properties(z, g):
    z = np.array(z)
    s = soft_threshold(z, g)
    assert np.all(np.abs(s) <= np.abs(z) + 1e-12)
    assert np.all(s[np.abs(z) <= g] == 0)
    big = np.abs(z) > g
    np.testing.assert_allclose(np.abs(z[big]) - np.abs(s[big]), g, atol=1e-9)
    assert np.all(np.sign(s[big]) == np.sign(z[big]))


def test_soft_threshold_negative_gamma():
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


def test_lambda_max_is_the_zero_threshold(cluster_series):
    _, x = cluster_series
    p = build_problem(x, 1)
    top = lambda_max(p)
    assert not np.any(fit_lasso(p, top * 1.0001).coef)
    assert np.any(fit_lasso(p, top * 0.95).coef)
    grid = lambda_grid(p, 10, 1e-2)
    assert grid[0] == pytest.approx(top) and grid[-1] == pytest.approx(top * 1e-2)
    assert np.all(np.diff(grid) < 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.floats(0.01, 0.9))
def test_lasso_kkt_random(seed, q, frac):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, q)) * rng.uniform(0.2, 3.0, size=q)
    Y = X @ rng.normal(size=(q, q)) + rng.normal(size=(60, q))
    from sparsevar.estimators import RegressionProblem

    p = RegressionProblem(Y, X, 1)
    lam = frac * lambda_max(p)
    res = fit_lasso(p, lam, tol=1e-10)
    assert kkt_violation(p, res.coef, lam) < 1e-6


def test_lasso_matches_sklearn(cluster_series):
    sk = pytest.importorskip("sklearn.linear_model")
    _, x = cluster_series
    p = build_problem(x, 2)
    lam = 0.05 * lambda_max(p)
    ours = fit_lasso(p, lam, tol=1e-10).coef
    for k in range(p.P):
        ref = sk.Lasso(alpha=lam / (2 * p.m), fit_intercept=False, tol=1e-12, max_iter=100_000)
        ref.fit(p.X, p.Y[:, k])
        np.testing.assert_allclose(ours[:, k], ref.coef_, atol=1e-6)


def test_lasso_objective_never_increases(cluster_series):
    _, x = cluster_series
    p = build_problem(x, 3)
    res = fit_lasso(p, 0.01 * lambda_max(p), track_objective=True)
    h = res.info["objective_history"]
    assert h.shape[1] == p.P and h.shape[0] == res.n_iter + 1
    assert np.all(np.diff(h, axis=0) <= 1e-9 * np.abs(h[:-1]))


def test_lasso_nonconvergence_warns(cluster_series):
    _, x = cluster_series
    p = build_problem(x, 2)
    with pytest.warns(NoConvergence):
        res = fit_lasso(p, 1e-4 * lambda_max(p), tol=1e-14, max_iter=1)
    assert not res.converged and "no_convergence" in res.flags


def test_lasso_rejects_bad_lambda(cluster_series):
    p = build_problem(cluster_series[1], 1)
    with pytest.raises(ValueError):
        fit_lasso(p, 0.0)


def test_lasso_path_warm_start_agrees_with_cold(cluster_series):
    _, x = cluster_series
    p = build_problem(x, 1)
    lams = lambda_grid(p, 8)[::-1]  # increasing order is accepted too
    path = lasso_path(p, lams, tol=1e-10)
    for lam, B in zip(lams, path):
        np.testing.assert_allclose(B, fit_lasso(p, lam, tol=1e-10).coef, atol=1e-7)


def test_lassle_refits_on_lasso_support(cluster_series):
    _, x = cluster_series
    p = build_problem(x, 2)
    lam = 0.02 * lambda_max(p)
    res = fit_lassle(p, lam)
    lasso = fit_lasso(p, lam)
    np.testing.assert_array_equal(res.support, lasso.support)
    np.testing.assert_array_equal(res.phi_hat == 0, lasso.phi_hat == 0)
    B = res.coef
    for k in range(p.P):
        S = np.flatnonzero(lasso.coef[:, k])
        XS = p.X[:, S]
        ref = np.linalg.solve(XS.T @ XS, XS.T @ p.Y[:, k])
        np.testing.assert_allclose(B[S, k], ref, atol=1e-10)


def test_lassle_empty_support_is_zero(cluster_series):
    p = build_problem(cluster_series[1], 1)
    res = fit_lassle(p, 2 * lambda_max(p))
    assert not res.phi_hat.any() and not res.support.any()


def test_fit_dispatch(cluster_series):
    p = build_problem(cluster_series[1], 1)
    assert fit(p, "lse").method == "lse"
    assert fit(p, "lassle", 10.0).lam == 10.0
    with pytest.raises(ValueError):
        fit(p, "lasso")
    with pytest.raises(ValueError):
        fit(p, "ridge", 1.0)


def test_fit_result_roundtrip(cluster_series):
    p = build_problem(cluster_series[1], 2)
    res = fit_lassle(p, 0.05 * lambda_max(p))
    back = FitResult.from_dict(res.to_dict())
    np.testing.assert_array_equal(back.phi_hat, res.phi_hat)
    np.testing.assert_array_equal(back.support, res.support)
    np.testing.assert_array_equal(back.residuals, res.residuals)
    assert back.lam == res.lam and back.method == "lassle"
    m = res.to_model()
    assert m.d == 2 and np.allclose(m.sigma, m.sigma.T)


def test_cross_validate_is_seeded_and_consistent(cluster_series):
    _, x = cluster_series
    cands = [(d, lam) for d in (1, 2) for lam in lambda_grid(build_problem(x, d), 6)]
    a = cross_validate(x, cands, K=4, seed=3)
    b = cross_validate(x, cands, K=4, seed=3)
    np.testing.assert_array_equal(a.errors, b.errors)
    assert a.fold_errors.shape == (len(cands), 4)
    np.testing.assert_allclose(a.errors, a.fold_errors.mean(axis=1))
    # min rule returns a minimiser of the mean CV error
    assert a.errors[a.chosen_index] == a.errors.min()
    assert a.chosen == cands[a.chosen_index]


def test_one_se_rule_prefers_sparser_models(cluster_series):
    _, x = cluster_series
    lo = select_lambda(x, 1, K=5, n_lambda=20, rule="min")
    se = select_lambda(x, 1, K=5, n_lambda=20, rule="1se")
    assert se.chosen[1] >= lo.chosen[1]
    assert se.errors[se.chosen_index] <= se.errors.min() + se.fold_errors[se.min_index].std(ddof=1) / np.sqrt(5)


def test_cv_tie_break_prefers_larger_lambda():
    from sparsevar.estimators import _argmin_tiebreak

    cands = [(1, 1.0), (1, 2.0), (2, 2.0)]
    assert _argmin_tiebreak(cands, np.array([0.5, 0.5, 0.5])) == 1


def test_cv_block_folds_and_insufficient_data(cluster_series):
    _, x = cluster_series
    rep = cross_validate(x, [(1, 10.0)], K=3, folds="block")
    assert rep.folds == "block"
    with pytest.raises(InsufficientData):
        cross_validate(x[:, :20], [(3, 1.0)], K=2)
    with pytest.raises(ValueError):
        cross_validate(x, [(1, 1.0)], K=1)
    with pytest.raises(ValueError):
        cross_validate(x, [(1, 1.0)], rule="median")


def test_lasso_orthonormal_design_is_soft_thresholded_lse():
    from sparsevar.estimators import RegressionProblem

    rng = np.random.default_rng(7)
    Q, _ = np.linalg.qr(rng.normal(size=(50, 4)))
    Y = Q @ rng.normal(size=(4, 4)) + 0.1 * rng.normal(size=(50, 4))
    p = RegressionProblem(Y, Q, 1)
    lam = 0.8
    res = fit_lasso(p, lam, tol=1e-12)
    np.testing.assert_allclose(res.coef, soft_threshold(Q.T @ Y, lam / 2), atol=1e-10)


def test_lasso_tiny_lambda_matches_lse(cluster_series):
    p = build_problem(cluster_series[1], 2)
    res = fit_lasso(p, 1e-6 * lambda_max(p), tol=1e-10)
    np.testing.assert_allclose(res.coef, fit_lse(p).coef, atol=1e-4)


def test_compiled_kernel_matches_numpy_path(cluster_series):
    from sparsevar import estimators

    if estimators._cd_compiled is None:
        pytest.skip("numba not installed")
    p = build_problem(cluster_series[1], 3)
    gram = estimators._Gram(p)
    for frac in (0.5, 0.05, 0.002):
        lam = frac * lambda_max(p)
        start = np.zeros((p.q, p.P))
        fast, c1, ok1 = estimators._coordinate_descent(gram, lam, start, 1e-7, 10_000)
        slow, c2, ok2 = estimators._coordinate_descent(gram, lam, start, 1e-7, 10_000, history=[])
        assert ok1 and ok2 and c1 == c2
        np.testing.assert_allclose(fast, slow, rtol=0, atol=1e-12)


def test_numpy_fallback_without_compiled_kernel(cluster_series, monkeypatch):
    from sparsevar import estimators

    p = build_problem(cluster_series[1], 2)
    lam = 0.01 * lambda_max(p)
    ref = fit_lasso(p, lam).coef
    monkeypatch.setattr(estimators, "_cd_compiled", None)
    res = fit_lasso(p, lam)
    assert res.converged and kkt_violation(p, res.coef, lam) < 1e-6
    np.testing.assert_allclose(res.coef, ref, atol=1e-9)

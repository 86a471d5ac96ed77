import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparsevar import NetworkSpec, NoiseSpec, VarModel, check_stationarity, generate_network, simulate
from sparsevar.errors import InvalidLength, InvalidSpec, NonStationaryModel, ShapeMismatch
from sparsevar.model import companion_matrix, propagate, theoretical_autocovariance

from conftest import random_stable_model


def test_var_model_promotes_2d_phi():
    m = VarModel(np.eye(2) * 0.5, np.eye(2))
    assert m.phi.shape == (1, 2, 2) and m.d == 1 and m.P == 2


@pytest.mark.parametrize("phi,sigma", [
    (np.zeros((1, 2, 3)), np.eye(2)),
    (np.zeros((1, 2, 2)), np.eye(3)),
    (np.zeros((1, 2, 2)), np.array([[1.0, 0.5], [0.0, 1.0]])),
    (np.zeros((1, 2, 2)), -np.eye(2)),
])
def test_var_model_rejects_bad_shapes(phi, sigma):
    with pytest.raises(ShapeMismatch):
        VarModel(phi, sigma)


def test_companion_layout():
    phi = np.arange(8, dtype=float).reshape(2, 2, 2)
    C = companion_matrix(phi)
    assert C.shape == (4, 4)
    np.testing.assert_array_equal(C[:2, :2], phi[0])
    np.testing.assert_array_equal(C[:2, 2:], phi[1])
    np.testing.assert_array_equal(C[2:, :2], np.eye(2))
    np.testing.assert_array_equal(C[2:, 2:], 0)


def test_stationarity_scalar_ar():
    # AR(1) with coefficient a has radius |a|
    assert check_stationarity(np.array([[[0.7]]])) == pytest.approx(0.7)
    assert check_stationarity(np.zeros((3, 4, 4))) == 0.0
    # x_t = x_{t-1} - 0.25 x_{t-2}: double root at 0.5
    assert check_stationarity(np.array([[[1.0]], [[-0.25]]])) == pytest.approx(0.5, abs=1e-6)


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 3), st.floats(0.1, 2.0))
def test_stationarity_scales_with_lag_powers(seed, P, d, c):
    # multiplying lag l by c**l multiplies every companion eigenvalue by c
    phi = np.random.default_rng(seed).normal(size=(d, P, P))
    scaled = phi * c ** np.arange(1, d + 1)[:, None, None]
    assert check_stationarity(scaled) == pytest.approx(c * check_stationarity(phi), rel=1e-6, abs=1e-9)


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 3))
def test_propagate_matches_direct_recursion(seed, P, d):
    rng = np.random.default_rng(seed)
    phi = rng.normal(size=(d, P, P)) * 0.2
    eps = rng.normal(size=(P, 30))
    init = rng.normal(size=(P, d))
    X = propagate(phi, eps, init)
    ref = np.zeros_like(eps)
    ref[:, :d] = init
    for t in range(d, 30):
        ref[:, t] = eps[:, t] + sum(phi[l] @ ref[:, t - l - 1] for l in range(d))
    np.testing.assert_allclose(X, ref, atol=1e-12)


def test_simulate_is_deterministic_and_shaped():
    m = generate_network(NetworkSpec("cluster", P=8), seed=3)
    a = simulate(m, T=200, seed=9)
    b = simulate(m, T=200, seed=9)
    c = simulate(m, T=200, seed=10)
    assert a.shape == (8, 200)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_simulate_errors():
    m = VarModel(np.array([[[1.01]]]), np.eye(1))
    with pytest.raises(NonStationaryModel):
        simulate(m, T=10)
    ok = VarModel(np.zeros((2, 1, 1)), np.eye(1))
    with pytest.raises(InvalidLength):
        simulate(ok, T=2)
    with pytest.raises(InvalidLength):
        simulate(ok, T=10, burn_in=-1)


@pytest.mark.parametrize("family", ["gaussian", "student_t", "shifted_chi2"])
def test_noise_moments(family):
    x = NoiseSpec(family).sample(np.random.default_rng(0), 200_000, 3)
    assert x.shape == (200_000, 3)
    np.testing.assert_allclose(x.mean(axis=0), 0.0, atol=5e-3)
    np.testing.assert_allclose(x.var(axis=0), 0.1, rtol=0.05)


def test_noise_uses_given_covariance():
    cov = np.array([[1.0, 0.8], [0.8, 1.0]])
    x = NoiseSpec("gaussian", cov).sample(np.random.default_rng(1), 100_000, 2)
    np.testing.assert_allclose(np.cov(x.T), cov, atol=0.02)


def test_noise_unknown_family():
    with pytest.raises(InvalidSpec):
        NoiseSpec("cauchy")


def test_theoretical_autocovariance_solves_lyapunov(rng):
    m = random_stable_model(rng, 3, 2)
    G0 = theoretical_autocovariance(m)
    # compare with a long simulation
    x = simulate(m, T=200_000, seed=4)
    np.testing.assert_allclose(np.cov(x), G0, atol=0.05 * np.abs(G0).max())


def test_theoretical_autocovariance_ar1():
    m = VarModel(np.array([[[0.6]]]), np.array([[2.0]]))
    assert theoretical_autocovariance(m)[0, 0] == pytest.approx(2.0 / (1 - 0.36))


def test_cluster_network_structure():
    spec = NetworkSpec("cluster", P=12)
    m = generate_network(spec, seed=5)
    phi = m.phi[0]
    regions = spec.region_list()
    label = np.empty(12, dtype=int)
    for k, r in enumerate(regions):
        label[r] = k
    for u in range(12):
        for v in range(12):
            a, b = label[u], label[v]
            allowed = a == b or {a, b} == {0, 3}
            if not allowed:
                assert phi[u, v] == 0
            elif a == b:
                assert phi[u, v] != 0  # within-region density is 1
    assert set(np.round(np.diag(phi), 12)) <= {0.4, 0.6}
    assert set(np.round(np.abs(phi[~np.eye(12, dtype=bool)]), 12)) <= {0.0, 0.1}
    np.testing.assert_array_equal(m.sigma, 0.1 * np.eye(12))
    assert m.stationary


def test_scale_free_network_structure():
    m = generate_network(NetworkSpec("scale_free", P=20, probability=0.1), seed=2)
    phi = m.phi[0] / m.metadata["rescale_factor"]
    np.testing.assert_allclose(np.diag(phi), 0.5)
    assert set(np.round(np.abs(phi[~np.eye(20, dtype=bool)]), 12)) <= {0.0, 0.1}


def test_scale_free_probability_extremes():
    empty = generate_network(NetworkSpec("scale_free", P=5, probability=0.0), seed=0)
    np.testing.assert_array_equal(empty.phi[0], 0.5 * np.eye(5))


def test_network_rescaled_when_explosive():
    # dense cluster of 40 channels is explosive before shrinking
    m = generate_network(NetworkSpec("cluster", P=40, n_regions=1, connected=()), seed=0)
    assert m.metadata["rescale_power"] > 0
    assert check_stationarity(m) < 0.98
    k = m.metadata["rescale_power"]
    assert check_stationarity(m.phi / 0.95 ** k * 0.95 ** (k - 1)) >= 0.98


def test_network_is_seeded():
    spec = NetworkSpec("scale_free", P=15, d=2, probability=0.2)
    np.testing.assert_array_equal(generate_network(spec, 1).phi, generate_network(spec, 1).phi)


@pytest.mark.parametrize("spec", [
    NetworkSpec("ring"),
    NetworkSpec("cluster", P=1),
    NetworkSpec("cluster", d=0),
    NetworkSpec("scale_free", probability=1.5),
    NetworkSpec("cluster", connected=((0, 7),)),
    NetworkSpec("cluster", regions=[[0, 1], [1, 2]]),
])
def test_network_spec_validation(spec):
    with pytest.raises(InvalidSpec):
        generate_network(spec)


def test_model_roundtrip_and_permutation(rng):
    m = random_stable_model(rng, 4, 2)
    back = VarModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.phi, m.phi)
    order = [2, 0, 3, 1]
    p = m.permuted(order)
    assert p.phi[1, 0, 3] == m.phi[1, 2, 1]
    assert check_stationarity(p) == pytest.approx(check_stationarity(m))

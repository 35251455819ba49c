import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffnet import harness, simulate
from diffnet.netmodel import DiscreteModel
from diffnet.polymat import PolyMatrix
from diffnet.simulate import Dataset, NoiseSpec, UnstableModelError


def static_model(A0, B=None, C=None, Lambda=None):
    L = A0.shape[0]
    B = PolyMatrix(np.eye(L)[None]) if B is None else B
    C = PolyMatrix.identity(L) if C is None else C
    Lambda = np.zeros((L, L)) if Lambda is None else Lambda
    return DiscreteModel(PolyMatrix(A0[None]), B, C, Lambda)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.ones((2, 5)), np.ones((1, 4)))
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan, 1.0]]), np.ones((1, 2)))
    d = Dataset(np.ones((2, 5)), np.zeros((0, 5)))
    assert (d.L, d.K, d.N) == (2, 0, 5)


def test_identity_network_passes_input_through():
    r = np.random.default_rng(0).standard_normal((3, 50))
    assert np.allclose(simulate.generate(static_model(np.eye(3)), r).w, r)


def test_static_gain():
    r = np.random.default_rng(1).standard_normal((2, 50))
    assert np.allclose(simulate.generate(static_model(2 * np.eye(2)), r).w, r / 2)


def test_generate_is_deterministic(four_node):
    m = four_node.discrete()
    r = np.random.default_rng(3).standard_normal((1, 500))
    d1 = simulate.generate(m, r, NoiseSpec(m.Lambda, 11))
    d2 = simulate.generate(m, r, NoiseSpec(m.Lambda, 11))
    assert d1.w.tobytes() == d2.w.tobytes()


def test_generate_rejects_unstable():
    A = PolyMatrix.scalar([1.0, -2.0])
    m = DiscreteModel(A, PolyMatrix.scalar([1.0]), PolyMatrix.identity(1), np.eye(1))
    with pytest.raises(UnstableModelError):
        simulate.generate(m, np.ones((1, 10)))


def test_innovation_covariance_examples():
    assert np.allclose(simulate.innovation_covariance(2 * np.eye(3), np.eye(3)), 0.25 * np.eye(3))
    lam = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert np.allclose(simulate.innovation_covariance(np.eye(2), lam), lam)
    A0 = np.array([[2.0, -1], [-1, 1]])
    assert np.allclose(simulate.innovation_covariance(A0, np.eye(2)), [[2, 3], [3, 5]])


def test_prediction_error_noiseless_is_zero(four_node):
    m = four_node.discrete()
    quiet = DiscreteModel(m.A, m.B, m.C, np.zeros((4, 4)), m.Ts)
    d = simulate.generate(quiet, np.random.default_rng(4).standard_normal((1, 400)))
    eps = simulate.prediction_error(quiet, d)
    assert np.abs(eps).max() < 1e-12 * np.abs(d.w).max()


def test_prediction_error_recovers_scaled_noise(four_node):
    m = four_node.discrete()
    r = np.random.default_rng(5).standard_normal((1, 1000))
    d, e = simulate.generate(m, r, NoiseSpec(m.Lambda, 6), return_noise=True)
    eps = simulate.prediction_error(m, d)
    expected = np.linalg.solve(m.A.coeffs[0], e)
    assert np.abs(eps - expected).max() < 1e-8 * np.abs(expected).max()


def test_prediction_error_static_formula():
    A0 = np.array([[2.0, -1], [-1, 1]])
    B = PolyMatrix(np.array([[[1.0], [0.5]]]))
    m = static_model(A0, B=B)
    rng = np.random.default_rng(7)
    d = Dataset(rng.standard_normal((2, 30)), rng.standard_normal((1, 30)))
    expected = d.w - np.linalg.solve(A0, B.coeffs[0] @ d.r)
    assert np.allclose(simulate.prediction_error(m, d), expected)


def test_predictor_identity(four_node):
    """w - eps from the recursive filter equals the series-expansion predictor."""
    m = four_node.discrete()
    r = np.random.default_rng(8).standard_normal((1, 300))
    d = simulate.generate(m, r, NoiseSpec(m.Lambda, 9))
    eps = simulate.prediction_error(m, d)
    pred = simulate.one_step_predictor(m, d)
    assert np.abs(d.w - eps - pred).max() < 1e-10 * max(1.0, np.abs(d.w).max())


def test_cost_weighted_examples():
    assert simulate.cost_weighted(np.zeros((2, 5)), np.eye(2)) == 0.0
    assert simulate.cost_weighted(np.ones((2, 1)), np.eye(2)) == 2.0
    with pytest.raises(ValueError):
        simulate.cost_weighted(np.ones((2, 1)), -np.eye(2))


def test_cost_weighted_chi_square_mean():
    rng = np.random.default_rng(10)
    lam = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 0.5]])
    eps = np.linalg.cholesky(lam) @ rng.standard_normal((3, 100_000))
    assert simulate.cost_weighted(eps, np.linalg.inv(lam)) == pytest.approx(3.0, rel=0.05)


def test_cost_det_examples():
    assert simulate.cost_det(np.zeros((2, 10))) == simulate.DetCost(0.0, True)
    c = simulate.cost_det(np.full((1, 10), 3.0))
    assert c.value == pytest.approx(9.0) and not c.degenerate


def test_cost_det_converges():
    rng = np.random.default_rng(11)
    lam = np.array([[1.0, 0.4], [0.4, 2.0]])
    eps = np.linalg.cholesky(lam) @ rng.standard_normal((2, 100_000))
    assert simulate.cost_det(eps).value == pytest.approx(np.linalg.det(lam), rel=0.1)


@given(st.integers(0, 2 ** 31))
def test_noise_draw_matches_covariance_shape(seed):
    lam = np.array([[1.0, 0.5], [0.5, 1.0]])
    e = NoiseSpec(lam, seed).draw(20)
    assert e.shape == (2, 20) and np.all(np.isfinite(e))
    assert np.array_equal(e, NoiseSpec(lam, seed).draw(20))


def test_innovation_white_and_covariance(four_node):
    m = four_node.discrete()
    N = 100_000
    d = simulate.generate(m, np.random.default_rng(12).standard_normal((1, N)), NoiseSpec(m.Lambda, 13))
    eps = simulate.prediction_error(m, d)[:, 10:]
    assert simulate.whiteness(eps[:, :10_000]) < 3.0 * 1.5  # see acceptance suite for the strict check
    cov = eps @ eps.T / eps.shape[1]
    target = simulate.innovation_covariance(m.A.coeffs[0], m.Lambda)
    assert np.linalg.norm(cov - target) / np.linalg.norm(target) < 0.05


def test_autocorrelation_of_known_sequence():
    x = np.array([[1.0, -1.0] * 50])
    ac = simulate.autocorrelation(x, 2)
    assert ac[0, 0] == pytest.approx(-0.99) and ac[0, 1] == pytest.approx(0.98)


def test_true_model_innovations_exceed_band_at_white_noise_rate(four_node):
    """Individual |acf| sqrt(N) values exceed 3 about as often as for white noise (0.27%)."""
    m = four_node.discrete()
    N, stats = 10000, []
    for run in range(20):
        rng, e_seed = harness.run_seeds(5, 0, run)
        data = simulate.generate(m, rng.standard_normal((1, N)), NoiseSpec(m.Lambda, e_seed))
        stats.append(np.abs(simulate.autocorrelation(simulate.prediction_error(m, data), 20)).ravel())
    rate = np.mean(np.concatenate(stats) * np.sqrt(N) > 3)
    assert rate < 0.01

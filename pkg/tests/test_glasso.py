import numpy as np
import pytest

from scehg.covariance import KernelConfig, SubjectSeries, subject_covariance
from scehg.errors import InvalidInputError, NotPositiveDefiniteError
from scehg.glasso import (
    PrecisionEstimate,
    default_lambda_grid,
    glasso_cv,
    glasso_fit,
    glasso_objective,
    n_nodes_from_features,
    reconstruct,
    upper_index_pairs,
    vectorize_upper,
)
from scehg.simgen import ar_covariance, sample_matrix_normal, small_world_precision
from scehg.solvers import SolverOptions, sym_factor


def random_spd(rng, p, cond=5.0):
    Q, _ = np.linalg.qr(rng.normal(size=(p, p)))
    eig = np.linspace(1.0, cond, p)
    M = (Q * eig) @ Q.T
    return 0.5 * (M + M.T)


def test_scalar_example():
    est = glasso_fit(np.array([[2.0]]), 0.5)
    assert est.omega[0, 0] == pytest.approx(0.4, abs=1e-12)


def test_unpenalized_diagonal_example():
    est = glasso_fit(np.diag([1.0, 4.0]), 0.0)
    np.testing.assert_allclose(est.omega, np.diag([1.0, 0.25]), atol=1e-12)


def test_large_penalty_gives_diagonal(rng):
    S = random_spd(rng, 5)
    lam = np.abs(S).max()
    est = glasso_fit(S, lam)
    np.testing.assert_allclose(est.omega, np.diag(1.0 / (np.diag(S) + lam)), atol=1e-12)


def test_unpenalized_fit_inverts_covariance(rng):
    S = random_spd(rng, 6)
    est = glasso_fit(S, 0.0)
    assert np.abs(est.omega @ S - np.eye(6)).max() < 1e-5


def test_singular_covariance_without_penalty_is_rejected():
    v = np.array([1.0, 2.0, 3.0])
    with pytest.raises(NotPositiveDefiniteError):
        glasso_fit(np.outer(v, v), 0.0)


def test_rank_deficient_covariance_with_penalty_is_ridged(rng):
    Z = rng.normal(size=(6, 3))
    est = glasso_fit(Z @ Z.T / 3, 0.05)
    assert np.linalg.eigvalsh(est.omega)[0] > 0


def test_objective_monotone_per_sweep(rng):
    for _ in range(10):
        S = random_spd(rng, 6, cond=20)
        _, trace = glasso_fit(S, 0.05, return_trace=True)
        assert np.all(np.diff(trace) <= 1e-10)


def test_off_diagonal_mass_shrinks_along_penalty_ladder(rng):
    S = random_spd(rng, 6, cond=10)
    masses = []
    for lam in (0.01, 0.03, 0.1, 0.3, 1.0):
        om = glasso_fit(S, lam).omega
        masses.append(np.abs(om - np.diag(np.diag(om))).sum())
    assert all(a >= b - 1e-9 for a, b in zip(masses, masses[1:]))


def test_matches_generic_convex_solver(rng):
    cp = pytest.importorskip("cvxpy")
    S = random_spd(rng, 4, cond=6)
    lam = 0.1
    X = cp.Variable((4, 4), PSD=True)
    prob = cp.Problem(cp.Minimize(cp.trace(S @ X) - cp.log_det(X) + lam * cp.sum(cp.abs(X))))
    prob.solve(solver=cp.SCS, eps=1e-9, max_iters=200000)
    est = glasso_fit(S, lam)
    np.testing.assert_allclose(est.omega, X.value, atol=1e-4)
    assert est.objective <= prob.value + 1e-6


def test_estimate_is_symmetric_positive_definite(rng):
    S = random_spd(rng, 5)
    est = glasso_fit(S, 0.02)
    np.testing.assert_array_equal(est.omega, est.omega.T)
    sym_factor(est.omega)
    assert est.objective == pytest.approx(glasso_objective(S, est.omega, 0.02), rel=1e-12)


def test_invalid_inputs():
    with pytest.raises(InvalidInputError):
        glasso_fit(np.ones((2, 3)), 0.1)
    with pytest.raises(InvalidInputError):
        glasso_fit(np.eye(2), -0.1)
    with pytest.raises(InvalidInputError):
        glasso_fit(np.array([[1.0, np.nan], [np.nan, 1.0]]), 0.1)


def test_vectorize_examples():
    assert vectorize_upper(np.array([[2.0, 0.3], [0.3, 2.0]])).values.tolist() == [0.3]
    a, b, c = 0.1, 0.2, 0.3
    om = np.array([[1, a, b], [a, 1, c], [b, c, 1]])
    assert vectorize_upper(om).values.tolist() == [a, b, c]
    np.testing.assert_array_equal(vectorize_upper(np.eye(4)).values, np.zeros(6))


def test_vectorize_reconstruct_round_trip(rng):
    om = random_spd(rng, 6)
    feats = vectorize_upper(PrecisionEstimate(om, 0.1, 0.0))
    assert len(feats.values) == 15 and feats.p == 6
    np.testing.assert_array_equal(reconstruct(feats.values, np.diag(om)), om)
    assert upper_index_pairs(3) == [(0, 1), (0, 2), (1, 2)]
    assert n_nodes_from_features(28) == 8
    with pytest.raises(InvalidInputError):
        n_nodes_from_features(7)


def ar_series(seed, p=6, q=120):
    rng = np.random.default_rng(seed)
    omega = small_world_precision(p, 1, seed=seed)[0][0]
    Z = sample_matrix_normal(sym_factor(omega).inverse(), ar_covariance(q), rng)
    return SubjectSeries("s", Z)


def test_cv_single_and_duplicate_grid():
    s = ar_series(1)
    lam, _ = glasso_cv(s, lambda_grid=[0.07])
    assert lam == 0.07
    grid = [0.3, 0.01, 0.05, 0.1]
    dup = [0.3, 0.01, 0.01, 0.05, 0.3, 0.1]
    a, est_a = glasso_cv(s, lambda_grid=grid)
    b, est_b = glasso_cv(s, lambda_grid=dup)
    assert a == b
    np.testing.assert_array_equal(est_a.omega, est_b.omega)


def test_cv_choice_beats_grid_endpoints():
    for seed in range(3):
        grid = default_lambda_grid(subject_covariance(ar_series(seed)))
        lam, est, scores = glasso_cv(ar_series(seed), lambda_grid=grid, return_scores=True)
        assert scores[lam] <= scores[grid[0]] and scores[lam] <= scores[grid[-1]]
        assert est.penalty_used == lam


def test_cv_refits_on_full_series():
    s = ar_series(4)
    lam, est = glasso_cv(s, KernelConfig(3.0), lambda_grid=[0.05, 0.2], folds=4)
    np.testing.assert_allclose(
        est.omega, glasso_fit(subject_covariance(s, KernelConfig(3.0)), lam).omega, atol=0
    )


def test_cv_argument_checks():
    s = ar_series(0, q=4)
    with pytest.raises(InvalidInputError):
        glasso_cv(s, folds=5)
    with pytest.raises(InvalidInputError):
        glasso_cv(s, folds=1)
    with pytest.raises(InvalidInputError):
        glasso_cv(s, lambda_grid=[], folds=2)


def test_default_grid_spans_largest_off_diagonal():
    S = np.array([[1.0, 0.4], [0.4, 1.0]])
    grid = default_lambda_grid(S, n_values=3, ratio=0.01)
    np.testing.assert_allclose(grid, [0.004, 0.04, 0.4])
    assert default_lambda_grid(np.eye(2), n_values=2)[-1] == 1.0


def test_solver_options_are_respected():
    est = glasso_fit(np.array([[2.0, 0.5], [0.5, 1.0]]), 0.01, SolverOptions(tol=1e-12, max_iters=500))
    assert est.n_sweeps >= 1

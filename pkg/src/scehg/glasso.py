"""Graphical lasso with a penalized diagonal, plus time-blocked CV.

The solver is block coordinate descent on the primal precision matrix: each
column update is a lasso problem solved with :func:`scehg.solvers.lasso_cd_gram`.
Exact block minimization keeps the penalized likelihood monotone across sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import KernelConfig, SubjectSeries, subject_covariance
from .errors import ConvergenceError, InvalidInputError, NotPositiveDefiniteError
from .solvers import SolverOptions, lasso_cd_gram, sym_factor

RIDGE_EIG_THRESHOLD = 1e-10
RIDGE_SCALE = 1e-8


@dataclass
class PrecisionEstimate:
    omega: np.ndarray
    penalty_used: float
    objective: float
    n_sweeps: int = 0


@dataclass
class ConnectivityFeatures:
    subject_id: str
    values: np.ndarray
    p: int


def glasso_objective(S, omega, lam):
    """``Tr(S @ omega) - log|omega| + lam * sum(|omega|)``; inf if not PD."""
    try:
        logdet = sym_factor(omega, sym_tol=1e-8).logdet
    except NotPositiveDefiniteError:
        return np.inf
    return float(np.sum(S * omega) - logdet + lam * np.abs(omega).sum())


def _prepare(S, lam):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise InvalidInputError(f"covariance must be square, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise InvalidInputError("covariance contains non-finite entries")
    if not lam >= 0:
        raise InvalidInputError(f"penalty must be >= 0, got {lam}")
    S = 0.5 * (S + S.T)
    eig_min = np.linalg.eigvalsh(S)[0]
    if lam == 0:
        # unpenalized MLE exists only for positive definite S
        sym_factor(S)
        if eig_min < RIDGE_EIG_THRESHOLD:
            raise NotPositiveDefiniteError(
                "covariance is numerically singular; an unpenalized fit does not exist"
            )
    elif eig_min < RIDGE_EIG_THRESHOLD:
        S = S + RIDGE_SCALE * np.mean(np.diag(S)) * np.eye(S.shape[0])
    return S


def glasso_fit(S, lam, opts: SolverOptions | None = None, return_trace=False):
    """Penalized Gaussian likelihood estimate of a precision matrix.

    Minimizes ``Tr(S Omega) - log|Omega| + lam * ||Omega||_1`` where the
    L1 norm runs over every entry, diagonal included.

    Parameters
    ----------
    S : ndarray, shape (p, p)
        Symmetric positive semidefinite covariance.
    lam : float
        Nonnegative penalty. ``lam = 0`` requires ``S`` positive definite.
    opts : SolverOptions, optional
        ``tol`` bounds both the relative objective change and the largest
        entry change of a full sweep.

    Returns
    -------
    PrecisionEstimate, or ``(PrecisionEstimate, objective_per_sweep)`` when
    ``return_trace`` is set.
    """
    opts = opts or SolverOptions(tol=1e-8, max_iters=1000)
    S = _prepare(S, lam)
    p = S.shape[0]
    inner = SolverOptions(tol=min(opts.tol, 1e-10), max_iters=100_000)

    # diagonal start is the exact answer once every off-diagonal is shrunk away
    omega = np.diag(1.0 / (np.diag(S) + lam))
    W = np.diag(np.diag(S) + lam)
    obj = glasso_objective(S, omega, lam)
    trace = [obj]
    if p == 1:
        est = PrecisionEstimate(omega, float(lam), obj, 0)
        return (est, trace) if return_trace else est

    idx = np.arange(p)
    for sweep in range(1, opts.max_iters + 1):
        prev = omega.copy()
        for j in range(p):
            rest = idx != j
            w22 = S[j, j] + lam
            # inverse of the (p-1)x(p-1) block of omega via the Schur complement of W
            w12 = W[rest, j]
            inv11 = W[np.ix_(rest, rest)] - np.outer(w12, w12) / W[j, j]
            inv11 = 0.5 * (inv11 + inv11.T)
            beta = lasso_cd_gram(w22 * inv11, -S[rest, j], 2.0 * lam, inner, init=omega[rest, j])
            omega[rest, j] = beta
            omega[j, rest] = beta
            u = inv11 @ beta
            omega[j, j] = 1.0 / w22 + beta @ u
            # rank-one refresh of W = inv(omega)
            W[np.ix_(rest, rest)] = inv11 + w22 * np.outer(u, u)
            W[rest, j] = -w22 * u
            W[j, rest] = -w22 * u
            W[j, j] = w22
        new_obj = glasso_objective(S, omega, lam)
        trace.append(new_obj)
        rel = abs(obj - new_obj) / max(1.0, abs(new_obj))
        obj = new_obj
        if rel < opts.tol and np.abs(omega - prev).max() < opts.tol:
            est = PrecisionEstimate(0.5 * (omega + omega.T), float(lam), obj, sweep)
            return (est, trace) if return_trace else est
        if sweep % 20 == 0:
            # rank-one refreshes drift; re-invert now and then
            W = sym_factor(0.5 * (omega + omega.T), sym_tol=1e-6).inverse()

    raise ConvergenceError(
        f"graphical lasso did not converge in {opts.max_iters} sweeps",
        last_iterate=PrecisionEstimate(omega, float(lam), obj, opts.max_iters),
        n_iter=opts.max_iters,
    )


def default_lambda_grid(S, n_values=8, ratio=0.01):
    """Geometric grid from ``ratio * m`` to ``m``, ``m`` the largest off-diagonal |S|."""
    S = np.asarray(S, dtype=float)
    off = np.abs(S - np.diag(np.diag(S)))
    top = float(off.max(initial=0.0))
    if top <= 0:
        top = float(np.mean(np.diag(S))) or 1.0
    return list(np.geomspace(ratio * top, top, n_values))


def _fold_bounds(q, folds):
    edges = np.linspace(0, q, folds + 1).round().astype(int)
    return [(edges[k], edges[k + 1]) for k in range(folds)]


def glasso_cv(
    series: SubjectSeries,
    cfg: KernelConfig | None = None,
    lambda_grid=None,
    folds=5,
    opts: SolverOptions | None = None,
    return_scores=False,
):
    """Pick the penalty by contiguous-block cross validation over time.

    Each fold holds out one contiguous block of time columns, fits on the
    kernel covariance of the remaining columns and scores the held-out
    kernel covariance by ``Tr(S_test Omega) - log|Omega|``. Ties go to the
    first grid entry. The chosen penalty is refit on the whole series.
    """
    cfg = cfg or KernelConfig()
    q = series.q
    if folds < 2:
        raise InvalidInputError(f"folds must be >= 2, got {folds}")
    if q < folds:
        raise InvalidInputError(f"series has {q} time points, fewer than {folds} folds")
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(subject_covariance(series, cfg))
    lambda_grid = [float(v) for v in lambda_grid]
    if not lambda_grid:
        raise InvalidInputError("lambda grid is empty")

    splits = []
    for lo, hi in _fold_bounds(q, folds):
        train = np.concatenate([series.data[:, :lo], series.data[:, hi:]], axis=1)
        test = series.data[:, lo:hi]
        splits.append(
            (
                subject_covariance(SubjectSeries(series.subject_id, train), cfg),
                subject_covariance(SubjectSeries(series.subject_id, test), cfg),
            )
        )

    scores = {}
    for lam in lambda_grid:
        if lam in scores:
            continue
        fold_scores = []
        for S_train, S_test in splits:
            est = _fit_tolerant(S_train, lam, opts)
            logdet = sym_factor(est.omega, sym_tol=1e-8).logdet
            fold_scores.append(float(np.sum(S_test * est.omega) - logdet))
        scores[lam] = float(np.mean(fold_scores))

    best = lambda_grid[0]
    for lam in lambda_grid:
        if scores[lam] < scores[best]:
            best = lam
    est = _fit_tolerant(subject_covariance(series, cfg), best, opts)
    if return_scores:
        return best, est, scores
    return best, est


def _fit_tolerant(S, lam, opts):
    try:
        return glasso_fit(S, lam, opts)
    except ConvergenceError as err:
        # the last iterate is still a valid positive definite estimate
        return err.last_iterate


def vectorize_upper(est) -> ConnectivityFeatures:
    """Strict upper triangle stacked column by column (j ascending, i < j)."""
    omega = est.omega if isinstance(est, PrecisionEstimate) else np.asarray(est)
    p = omega.shape[0]
    values = np.array([omega[i, j] for j in range(p) for i in range(j)], dtype=float)
    sid = getattr(est, "subject_id", "")
    return ConnectivityFeatures(sid, values, p)


def upper_index_pairs(p):
    """``(i, j)`` pairs (0-based) in the order used by :func:`vectorize_upper`."""
    return [(i, j) for j in range(p) for i in range(j)]


def n_nodes_from_features(d):
    p = int(round((1 + np.sqrt(1 + 8 * d)) / 2))
    if p * (p - 1) // 2 != d:
        raise InvalidInputError(f"{d} is not a triangular number p(p-1)/2")
    return p


def reconstruct(values, diagonal):
    """Symmetric matrix from strict-upper features and a diagonal."""
    diagonal = np.asarray(diagonal, dtype=float)
    p = diagonal.shape[0]
    M = np.diag(diagonal)
    for v, (i, j) in zip(values, upper_index_pairs(p)):
        M[i, j] = M[j, i] = v
    return M

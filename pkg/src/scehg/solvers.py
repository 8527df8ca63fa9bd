"""Low-level numerical routines.

Lasso by cyclic coordinate descent, the group soft-thresholding prox, the
truncated L1 penalty, and a Cholesky-backed factorization of symmetric
positive definite matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.linalg import lapack

from .errors import ConvergenceError, InvalidInputError, NotPositiveDefiniteError


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-7
    max_iters: int = 10_000

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidInputError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise InvalidInputError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass
class LassoProblem:
    """Minimize ``||response - design @ beta||^2 + penalty * ||beta||_1``.

    There is no 1/2 in front of the squared loss.
    """

    design: np.ndarray
    response: np.ndarray
    penalty: float

    def __post_init__(self):
        self.design = np.atleast_2d(np.asarray(self.design, dtype=float))
        self.response = np.asarray(self.response, dtype=float).ravel()
        if self.design.shape[0] != self.response.shape[0]:
            raise InvalidInputError(
                f"design has {self.design.shape[0]} rows but response has "
                f"{self.response.shape[0]} entries"
            )
        if not (np.all(np.isfinite(self.design)) and np.all(np.isfinite(self.response))):
            raise InvalidInputError("lasso problem contains non-finite entries")
        if not (np.isfinite(self.penalty) and self.penalty >= 0):
            raise InvalidInputError(f"penalty must be finite and >= 0, got {self.penalty}")

    def objective(self, beta):
        r = self.response - self.design @ beta
        return float(r @ r + self.penalty * np.abs(beta).sum())


@numba.njit(cache=True)
def _cd_kernel(gram, corr, penalty, beta, tol, max_iters):
    # minimizes beta' G beta - 2 c' beta + penalty * |beta|_1, ascending sweeps
    d = beta.shape[0]
    half = 0.5 * penalty
    # grad_j = (G beta)_j, kept current as coordinates move
    gb = gram @ beta
    trace = np.empty(max_iters)
    n_sweeps = 0
    converged = False
    for sweep in range(max_iters):
        max_change = 0.0
        for j in range(d):
            gjj = gram[j, j]
            old = beta[j]
            if gjj <= 0.0:
                new = 0.0
            else:
                z = corr[j] - (gb[j] - gjj * old)
                if z > half:
                    new = (z - half) / gjj
                elif z < -half:
                    new = (z + half) / gjj
                else:
                    new = 0.0
            delta = new - old
            if delta != 0.0:
                beta[j] = new
                for k in range(d):
                    gb[k] += gram[k, j] * delta
                if abs(delta) > max_change:
                    max_change = abs(delta)
        obj = 0.0
        for j in range(d):
            obj += beta[j] * gb[j] - 2.0 * corr[j] * beta[j] + penalty * abs(beta[j])
        trace[sweep] = obj
        n_sweeps = sweep + 1
        if max_change < tol:
            converged = True
            break
    return beta, trace[:n_sweeps], converged


def lasso_cd_gram(gram, corr, penalty, opts=None, init=None, return_trace=False):
    """Coordinate descent on the Gram form of a lasso problem.

    Minimizes ``b' G b - 2 c' b + penalty * ||b||_1``, which equals the
    lasso objective ``||y - Z b||^2 + penalty * ||b||_1`` up to the constant
    ``y'y`` when ``G = Z'Z`` and ``c = Z'y``.

    Parameters
    ----------
    gram : ndarray, shape (d, d)
        Symmetric positive semidefinite Gram matrix.
    corr : ndarray, shape (d,)
    penalty : float
    opts : SolverOptions, optional
    init : ndarray, optional
        Starting coefficients; zeros by default.
    return_trace : bool
        Also return the objective value after every sweep.
    """
    opts = opts or SolverOptions()
    gram = np.ascontiguousarray(gram, dtype=float)
    corr = np.ascontiguousarray(corr, dtype=float)
    d = corr.shape[0]
    beta = np.zeros(d) if init is None else np.array(init, dtype=float)

    offdiag = gram - np.diag(np.diag(gram))
    if not offdiag.any():
        # separable case: one ascending sweep is exact and the next is a no-op
        g = np.diag(gram)
        with np.errstate(divide="ignore", invalid="ignore"):
            new = np.where(
                g > 0, np.sign(corr) * np.maximum(np.abs(corr) - 0.5 * penalty, 0.0) / g, 0.0
            )
        if return_trace:
            obj = float(new @ (g * new) - 2 * corr @ new + penalty * np.abs(new).sum())
            return new, [obj, obj]
        return new

    beta, trace, converged = _cd_kernel(gram, corr, float(penalty), beta, opts.tol, opts.max_iters)
    if not converged:
        raise ConvergenceError(
            f"lasso coordinate descent did not reach tol={opts.tol} in {opts.max_iters} sweeps",
            last_iterate=beta,
            n_iter=opts.max_iters,
        )
    if return_trace:
        return beta, list(trace)
    return beta


def lasso_cd(problem: LassoProblem, opts: SolverOptions | None = None, init=None):
    """Solve ``min ||y - Z b||^2 + lambda * ||b||_1`` by cyclic coordinate descent.

    Coordinates are visited in ascending order; the solver stops once a full
    sweep moves no coefficient by more than ``opts.tol``.
    """
    Z = problem.design
    return lasso_cd_gram(Z.T @ Z, Z.T @ problem.response, problem.penalty, opts, init)


def lasso_kkt_violation(problem: LassoProblem, beta):
    """Max-norm distance of ``2 Z'(y - Z b)`` from ``penalty * subdiff|b|``."""
    g = 2.0 * problem.design.T @ (problem.response - problem.design @ beta)
    lam = problem.penalty
    viol = np.where(beta != 0, np.abs(g - lam * np.sign(beta)), np.maximum(np.abs(g) - lam, 0.0))
    return float(viol.max(initial=0.0))


def group_prox(t, s):
    """Group soft-thresholding: ``(1 - s/||t||_2)_+ * t``, zero at ``t = 0``."""
    t = np.asarray(t, dtype=float)
    if s < 0:
        raise InvalidInputError(f"threshold must be >= 0, got {s}")
    if not np.all(np.isfinite(t)):
        raise InvalidInputError("prox input contains non-finite entries")
    norm = np.linalg.norm(t)
    if norm == 0.0 or norm <= s:
        return np.zeros_like(t)
    return (1.0 - s / norm) * t


def tlp(a, tau):
    """Truncated L1 penalty ``min(|a|, tau)``."""
    if not tau > 0:
        raise InvalidInputError(f"tau must be positive, got {tau}")
    return np.minimum(np.abs(a), tau)


class SymFactor:
    """Cholesky factorization of a symmetric positive definite matrix."""

    def __init__(self, lower):
        self.lower = lower
        self._inv = None

    @property
    def logdet(self):
        return float(2.0 * np.log(np.diag(self.lower)).sum())

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        x, info = lapack.dpotrs(self.lower, b, lower=1)
        if info != 0:
            raise InvalidInputError(f"dpotrs failed with info={info}")
        return x

    def inverse(self):
        if self._inv is None:
            inv, info = lapack.dpotri(self.lower, lower=1)
            if info != 0:
                raise NotPositiveDefiniteError(f"dpotri failed with info={info}", pivot=info)
            inv = np.tril(inv)
            self._inv = inv + np.tril(inv, -1).T
        return self._inv.copy()


def sym_factor(M, sym_tol=1e-10):
    """Factor a symmetric positive definite matrix.

    Raises
    ------
    NotPositiveDefiniteError
        With ``pivot`` set to the 0-based index of the first failing pivot.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("matrix contains non-finite entries")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if np.abs(M - M.T).max(initial=0.0) > sym_tol * scale:
        raise InvalidInputError("matrix is not symmetric")
    L, info = lapack.dpotrf(M, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite: pivot {info - 1} failed", pivot=info - 1
        )
    if info < 0:
        raise InvalidInputError(f"dpotrf rejected argument {-info}")
    return SymFactor(L)

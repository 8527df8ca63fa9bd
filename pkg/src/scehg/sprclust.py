"""Sparse penalized regression clustering (SPRclust) by DC programming + ADMM.

Every sample ``x_i`` gets its own centroid ``mu_i``; the fit minimizes::

    1/2 sum_i ||x_i - mu_i||^2 + lam1 sum_i ||mu_i||_1
        + lam2 sum_{i<j} min(||mu_i - mu_j||_2, tau)

The truncated fusion term is handled by an outer difference-of-convex loop.
Each convex surrogate is solved by ADMM over pair differences
``theta_ij = mu_i - mu_j`` with scaled duals ``v_ij``. Samples whose centroids
coincide form a cluster.

Sample and pair indices are 0-based in code. Pairs ``(i, j)`` with ``i < j``
are stored in lexicographic order, one row per pair.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InsufficientSamplesError, InvalidInputError
from .solvers import LassoProblem, SolverOptions, lasso_cd_gram, lasso_kkt_violation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SprclustConfig:
    lam1: float
    lam2: float
    tau: float
    rho: float = 0.4
    admm_opts: SolverOptions = field(default_factory=lambda: SolverOptions(tol=1e-4, max_iters=2000))
    dc_max_iters: int = 20
    cluster_tol: float = 1e-4
    standardize: bool = False

    def __post_init__(self):
        if not (self.lam1 >= 0 and self.lam2 >= 0):
            raise InvalidInputError("penalties must be nonnegative")
        if not self.tau > 0:
            raise InvalidInputError(f"tau must be positive, got {self.tau}")
        if not self.rho > 0:
            raise InvalidInputError(f"rho must be positive, got {self.rho}")
        if self.dc_max_iters < 1:
            raise InvalidInputError("dc_max_iters must be >= 1")
        if not self.cluster_tol > 0:
            raise InvalidInputError("cluster_tol must be positive")


def pair_indices(n):
    """Arrays ``(I, J)`` listing the pairs ``i < j`` in lexicographic order."""
    I, J = np.triu_indices(n, k=1)
    return I.astype(np.int64), J.astype(np.int64)


@dataclass
class DcState:
    mu: np.ndarray
    theta: np.ndarray
    duals: np.ndarray
    active: np.ndarray

    def __post_init__(self):
        n, d = self.mu.shape
        npairs = n * (n - 1) // 2
        for name in ("theta", "duals"):
            arr = getattr(self, name)
            if arr.shape != (npairs, d):
                raise InvalidInputError(f"{name} has shape {arr.shape}, expected {(npairs, d)}")
        if self.active.shape != (npairs,):
            raise InvalidInputError(f"active has shape {self.active.shape}, expected {(npairs,)}")

    @property
    def n(self):
        return self.mu.shape[0]

    @property
    def pairs(self):
        return pair_indices(self.n)

    def pair_row(self, i, j):
        """Row of pair ``(i, j)``, ``i < j``, in the pair arrays."""
        n = self.n
        if not 0 <= i < j < n:
            raise InvalidInputError(f"invalid pair ({i}, {j}) for n={n}")
        return i * n - i * (i + 1) // 2 + (j - i - 1)

    def copy(self):
        return DcState(self.mu.copy(), self.theta.copy(), self.duals.copy(), self.active.copy())


@dataclass
class SprclustFit:
    centroids: np.ndarray
    assignment: np.ndarray
    k_hat: int
    objective_trace: list
    kkt_residual: float
    dc_iters: int
    admm_iters_total: int
    converged: bool
    state: DcState = field(repr=False)


def initial_state(X, tau):
    """``mu = X``, ``theta_ij = x_i - x_j``, zero duals, active set from theta."""
    I, J = pair_indices(X.shape[0])
    theta = X[I] - X[J]
    state = DcState(X.copy(), theta, np.zeros_like(theta), np.zeros(len(I), dtype=bool))
    return refresh_active(state, tau)


def _check_X(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InvalidInputError(f"X must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("X contains non-finite entries")
    return X


def objective_S(X, state, cfg: SprclustConfig):
    """Nonconvex objective at the state's centroids (theta taken as mu_i - mu_j)."""
    X = _check_X(X)
    mu = state.mu if isinstance(state, DcState) else np.asarray(state, dtype=float)
    if mu.shape != X.shape:
        raise InvalidInputError(f"centroids have shape {mu.shape}, data {X.shape}")
    I, J = pair_indices(X.shape[0])
    fit_term = 0.5 * np.sum((X - mu) ** 2)
    sparsity = cfg.lam1 * np.abs(mu).sum()
    dist = np.linalg.norm(mu[I] - mu[J], axis=1)
    fusion = cfg.lam2 * np.minimum(dist, cfg.tau).sum()
    return float(fit_term + sparsity + fusion)


def refresh_active(state: DcState, tau):
    """Mark pair ``(i, j)`` active iff ``||theta_ij||_2 < tau``."""
    active = np.linalg.norm(state.theta, axis=1) < tau
    return DcState(state.mu, state.theta, state.duals, active)


def build_pseudo_observations(i, X, state: DcState, cfg: SprclustConfig):
    """Stacked lasso design/response whose solution is the ``mu_i`` update.

    Rows of ``state.mu`` before ``i`` are read as already updated in the
    current sweep, later rows as stale, matching the Gauss-Seidel order.
    Minimizing ``||y - Z mu||^2 + lam1 ||mu||_1`` over the returned problem
    reproduces the ``mu_i`` subproblem of the augmented Lagrangian.
    """
    X = _check_X(X)
    n, d = X.shape
    if not 0 <= i < n:
        raise InvalidInputError(f"sample index {i} outside 0..{n - 1}")
    rho = cfg.rho
    eye = np.eye(d)
    blocks = [eye / np.sqrt(rho)]
    resp = [X[i] / np.sqrt(rho)]
    for j in range(i):
        r = state.pair_row(j, i)
        blocks.append(-eye)
        resp.append(state.theta[r] - state.mu[j] + state.duals[r])
    for j in range(i + 1, n):
        r = state.pair_row(i, j)
        blocks.append(eye)
        resp.append(state.theta[r] + state.mu[j] + state.duals[r])
    scale = np.sqrt(rho / 2.0)
    return LassoProblem(scale * np.vstack(blocks), scale * np.concatenate(resp), cfg.lam1)


@numba.njit(cache=True)
def _admm_kernel(X, mu, theta, v, active, I, J, rho, lam1, lam2, tol, max_iters, check_mu):
    n, d = X.shape
    npairs = I.shape[0]
    # the pseudo-design Gram is c * identity, so each mu_i lasso is a soft-threshold
    c = 0.5 * (1.0 + (n - 1) * rho)
    half = 0.5 * lam1
    shrink = lam2 / rho
    A = np.empty((n, d))
    total = np.empty(d)
    cand = np.empty(d)
    primal = np.inf
    dual = np.inf
    for it in range(max_iters):
        A[:, :] = 0.0
        for p in range(npairs):
            for k in range(d):
                t = theta[p, k] + v[p, k]
                A[I[p], k] += t
                A[J[p], k] -= t
        for k in range(d):
            total[k] = 0.0
            for i in range(n):
                total[k] += mu[i, k]
        for i in range(n):
            for k in range(d):
                g = 0.5 * X[i, k] + 0.5 * rho * (A[i, k] + total[k] - mu[i, k])
                if g > half:
                    new = (g - half) / c
                elif g < -half:
                    new = (g + half) / c
                else:
                    new = 0.0
                total[k] += new - mu[i, k]
                mu[i, k] = new
        primal = 0.0
        dual = 0.0
        for p in range(npairs):
            i = I[p]
            j = J[p]
            norm = 0.0
            for k in range(d):
                cand[k] = mu[i, k] - mu[j, k] - v[p, k]
                norm += cand[k] * cand[k]
            norm = np.sqrt(norm)
            factor = 1.0
            if active[p]:
                if norm == 0.0 or norm <= shrink:
                    factor = 0.0
                else:
                    factor = 1.0 - shrink / norm
            dth = 0.0
            res = 0.0
            for k in range(d):
                new = factor * cand[k]
                dth += (new - theta[p, k]) ** 2
                theta[p, k] = new
                diff = mu[i, k] - mu[j, k]
                v[p, k] = v[p, k] + new - diff
                res += (new - diff) ** 2
            dth = np.sqrt(dth)
            res = np.sqrt(res)
            if res > primal:
                primal = res
            if dth > dual:
                dual = dth
        dual *= rho
        if primal < tol and dual < tol and (
            not check_mu or _mu_stationarity(X, mu, theta, v, I, J, rho, lam1, A, total) < tol
        ):
            return it + 1, primal, dual, True
    return max_iters, primal, dual, False


@numba.njit(cache=True)
def _mu_stationarity(X, mu, theta, v, I, J, rho, lam1, A, total):
    # lasso subgradient violation of every mu_i pseudo problem at the current state
    n, d = X.shape
    c = 0.5 * (1.0 + (n - 1) * rho)
    A[:, :] = 0.0
    for p in range(I.shape[0]):
        for k in range(d):
            t = theta[p, k] + v[p, k]
            A[I[p], k] += t
            A[J[p], k] -= t
    for k in range(d):
        total[k] = 0.0
        for i in range(n):
            total[k] += mu[i, k]
    worst = 0.0
    for i in range(n):
        for k in range(d):
            g = 0.5 * X[i, k] + 0.5 * rho * (A[i, k] + total[k] - mu[i, k])
            r = 2.0 * (g - c * mu[i, k])
            if mu[i, k] > 0:
                viol = abs(r - lam1)
            elif mu[i, k] < 0:
                viol = abs(r + lam1)
            else:
                viol = max(abs(r) - lam1, 0.0)
            if viol > worst:
                worst = viol
    return worst


def _run_admm(X, state: DcState, cfg: SprclustConfig, max_iters, check_mu=True):
    I, J = pair_indices(X.shape[0])
    return _admm_kernel(
        X,
        state.mu,
        state.theta,
        state.duals,
        state.active,
        I,
        J,
        float(cfg.rho),
        float(cfg.lam1),
        float(cfg.lam2),
        float(cfg.admm_opts.tol),
        int(max_iters),
        bool(check_mu),
    )


def admm_sweep(X, state: DcState, cfg: SprclustConfig):
    """One ADMM iteration: Gauss-Seidel mu updates, theta prox, dual ascent.

    Returns a new state plus the primal residual (largest
    ``||theta_ij - (mu_i - mu_j)||``) and dual residual (``rho`` times the
    largest change of any ``theta_ij``).
    """
    X = np.ascontiguousarray(_check_X(X))
    new = state.copy()
    _, primal, dual, _ = _run_admm(X, new, cfg, 1, check_mu=False)
    return new, float(primal), float(dual)


def admm_sweep_reference(X, state: DcState, cfg: SprclustConfig):
    """Slow sweep built from the generic pieces; used to cross-check the kernel."""
    from .solvers import group_prox

    X = _check_X(X)
    new = state.copy()
    opts = SolverOptions(tol=1e-12, max_iters=10_000)
    for i in range(X.shape[0]):
        prob = build_pseudo_observations(i, X, new, cfg)
        Z = prob.design
        new.mu[i] = lasso_cd_gram(Z.T @ Z, Z.T @ prob.response, prob.penalty, opts)
    I, J = new.pairs
    primal = dual = 0.0
    for r, (i, j) in enumerate(zip(I, J)):
        diff = new.mu[i] - new.mu[j]
        cand = diff - new.duals[r]
        theta = group_prox(cand, cfg.lam2 / cfg.rho) if new.active[r] else cand
        dual = max(dual, np.linalg.norm(theta - new.theta[r]))
        new.theta[r] = theta
        new.duals[r] = new.duals[r] + theta - diff
        primal = max(primal, np.linalg.norm(theta - diff))
    return new, float(primal), float(cfg.rho * dual)


def extract_clusters(state: DcState, cluster_tol=1e-4):
    """Connected components of the "same centroid" graph.

    Two samples are linked when their fused difference is exactly zero or
    their centroids agree to ``cluster_tol * (1 + ||mu_i||)``. Labels start
    at 1 and follow the smallest member index.
    """
    mu = state.mu
    n = mu.shape[0]
    I, J = pair_indices(n)
    zero_theta = ~np.any(state.theta != 0, axis=1)
    close = np.linalg.norm(mu[I] - mu[J], axis=1) <= cluster_tol * (1 + np.linalg.norm(mu[I], axis=1))
    keep = zero_theta | close
    graph = coo_matrix((np.ones(keep.sum()), (I[keep], J[keep])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    labels = np.empty(n, dtype=int)
    mapping = {}
    for idx, c in enumerate(comp):
        if c not in mapping:
            mapping[c] = len(mapping) + 1
        labels[idx] = mapping[c]
    return labels, len(mapping)


def kkt_residual(X, state: DcState, cfg: SprclustConfig):
    """Largest violation of the stationarity and feasibility conditions.

    Covers the lasso subgradient condition of every ``mu_i`` pseudo problem,
    the ``theta_ij`` condition (with the unit-ball subgradient at zero for
    active pairs) and the constraint ``theta_ij = mu_i - mu_j``.
    """
    X = _check_X(X)
    worst = 0.0
    for i in range(X.shape[0]):
        prob = build_pseudo_observations(i, X, state, cfg)
        worst = max(worst, lasso_kkt_violation(prob, state.mu[i]))
    I, J = state.pairs
    diff = state.mu[I] - state.mu[J]
    r = cfg.rho * (state.theta - diff + state.duals)
    tnorm = np.linalg.norm(state.theta, axis=1)
    for p in range(len(I)):
        if state.active[p]:
            if tnorm[p] > 0:
                viol = np.linalg.norm(cfg.lam2 * state.theta[p] / tnorm[p] + r[p])
            else:
                viol = max(np.linalg.norm(r[p]) - cfg.lam2, 0.0)
        else:
            viol = np.linalg.norm(r[p])
        worst = max(worst, viol)
    if len(I):
        worst = max(worst, float(np.linalg.norm(state.theta - diff, axis=1).max()))
    return float(worst)


def fit(X, cfg: SprclustConfig) -> SprclustFit:
    """Run the DC loop with an inner ADMM solve per convex surrogate.

    Each surrogate's ADMM starts from ``mu = X``, ``theta_ij = x_i - x_j`` and
    zero duals. The loop stops when the objective fails to strictly decrease
    (the previous iterate is kept and its value repeated in the trace), when
    the active set repeats (the surrogate, and hence its minimizer, is
    unchanged), or after ``dc_max_iters`` iterations.
    """
    X = np.ascontiguousarray(_check_X(X))
    n = X.shape[0]
    if n < 2:
        raise InsufficientSamplesError(f"need at least 2 samples, got {n}")
    scale = None
    if cfg.standardize:
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        X = np.ascontiguousarray(X / scale)

    best = initial_state(X, cfg.tau)
    trace = [objective_S(X, best, cfg)]
    prev_active = None
    admm_total = 0
    converged = True
    dc_iters = 0
    for m in range(1, cfg.dc_max_iters + 1):
        dc_iters = m
        active = refresh_active(best, cfg.tau).active
        if prev_active is not None and np.array_equal(active, prev_active):
            trace.append(trace[-1])
            break
        state = initial_state(X, cfg.tau)
        state.active = active
        iters, primal, dual, ok = _run_admm(X, state, cfg, cfg.admm_opts.max_iters)
        admm_total += iters
        if not ok:
            log.warning(
                "ADMM hit %d iterations (primal %.3g, dual %.3g)", iters, primal, dual
            )
        value = objective_S(X, state, cfg)
        if value < trace[-1]:
            trace.append(value)
            best = state
            prev_active = active
            converged = ok
        else:
            trace.append(trace[-1])
            break

    labels, k_hat = extract_clusters(best, cfg.cluster_tol)
    kkt = kkt_residual(X, best, cfg)
    centroids = best.mu.copy()
    if scale is not None:
        centroids = centroids * scale
    return SprclustFit(
        centroids=centroids,
        assignment=labels,
        k_hat=k_hat,
        objective_trace=trace,
        kkt_residual=kkt,
        dc_iters=dc_iters,
        admm_iters_total=admm_total,
        converged=converged,
        state=best,
    )


def merge_to_k(centroids, assignment, k):
    """Experimental: merge clusters with the closest mean centroids until ``k`` remain.

    Relabels by smallest member index afterwards.
    """
    labels = np.asarray(assignment).copy()
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    while len(np.unique(labels)) > k:
        ids = np.unique(labels)
        means = np.array([centroids[labels == c].mean(axis=0) for c in ids])
        best = None
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                dist = np.linalg.norm(means[a] - means[b])
                if best is None or dist < best[0]:
                    best = (dist, ids[a], ids[b])
        labels[labels == best[2]] = best[1]
    out = np.empty_like(labels)
    mapping = {}
    for idx, c in enumerate(labels):
        mapping.setdefault(c, len(mapping) + 1)
        out[idx] = mapping[c]
    return out, len(mapping)


__all__ = [
    "DcState",
    "SprclustConfig",
    "SprclustFit",
    "admm_sweep",
    "build_pseudo_observations",
    "extract_clusters",
    "fit",
    "initial_state",
    "kkt_residual",
    "objective_S",
    "refresh_active",
]

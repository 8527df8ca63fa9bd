"""Subsampling concordance criterion for choosing ``(lam1, lam2, tau)``.

For each candidate combination the data are clustered in full and on ``B``
subsamples. Two stability scores are computed:

* ``c_bar``: trimmed mean of per-sample concordance between the full-data
  comembership matrix and the average subsample comembership;
* ``f_bar``: mean over clusters of the agreement between the full-data
  feature indicators and their subsample frequencies.

Stage one keeps the combinations with the highest ``c_bar``, stage two takes
the best ``f_bar`` among them.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np

from . import sprclust
from .errors import InvalidInputError, NoValidComboError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TuningGrid:
    lam1: tuple
    lam2: tuple
    tau: tuple
    r: float = 0.5
    s: float = 0.4
    alpha: float = 0.2
    B: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("lam1", "lam2", "tau"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise InvalidInputError(f"grid for {name} is empty")
            if any(not v > 0 for v in vals):
                raise InvalidInputError(f"grid values for {name} must be positive")
            object.__setattr__(self, name, vals)
        if not 0 < self.r < 1:
            raise InvalidInputError(f"r must lie in (0, 1), got {self.r}")
        if not 0 < self.s <= 1:
            raise InvalidInputError(f"s must lie in (0, 1], got {self.s}")
        if not 0 <= self.alpha < 1:
            raise InvalidInputError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.B < 1:
            raise InvalidInputError(f"B must be >= 1, got {self.B}")

    def combos(self):
        return [(a, b, c) for a in self.lam1 for b in self.lam2 for c in self.tau]


@dataclass
class ConcordanceReport:
    combo: tuple
    c_bar: float | None
    f_bar: float | None
    k_hat: int
    omitted: bool = False
    reason: str = ""
    assignment: list = field(default_factory=list)

    def to_dict(self):
        return {
            "combo": list(self.combo),
            "c_bar": self.c_bar,
            "f_bar": self.f_bar,
            "k_hat": self.k_hat,
            "omitted": self.omitted,
            "reason": self.reason,
        }


def comembership_matrix(assignment, present=None, n=None):
    """``T[i, j] = 1`` for same label, 0 otherwise, NaN if either is absent.

    ``assignment`` lists labels for the samples in ``present`` (in order).
    Without ``present`` every sample is present.
    """
    labels = np.asarray(assignment)
    if present is None:
        present = np.arange(len(labels))
    present = np.asarray(present, dtype=int)
    if len(present) != len(labels):
        raise InvalidInputError("labels must cover exactly the present samples")
    n = len(labels) if n is None else n
    T = np.full((n, n), np.nan)
    T[np.ix_(present, present)] = (labels[:, None] == labels[None, :]).astype(float)
    return T


def mean_comembership(mats):
    """Entrywise mean ignoring NaN; NaN where no matrix has the entry."""
    stack = np.stack([np.asarray(m, dtype=float) for m in mats])
    counts = np.sum(~np.isnan(stack), axis=0)
    sums = np.nansum(stack, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def sample_concordance(T, Tbar, alpha=0.2):
    """Per-sample concordance ``C`` and its trimmed mean.

    Pairs with NaN in ``Tbar`` drop out of both sums. A sample lacking
    same-cluster or other-cluster peers gets ``C_i = NaN`` and is excluded
    before the lowest ``floor(alpha * m)`` of the ``m`` defined scores are
    dropped. Returns ``(C, c_bar)`` with ``c_bar = None`` if nothing is defined.
    """
    T = np.asarray(T, dtype=float)
    Tbar = np.asarray(Tbar, dtype=float)
    n = T.shape[0]
    C = np.full(n, np.nan)
    off = ~np.eye(n, dtype=bool)
    seen = ~np.isnan(Tbar)
    for i in range(n):
        same = off[i] & (T[i] == 1) & seen[i]
        diff = off[i] & (T[i] == 0) & seen[i]
        if not same.any() or not diff.any():
            continue
        C[i] = Tbar[i, same].mean() + (1 - Tbar[i, diff]).mean() - 1
    defined = np.sort(C[~np.isnan(C)])
    if len(defined) < n:
        log.debug("%d samples have undefined concordance", n - len(defined))
    if len(defined) == 0:
        return C, None
    drop = int(math.floor(alpha * len(defined)))
    return C, float(defined[drop:].mean())


def feature_indicator(centroids, assignment):
    """``f[k, j] = 1`` iff more than half of cluster ``k+1`` has ``mu_ij != 0``."""
    centroids = np.asarray(centroids)
    labels = np.asarray(assignment)
    ks = np.unique(labels)
    f = np.zeros((len(ks), centroids.shape[1]), dtype=int)
    for row, k in enumerate(ks):
        members = centroids[labels == k]
        f[row] = (np.count_nonzero(members, axis=0) / len(members)) > 0.5
    return f


def match_clusters(full_labels, sub_labels, present):
    """Greedy maximum-overlap matching from subsample clusters to full clusters.

    Returns ``{full_label: sub_label}``. Overlaps are counted on the samples
    present in the subsample; larger overlaps match first, ties go to the
    smaller (full, sub) label pair.
    """
    full_on_sub = np.asarray(full_labels)[np.asarray(present)]
    sub = np.asarray(sub_labels)
    cands = []
    for a in np.unique(full_on_sub):
        for b in np.unique(sub):
            ov = int(np.sum((full_on_sub == a) & (sub == b)))
            if ov > 0:
                cands.append((-ov, int(a), int(b)))
    cands.sort()
    used_a, used_b, out = set(), set(), {}
    for _, a, b in cands:
        if a in used_a or b in used_b:
            continue
        out[a] = b
        used_a.add(a)
        used_b.add(b)
    return out


def _two_term_score(indicator, freq):
    ones = indicator == 1
    zeros = ~ones
    if not ones.any() or not zeros.any():
        return None
    return float(freq[ones].mean() + (1 - freq[zeros]).mean() - 1)


def feature_concordance(f_full, f_sub_list, k_hat_full=None):
    """Cluster-averaged feature concordance ``f_bar``.

    ``f_sub_list`` holds one entry per subsample: either ``None`` (subsample
    dropped) or a dict mapping a 0-based full-cluster row to the matched
    subsample indicator row. A bare 2-D array is taken as already aligned
    row for row. Returns ``None`` when no cluster has a defined score.
    """
    f_full = np.atleast_2d(np.asarray(f_full))
    K = f_full.shape[0]
    if k_hat_full is not None and k_hat_full != K:
        raise InvalidInputError("k_hat_full does not match the indicator rows")
    sums = np.zeros(f_full.shape, dtype=float)
    counts = np.zeros(K, dtype=int)
    for item in f_sub_list:
        if item is None:
            continue
        if not isinstance(item, dict):
            arr = np.atleast_2d(np.asarray(item, dtype=float))
            item = {k: arr[k] for k in range(min(K, arr.shape[0]))}
        for k, row in item.items():
            sums[k] += row
            counts[k] += 1
    scores = []
    for k in range(K):
        if counts[k] == 0:
            continue
        score = _two_term_score(f_full[k], sums[k] / counts[k])
        if score is not None:
            scores.append(score)
    return float(np.mean(scores)) if scores else None


def subsample_indices(n, r, seed, combo_index, b):
    """Sorted draw of ``floor(r n)`` samples without replacement."""
    rng = np.random.default_rng([seed, combo_index, b])
    m = max(2, int(math.floor(r * n)))
    return np.sort(rng.choice(n, size=m, replace=False))


def evaluate_combo(X, combo, combo_index, grid: TuningGrid, template: sprclust.SprclustConfig):
    """Full and subsample fits for one combination, scored."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    cfg = _with_combo(template, combo)
    full = sprclust.fit(X, cfg)
    T = comembership_matrix(full.assignment)
    f_full = feature_indicator(full.centroids, full.assignment)

    mats, f_subs = [], []
    for b in range(grid.B):
        idx = subsample_indices(n, grid.r, grid.seed, combo_index, b)
        sub = sprclust.fit(X[idx], cfg)
        mats.append(comembership_matrix(sub.assignment, idx, n))
        if sub.k_hat > full.k_hat:
            f_subs.append(None)
            continue
        f_sub = feature_indicator(sub.centroids, sub.assignment)
        matched = match_clusters(full.assignment, sub.assignment, idx)
        f_subs.append({a - 1: f_sub[b_ - 1] for a, b_ in matched.items()})

    _, c_bar = sample_concordance(T, mean_comembership(mats), grid.alpha)
    f_bar = feature_concordance(f_full, f_subs)
    report = ConcordanceReport(
        combo=tuple(combo),
        c_bar=c_bar,
        f_bar=f_bar,
        k_hat=full.k_hat,
        assignment=[int(v) for v in full.assignment],
    )
    if full.k_hat == 1:
        report.omitted, report.reason = True, "single cluster"
    elif np.all(f_full == 1):
        report.omitted, report.reason = True, "all features selected"
    elif c_bar is None:
        report.omitted, report.reason = True, "sample concordance undefined"
    elif f_bar is None:
        report.omitted, report.reason = True, "feature concordance undefined"
    return report


def _with_combo(template, combo):
    lam1, lam2, tau = combo
    return sprclust.SprclustConfig(
        lam1=lam1,
        lam2=lam2,
        tau=tau,
        rho=template.rho,
        admm_opts=template.admm_opts,
        dc_max_iters=template.dc_max_iters,
        cluster_tol=template.cluster_tol,
        standardize=template.standardize,
    )


def _preference(report):
    # larger lam2, then larger lam1, then smaller tau
    lam1, lam2, tau = report.combo
    return (-lam2, -lam1, tau)


def choose(reports, s=0.4):
    """Two-stage rule over scored reports; returns the winning report."""
    survivors = [rep for rep in reports if not rep.omitted]
    if not survivors:
        reasons = {str(rep.combo): rep.reason for rep in reports}
        raise NoValidComboError("every tuning combination was omitted", reasons)
    keep = math.ceil(s * len(survivors))
    ranked = sorted(survivors, key=lambda rep: (-rep.c_bar, _preference(rep)))
    top = ranked[:keep]
    return min(top, key=lambda rep: (-rep.f_bar, _preference(rep)))


def _evaluate_star(args):
    return evaluate_combo(*args)


def select_tuning(X, grid: TuningGrid, template=None, executor: Executor | None = None):
    """Score every grid combination and apply the two-stage selection.

    Returns ``(combo, reports)`` with reports in grid order. With an
    executor, combinations are evaluated concurrently; results do not depend
    on scheduling because every subsample draw is seeded by
    ``(seed, combo index, b)``.
    """
    template = template or sprclust.SprclustConfig(lam1=1.0, lam2=1.0, tau=1.0)
    X = np.asarray(X, dtype=float)
    jobs = [(X, combo, idx, grid, template) for idx, combo in enumerate(grid.combos())]
    if executor is None:
        reports = [_evaluate_star(job) for job in jobs]
    else:
        reports = list(executor.map(_evaluate_star, jobs))
    best = choose(reports, grid.s)
    return best.combo, reports

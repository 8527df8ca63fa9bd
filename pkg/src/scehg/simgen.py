"""Synthetic matrix-normal scenarios and evaluation metrics.

Subjects in cluster k are drawn as ``Z ~ MN(0, Sigma_T (x) Sigma_Sk)`` with a
shared temporal covariance (AR or band) and a cluster-specific spatial
precision matrix (hub or small-world support).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .covariance import SubjectSeries
from .errors import InvalidInputError
from .solvers import sym_factor

EDGE_WEIGHT = 0.3
REWIRE_PROB = 0.05


class Scenario(str, enum.Enum):
    AR_HUB = "AR+Hub"
    AR_SMALL_WORLD = "AR+SmallWorld"
    BC_HUB = "BC+Hub"
    BC_SMALL_WORLD = "BC+SmallWorld"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"1": cls.AR_HUB, "2": cls.AR_SMALL_WORLD, "3": cls.BC_HUB, "4": cls.BC_SMALL_WORLD}
        if str(value) in aliases:
            return aliases[str(value)]
        for member in cls:
            if member.value.lower() == str(value).lower():
                return member
        raise InvalidInputError(f"unknown scenario {value!r}")

    @property
    def temporal(self):
        return self.value.split("+")[0]

    @property
    def graph(self):
        return self.value.split("+")[1]


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: Scenario = Scenario.AR_SMALL_WORLD
    K: int = 3
    n_k: int = 10
    p: int = 10
    q: int = 100
    seed: int = 0
    edge_weight: float = EDGE_WEIGHT
    rewire_prob: float = REWIRE_PROB

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        if self.K < 1 or self.n_k < 1:
            raise InvalidInputError("K and n_k must be >= 1")
        if self.p < 2 or self.q < 2:
            raise InvalidInputError("p and q must be >= 2")

    def to_dict(self):
        return {
            "scenario": self.scenario.value,
            "K": self.K,
            "n_k": self.n_k,
            "p": self.p,
            "q": self.q,
            "seed": self.seed,
            "edge_weight": self.edge_weight,
            "rewire_prob": self.rewire_prob,
        }


@dataclass
class GroundTruth:
    labels: np.ndarray
    precisions: list
    adjacency: list


@dataclass
class ClusterMetrics:
    rand: float
    a_rand: float
    jaccard: float
    k_hat: int


@dataclass
class GraphMetrics:
    tpr: float
    tnr: float
    fdr: float


def ar_covariance(q, rho=0.5):
    idx = np.arange(q)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def band_covariance(q, width=4):
    idx = np.arange(q)
    lag = np.abs(idx[:, None] - idx[None, :])
    out = np.where(lag < width, 1.0 / (lag + 1.0), 0.0)
    sym_factor(out)
    return out


def _precision_from_adjacency(adj, weight):
    # diagonal = |smallest eigenvalue of the weighted adjacency| + 0.1, so the
    # spectrum of the result is bounded below by 0.1
    off = weight * np.asarray(adj, dtype=float)
    eig_min = np.linalg.eigvalsh(off)[0]
    return off + (abs(eig_min) + 0.1) * np.eye(off.shape[0])


def hub_groups(p, n_groups, offset=0):
    """Split the ring of nodes into contiguous groups starting at ``offset``."""
    order = np.roll(np.arange(p), -offset)
    return [order[chunk] for chunk in np.array_split(np.arange(p), n_groups)]


def hub_precision(p, K, seed=0, n_groups=None, weight=EDGE_WEIGHT):
    """Hub graphs whose group boundaries shift by a block per cluster.

    Each group's first node is its hub and links to every other member.
    The construction is deterministic; ``seed`` is accepted for a uniform
    generator signature.
    """
    if p < 4:
        raise InvalidInputError(f"hub graphs need p >= 4, got {p}")
    if n_groups is None:
        n_groups = max(1, min(3, p // 3))
    shift = max(1, int(np.ceil(p / (n_groups * K))))
    precisions, adjs = [], []
    for k in range(K):
        adj = np.zeros((p, p), dtype=int)
        for group in hub_groups(p, n_groups, (k * shift) % p):
            hub = group[0]
            for node in group[1:]:
                adj[hub, node] = adj[node, hub] = 1
        adjs.append(adj)
        precisions.append(_precision_from_adjacency(adj, weight))
    return precisions, adjs


def watts_strogatz(p, rewire_prob, rng, neighbors=2, order=None):
    """Ring lattice (``neighbors // 2`` links per side) with random rewiring.

    ``order`` lays the ring out over a node permutation. Rewiring moves an
    edge's far endpoint to a uniformly chosen node, avoiding self loops and
    duplicates, so the edge count never changes.
    """
    order = np.arange(p) if order is None else np.asarray(order)
    adj = np.zeros((p, p), dtype=int)
    half = max(1, neighbors // 2)
    edges = []
    for pos in range(p):
        for step in range(1, half + 1):
            a, b = order[pos], order[(pos + step) % p]
            if a != b and not adj[a, b]:
                adj[a, b] = adj[b, a] = 1
                edges.append((a, b))
    for a, b in edges:
        if rng.random() >= rewire_prob:
            continue
        choices = [c for c in range(p) if c != a and not adj[a, c]]
        if not choices:
            continue
        c = choices[rng.integers(len(choices))]
        adj[a, b] = adj[b, a] = 0
        adj[a, c] = adj[c, a] = 1
    return adj


def small_world_precision(p, K, seed=0, rewire_prob=REWIRE_PROB, weight=EDGE_WEIGHT, relabel=True):
    """Small-world graphs drawn independently per cluster.

    The ring of each cluster is laid over a seeded node permutation so the
    clusters differ in support; ``relabel=False`` keeps the natural order.
    """
    if p < 4:
        raise InvalidInputError(f"small-world graphs need p >= 4, got {p}")
    precisions, adjs = [], []
    for k in range(K):
        rng = np.random.default_rng([seed, k])
        order = rng.permutation(p) if relabel else None
        adj = watts_strogatz(p, rewire_prob, rng, order=order)
        adjs.append(adj)
        precisions.append(_precision_from_adjacency(adj, weight))
    return precisions, adjs


def sample_matrix_normal(sigma_s, sigma_t, rng, size=None):
    """Draw ``Z = L_S G L_T'`` so that ``Vec(Z)`` has covariance ``Sigma_T (x) Sigma_S``."""
    Ls = sym_factor(sigma_s).lower
    Lt = sym_factor(sigma_t).lower
    p, q = Ls.shape[0], Lt.shape[0]
    if size is None:
        return Ls @ rng.standard_normal((p, q)) @ Lt.T
    G = rng.standard_normal((size, p, q))
    return Ls @ G @ Lt.T


def generate_scenario(spec: ScenarioSpec):
    """Cluster-blocked subjects plus ground truth, all derived from ``spec.seed``."""
    sc = spec.scenario
    sigma_t = ar_covariance(spec.q) if sc.temporal == "AR" else band_covariance(spec.q)
    if sc.graph == "Hub":
        precisions, adjs = hub_precision(spec.p, spec.K, spec.seed, weight=spec.edge_weight)
    else:
        precisions, adjs = small_world_precision(
            spec.p, spec.K, spec.seed, rewire_prob=spec.rewire_prob, weight=spec.edge_weight
        )
    subjects, labels = [], []
    width = len(str(spec.K * spec.n_k))
    for k in range(spec.K):
        sigma_s = sym_factor(precisions[k]).inverse()
        for m in range(spec.n_k):
            gamma = k * spec.n_k + m
            # one stream per subject, so draws do not depend on generation order
            rng = np.random.default_rng([spec.seed, 1_000_003, gamma])
            Z = sample_matrix_normal(sigma_s, sigma_t, rng)
            subjects.append(SubjectSeries(f"s{gamma + 1:0{width}d}", Z))
            labels.append(k + 1)
    return subjects, GroundTruth(np.array(labels), precisions, adjs)


def _pair_counts(truth, est):
    truth = np.asarray(truth)
    est = np.asarray(est)
    if truth.shape != est.shape:
        raise InvalidInputError("label vectors differ in length")
    n = len(truth)
    if n < 2:
        raise InvalidInputError("need at least 2 samples for pair-counting metrics")
    _, t_inv = np.unique(truth, return_inverse=True)
    _, e_inv = np.unique(est, return_inverse=True)
    table = np.zeros((t_inv.max() + 1, e_inv.max() + 1), dtype=np.int64)
    np.add.at(table, (t_inv, e_inv), 1)
    comb = lambda x: x * (x - 1) // 2  # noqa: E731
    both = int(comb(table).sum())
    same_t = int(comb(table.sum(axis=1)).sum())
    same_e = int(comb(table.sum(axis=0)).sum())
    total = n * (n - 1) // 2
    return both, same_t, same_e, total


def cluster_metrics(truth, est):
    """Rand, Hubert-Arabie adjusted Rand and Jaccard indexes."""
    both, same_t, same_e, total = _pair_counts(truth, est)
    agree = total + 2 * both - same_t - same_e
    rand = agree / total
    expected = same_t * same_e / total
    max_index = 0.5 * (same_t + same_e)
    if max_index == expected:
        a_rand = 1.0 if both == expected else 0.0
    else:
        a_rand = (both - expected) / (max_index - expected)
    union = same_t + same_e - both
    jaccard = 1.0 if union == 0 else both / union
    return ClusterMetrics(float(rand), float(a_rand), float(jaccard), len(np.unique(est)))


def confusion_counts(truth_adj, est_adj):
    truth_adj = np.asarray(truth_adj) != 0
    est_adj = np.asarray(est_adj) != 0
    if truth_adj.shape != est_adj.shape:
        raise InvalidInputError("adjacency matrices differ in shape")
    iu = np.triu_indices(truth_adj.shape[0], k=1)
    t, e = truth_adj[iu], est_adj[iu]
    return (
        int(np.sum(t & e)),
        int(np.sum(~t & e)),
        int(np.sum(~t & ~e)),
        int(np.sum(t & ~e)),
    )


def graph_metrics(truth_adj, est_adj):
    """TPR, TNR and FDR on the strict upper triangle.

    An empty denominator gives 0 for FDR (no discoveries) and NaN otherwise.
    """
    tp, fp, tn, fn = confusion_counts(truth_adj, est_adj)
    tpr = tp / (tp + fn) if tp + fn else float("nan")
    tnr = tn / (tn + fp) if tn + fp else float("nan")
    fdr = fp / (tp + fp) if tp + fp else 0.0
    return GraphMetrics(float(tpr), float(tnr), float(fdr))

"""Acceptance gate: one pass/fail line per criterion, at the stated tolerances."""

import itertools
import time
from fractions import Fraction

import numpy as np
import pytest

from scehg import pipeline, sprclust, tuning
from scehg.cli import main as cli_main
from scehg.glasso import glasso_fit
from scehg.pipeline import EdgeProportionTable, PipelineConfig, edge_proportion
from scehg.simgen import cluster_metrics, graph_metrics
from scehg.solvers import LassoProblem, lasso_cd
from scehg.sprclust import SprclustConfig

# ------------------------------------------------------------ shared data


def _random_instances(count=50, seed=2024):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(2, 13))
        d = int(rng.integers(1, 7))
        X = rng.normal(size=(n, d))
        if rng.random() < 0.5:
            X[: n // 2] += rng.normal(0, 3, size=d)  # planted split on half the instances
        cfg = SprclustConfig(
            lam1=float(rng.uniform(0, 0.5)),
            lam2=float(rng.uniform(0, 1.0)),
            tau=float(rng.uniform(0.1, 2.0)),
        )
        out.append((X, cfg))
    return out


@pytest.fixture(scope="module")
def dc_fits():
    start = time.perf_counter()
    fits = [(X, cfg, sprclust.fit(X, cfg)) for X, cfg in _random_instances()]
    return fits, time.perf_counter() - start


# ------------------------------------------------------------ criterion 1


def test_criterion_01_dc_monotonicity(dc_fits, criterion):
    fits, elapsed = dc_fits
    bad = []
    for idx, (_, cfg, f) in enumerate(fits):
        steps = np.diff(f.objective_trace)
        strict = np.all(steps[:-1] < 0)
        stopped = steps[-1] == 0 or len(steps) == cfg.dc_max_iters
        bounded = len(steps) <= cfg.dc_max_iters and f.dc_iters <= cfg.dc_max_iters
        if not (strict and steps[-1] <= 0 and stopped and bounded):
            bad.append(idx)
    ok = not bad and elapsed < 120
    criterion(1, "DC objective strictly decreasing then terminating", ok,
              f"{len(fits)} instances, failing={bad}, {elapsed:.1f}s")


# ------------------------------------------------------------ criterion 2


def test_criterion_02_kkt_residual(dc_fits, criterion):
    fits, _ = dc_fits
    worst = max(f.kkt_residual / (10 * cfg.admm_opts.tol) for _, cfg, f in fits)
    resid = max(f.kkt_residual for _, _, f in fits)
    criterion(2, "KKT residual <= 10 x ADMM tolerance", worst <= 1.0,
              f"max residual {resid:.3g}, bound 1e-3")


# ------------------------------------------------------------ criterion 3


def _soft_1d(z, y, lam):
    c = z * y
    return np.sign(c) * max(abs(c) - lam / 2, 0.0) / (z * z)


def _grid_oracle(Z, y, lam, levels=40, points=41, reach=4):
    """Zooming dense grid search over all coefficients jointly."""
    d = Z.shape[1]
    ls = np.linalg.lstsq(Z, y, rcond=None)[0]
    center = np.zeros(d)
    half = 2 * np.abs(ls).max() + 1.0
    for _ in range(levels):
        axes = [np.linspace(c - half, c + half, points) for c in center]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        resid = y[None, :] - mesh @ Z.T
        obj = np.einsum("ij,ij->i", resid, resid) + lam * np.abs(mesh).sum(axis=1)
        center = mesh[np.argmin(obj)]
        half *= reach / (points - 1) * 2
        if half < 1e-8:
            break
    return center


def test_criterion_03_lasso_oracles(criterion):
    errors = []
    examples = [([[1.0]], [2.0], 1.0, [1.5]), ([[1.0]], [2.0], 4.0, [0.0]),
                ([[1.0, 0.0], [0.0, 1.0]], [3.0, -1.0], 2.0, [2.0, 0.0])]
    for design, response, lam, expected in examples:
        got = lasso_cd(LassoProblem(np.array(design), np.array(response), lam))
        errors.append(np.abs(got - expected).max())
        Z, y = np.array(design), np.array(response)
        oracle = [_soft_1d(Z[k, k], y[k], lam) for k in range(Z.shape[1])]
        errors.append(np.abs(got - oracle).max())
    rng = np.random.default_rng(7)
    for _ in range(20):
        d = int(rng.integers(1, 4))
        rows = int(rng.integers(d, 6))
        Z = rng.normal(size=(rows, d))
        y = rng.normal(size=rows) * 2
        lam = float(rng.uniform(0, 3))
        got = lasso_cd(LassoProblem(Z, y, lam))
        errors.append(np.abs(got - _grid_oracle(Z, y, lam)).max())
    worst = max(errors)
    criterion(3, "lasso matches 1-D, separable and dense-grid oracles", worst <= 1e-5,
              f"3 examples + 20 random, max error {worst:.2e}")


# ------------------------------------------------------------ criterion 4


def _random_spd(rng, p):
    Q, _ = np.linalg.qr(rng.normal(size=(p, p)))
    M = (Q * rng.uniform(0.5, 5.0, p)) @ Q.T
    return 0.5 * (M + M.T)


def test_criterion_04_glasso(criterion):
    rng = np.random.default_rng(11)
    S = _random_spd(rng, 6)
    inv_err = np.abs(glasso_fit(S, 0.0).omega @ S - np.eye(6)).max()
    scalar_err = max(
        abs(glasso_fit(np.array([[s]]), lam).omega[0, 0] - 1.0 / (s + lam))
        for s in (0.3, 1.0, 2.0, 7.5) for lam in (0.0, 0.1, 0.5, 2.0)
    )
    rises = 0
    for _ in range(20):
        p = int(rng.integers(2, 8))
        _, trace = glasso_fit(_random_spd(rng, p), float(rng.uniform(0.01, 0.3)), return_trace=True)
        rises += int(np.any(np.diff(trace) > 1e-12))
    ok = inv_err <= 1e-5 and scalar_err <= 1e-8 and rises == 0
    criterion(4, "glasso inverse, scalar formula and sweep monotonicity", ok,
              f"inverse {inv_err:.1e}, scalar {scalar_err:.1e}, non-monotone traces {rises}/20")


# ------------------------------------------------------------ criterion 5


def _pair_oracle(truth, est):
    n = len(truth)
    a = b = c = d = 0
    for i, j in itertools.combinations(range(n), 2):
        st, se = truth[i] == truth[j], est[i] == est[j]
        a += st and se
        b += st and not se
        c += se and not st
        d += not st and not se
    total = a + b + c + d
    rand = Fraction(a + d, total)
    jaccard = Fraction(1) if a + b + c == 0 else Fraction(a, a + b + c)
    expected = Fraction((a + b) * (a + c), total)
    max_index = Fraction(2 * a + b + c, 2)
    if max_index == expected:
        ari = Fraction(1) if a == expected else Fraction(0)
    else:
        ari = (a - expected) / (max_index - expected)
    return rand, ari, jaccard


def _confusion_oracle(t, e):
    tp = fp = tn = fn = 0
    for i, j in itertools.combinations(range(t.shape[0]), 2):
        tp += t[i, j] and e[i, j]
        fp += (not t[i, j]) and e[i, j]
        tn += (not t[i, j]) and not e[i, j]
        fn += t[i, j] and not e[i, j]
    tpr = tp / (tp + fn) if tp + fn else float("nan")
    tnr = tn / (tn + fp) if tn + fp else float("nan")
    fdr = fp / (tp + fp) if tp + fp else 0.0
    return tpr, tnr, fdr


def _same(x, y):
    return (np.isnan(x) and np.isnan(y)) or x == y


def test_criterion_05_metric_oracles(criterion):
    rng = np.random.default_rng(5)
    mismatches = 0
    ari_gap = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 16))
        t = rng.integers(1, int(rng.integers(1, 6)) + 1, size=n)
        e = rng.integers(1, int(rng.integers(1, 6)) + 1, size=n)
        m = cluster_metrics(t, e)
        rand, ari, jac = _pair_oracle(list(t), list(e))
        mismatches += m.rand != float(rand) or m.jaccard != float(jac)
        ari_gap = max(ari_gap, abs(m.a_rand - float(ari)))
    graph_bad = 0
    for _ in range(100):
        p = int(rng.integers(2, 10))
        t = np.triu(rng.random((p, p)) < rng.random(), 1)
        e = np.triu(rng.random((p, p)) < rng.random(), 1)
        t, e = t | t.T, e | e.T
        got = graph_metrics(t.astype(int), e.astype(int))
        graph_bad += not all(_same(x, y) for x, y in zip((got.tpr, got.tnr, got.fdr), _confusion_oracle(t, e)))
    ok = mismatches == 0 and ari_gap <= 1e-12 and graph_bad == 0
    criterion(5, "Rand/aRand/Jaccard and graph metrics match pair-count oracles", ok,
              f"rand/jaccard mismatches {mismatches}/100, aRand gap {ari_gap:.1e}, graph mismatches {graph_bad}/100")


# ------------------------------------------------------------ criterion 6


def test_criterion_06_tuning_criterion(criterion):
    rng = np.random.default_rng(6)
    X = rng.normal(0, 0.1, size=(10, 4))
    X[5:, :2] += 3.0
    cfg = SprclustConfig(0.05, 0.5, 1.0)
    full = sprclust.fit(X, cfg)
    T = tuning.comembership_matrix(full.assignment)
    refits = [tuning.comembership_matrix(sprclust.fit(X, cfg).assignment) for _ in range(5)]
    _, c_bar = tuning.sample_concordance(T, tuning.mean_comembership(refits), 0.2)
    identical = c_bar == 1.0

    Tw = tuning.comembership_matrix([1, 1, 2])
    Tbar = np.array([[1, 1.0, 0.4], [1.0, 1, 0.0], [0.4, 0.0, 1]])
    C, _ = tuning.sample_concordance(Tw, Tbar, 0.0)
    worked = C[0] == pytest.approx(0.6, abs=1e-15)

    grid = tuning.TuningGrid((0.01,), (0.5,), (1.0,), B=2)
    planted = np.random.default_rng(0).normal(0, 0.1, size=(8, 4))
    planted[4:, :2] += 3.0
    single = tuning.evaluate_combo(planted, (0.01, 50.0, 100.0), 0, grid, cfg)
    dense = tuning.evaluate_combo(np.abs(planted) + 1.0, (0.001, 0.5, 1.0), 0, grid, cfg)
    keep = tuning.ConcordanceReport(combo=(0.05, 0.5, 1.0), c_bar=0.3, f_bar=0.2, k_hat=2)
    chosen = tuning.choose([single, dense, keep])
    omitted = single.omitted and dense.omitted and chosen is keep
    ok = identical and worked and omitted
    criterion(6, "concordance identities and omission rules", ok,
              f"C_bar(T_bar=T)={c_bar}, C_1={C[0]:.15g}, single/all-features omitted={single.omitted}/{dense.omitted}")


# ------------------------------------------------------------ criterion 7

SCENARIO_2 = {"scenario": "AR+SmallWorld", "K": 3, "n_k": 5, "p": 8, "q": 100}


def test_criterion_07_desk_scale_scenario(criterion):
    cfg = PipelineConfig(scenario=SCENARIO_2, seed=0, lam1=(0.02, 0.05, 0.1),
                         lam2=(0.1, 0.2, 0.4), tau=(0.4, 0.5))
    threads = min(4, pipeline.resolve_threads("auto"))
    start = time.perf_counter()
    runs = pipeline.replicate(cfg, 10, threads=threads)
    elapsed = time.perf_counter() - start
    a_rand = float(np.mean([r.cluster_metrics["a_rand"] for r in runs]))
    tpr = float(np.mean([r.graph_metrics["tpr"] for r in runs]))
    tnr = float(np.mean([r.graph_metrics["tnr"] for r in runs]))
    ok = a_rand >= 0.80 and tpr >= 0.70 and tnr >= 0.70 and elapsed < 900
    criterion(7, "K=3 AR+SmallWorld recovery over 10 seeds", ok,
              f"aRand {a_rand:.3f}, TPR {tpr:.3f}, TNR {tnr:.3f}, {elapsed:.0f}s on {threads} worker(s)")


# ------------------------------------------------------------ criterion 8


def test_criterion_08_degenerate_limits(criterion):
    rng = np.random.default_rng(8)
    X = rng.normal(size=(9, 4))
    start = time.perf_counter()
    # the truncated penalty only fuses pairs closer than tau, so tau must be huge too
    fused = sprclust.fit(X, SprclustConfig(0.01, 1e6, 1e6)).k_hat
    apart = sprclust.fit(X, SprclustConfig(0.01, 0.0, 0.5)).k_hat
    zero = np.all(sprclust.fit(X, SprclustConfig(1e6, 0.1, 0.5)).centroids == 0)
    elapsed = time.perf_counter() - start
    ok = fused == 1 and apart == 9 and zero and elapsed < 10
    criterion(8, "degenerate penalty limits", ok,
              f"k(lam2 huge)={fused}, k(lam2=0)={apart}/9, zeros(lam1 huge)={zero}, {elapsed:.2f}s")


# ------------------------------------------------------------ criterion 9


def test_criterion_09_thread_count_determinism(tmp_path, capsys, criterion):
    base = ["pipeline", "--scenario", "AR+SmallWorld", "--K", "2", "--n-k", "4", "--p", "5",
            "--q", "60", "--seed", "4", "--B", "3"]
    codes = [cli_main(base + ["--threads", t, "--out", str(tmp_path / t)]) for t in ("1", "3")]
    capsys.readouterr()
    one, three = ((tmp_path / t / "report.json").read_bytes() for t in ("1", "3"))
    ok = codes == [0, 0] and one == three
    criterion(9, "report.json byte-identical across --threads", ok,
              f"exit codes {codes}, {len(one)} bytes")


# ------------------------------------------------------------ criterion 10


def test_criterion_10_edge_threshold(criterion):
    results = {}
    for zeros in (49, 50, 51):
        coef = np.ones((100, 1))
        coef[:zeros] = 0.0
        table = edge_proportion(coef, [1] * 100)
        results[table.rows[0][3]] = table.absent(1, 1, 2)
    direct = [EdgeProportionTable.is_absent(x) for x in (0.49, 0.5, 0.51)]
    ok = results == {0.49: False, 0.5: True, 0.51: True} and direct == [False, True, True]
    criterion(10, "edge declared absent iff proportion >= 0.5", ok, f"absent flags {results}")

"""End-to-end SCEHG runs: ingestion, features, tuning, clustering, reports.

Per subject the kernel covariance feeds a cross-validated graphical lasso
whose strict upper triangle becomes that subject's feature row. The rows are
clustered by :func:`scehg.sprclust.fit` (after tuning, unless a combination
is fixed) and each cluster's graph is read off the exact zeros of the fitted
centroids.

Work units (subjects, tuning combinations, replicates) may run in a process
pool. Results are always gathered in input order, so the artifacts do not
depend on the worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import glasso, simgen, sprclust, tuning
from .covariance import KernelConfig, SubjectSeries
from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    InvalidInputError,
    ParseError,
    ScehgError,
)
from .solvers import SolverOptions

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("k_hat", "rand", "a_rand", "jaccard", "tpr", "tnr", "fdr")
ABSENT_THRESHOLD = 0.5


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class PipelineConfig:
    """Everything that determines a run's output.

    Exactly one of ``input_dir`` and ``scenario`` is set. ``combo`` fixes
    ``(lam1, lam2, tau)`` and skips tuning. The worker count is deliberately
    not part of the config: it cannot change results.
    """

    input_dir: str | None = None
    scenario: simgen.ScenarioSpec | None = None
    seed: int = 0
    bandwidth: float | None = None
    glasso_lambdas: tuple | None = None
    glasso_folds: int = 5
    lam1: tuple = (0.02, 0.05, 0.1)
    lam2: tuple = (0.1, 0.2, 0.4)
    tau: tuple = (0.4, 0.5)
    r: float = 0.5
    s: float = 0.4
    alpha: float = 0.2
    B: int = 5
    combo: tuple | None = None
    rho: float = 0.4
    admm_tol: float = 1e-4
    admm_max_iters: int = 2000
    dc_max_iters: int = 20
    cluster_tol: float = 1e-4
    standardize: bool = False
    k_max: int | None = None

    def __post_init__(self):
        if (self.input_dir is None) == (self.scenario is None):
            raise InvalidInputError("exactly one of input_dir and scenario must be given")
        if self.scenario is not None and not isinstance(self.scenario, simgen.ScenarioSpec):
            object.__setattr__(self, "scenario", _scenario_from_dict(self.scenario, self.seed))
        for name in ("lam1", "lam2", "tau"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.glasso_lambdas is not None:
            object.__setattr__(self, "glasso_lambdas", tuple(float(v) for v in self.glasso_lambdas))
        if self.combo is not None:
            if len(self.combo) != 3:
                raise InvalidInputError("combo must be (lam1, lam2, tau)")
            object.__setattr__(self, "combo", tuple(float(v) for v in self.combo))
        if self.k_max is not None and self.k_max < 1:
            raise InvalidInputError("k_max must be >= 1")
        # fail early on bad values rather than deep inside a worker
        self.kernel()
        self.grid()
        self.template()

    def kernel(self):
        return KernelConfig(bandwidth=self.bandwidth)

    def grid(self):
        return tuning.TuningGrid(
            self.lam1, self.lam2, self.tau, r=self.r, s=self.s, alpha=self.alpha, B=self.B, seed=self.seed
        )

    def template(self, combo=None):
        lam1, lam2, tau = combo or self.combo or (1.0, 1.0, 1.0)
        return sprclust.SprclustConfig(
            lam1=lam1,
            lam2=lam2,
            tau=tau,
            rho=self.rho,
            admm_opts=SolverOptions(tol=self.admm_tol, max_iters=self.admm_max_iters),
            dc_max_iters=self.dc_max_iters,
            cluster_tol=self.cluster_tol,
            standardize=self.standardize,
        )

    def to_dict(self):
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, simgen.ScenarioSpec):
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidInputError(f"unknown config fields: {', '.join(unknown)}")
        return cls(**data)


def _scenario_from_dict(data, default_seed=0):
    data = dict(data)
    known = {f.name for f in dataclasses.fields(simgen.ScenarioSpec)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InvalidInputError(f"unknown scenario fields: {', '.join(unknown)}")
    data.setdefault("seed", default_seed)
    return simgen.ScenarioSpec(**data)


# ---------------------------------------------------------------- ingestion


def load_subjects(path):
    """Read one ``p x q`` CSV per subject (no header) from a directory.

    Subject ids are the file stems; the list is sorted by id.
    """
    root = Path(path)
    if not root.is_dir():
        raise InvalidInputError(f"not a directory: {root}")
    files = sorted(root.glob("*.csv"), key=lambda f: f.stem)
    if not files:
        raise EmptyInputError(f"no subject CSV files in {root}")
    subjects = []
    for f in files:
        rows = []
        with f.open(newline="") as fh:
            for r, row in enumerate(csv.reader(fh), start=1):
                if not row or all(not cell.strip() for cell in row):
                    continue
                values = []
                for c, cell in enumerate(row, start=1):
                    try:
                        values.append(float(cell))
                    except ValueError:
                        raise ParseError(f"{f}: row {r}, column {c}: cannot parse {cell!r}") from None
                    if not math.isfinite(values[-1]):
                        raise ParseError(f"{f}: row {r}, column {c}: non-finite value {cell!r}")
                rows.append(values)
        if not rows:
            raise EmptyInputError(f"{f} contains no data")
        widths = {len(row) for row in rows}
        if len(widths) != 1:
            raise DimensionMismatchError(f"{f}: rows have differing column counts {sorted(widths)}")
        subjects.append(SubjectSeries(f.stem, np.array(rows)))
    first = subjects[0]
    for sub, f in zip(subjects, files):
        if sub.data.shape != first.data.shape:
            raise DimensionMismatchError(
                f"{f.name} is {sub.p}x{sub.q} but {files[0].name} is {first.p}x{first.q}"
            )
    return subjects


def write_subjects(subjects, path):
    """Inverse of :func:`load_subjects`; values written with ``repr`` precision."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for sub in subjects:
        with (root / f"{sub.subject_id}.csv").open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for row in sub.data:
                writer.writerow([repr(float(v)) for v in row])


def truth_to_dict(subjects, truth: simgen.GroundTruth, spec=None):
    out = {
        "subject_ids": [s.subject_id for s in subjects],
        "labels": [int(v) for v in truth.labels],
        "adjacency": [np.asarray(a, dtype=int).tolist() for a in truth.adjacency],
        "precisions": [np.asarray(o, dtype=float).tolist() for o in truth.precisions],
    }
    if spec is not None:
        out["scenario"] = spec.to_dict()
    return out


def truth_from_dict(data):
    return simgen.GroundTruth(
        labels=np.array(data["labels"], dtype=int),
        precisions=[np.array(o, dtype=float) for o in data.get("precisions", [])],
        adjacency=[np.array(a, dtype=int) for a in data["adjacency"]],
    )


# ---------------------------------------------------------------- edges


@dataclass
class EdgeProportionTable:
    """Per-cluster share of subjects whose fitted coefficient for ``(i, j)`` is exactly zero.

    ``rows`` holds ``(cluster, i, j, prop_absent)`` with 1-based nodes and ``i < j``.
    """

    p: int
    rows: list = field(default_factory=list)

    @staticmethod
    def is_absent(prop):
        return prop >= ABSENT_THRESHOLD

    def absent(self, cluster, i, j):
        for k, a, b, prop in self.rows:
            if (k, a, b) == (cluster, i, j):
                return self.is_absent(prop)
        raise KeyError((cluster, i, j))

    def adjacency(self, cluster):
        """Estimated graph of one cluster: edges are the pairs not declared absent."""
        adj = np.zeros((self.p, self.p), dtype=int)
        for k, i, j, prop in self.rows:
            if k == cluster and not self.is_absent(prop):
                adj[i - 1, j - 1] = adj[j - 1, i - 1] = 1
        return adj

    def to_dict(self):
        return {
            "p": self.p,
            "rows": [
                {"cluster": k, "i": i, "j": j, "prop_absent": prop, "absent": self.is_absent(prop)}
                for k, i, j, prop in self.rows
            ],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["p"], [(r["cluster"], r["i"], r["j"], r["prop_absent"]) for r in data["rows"]])

    def to_csv(self):
        buf = io.StringIO()
        buf.write("cluster,i,j,prop_absent,absent\n")
        for k, i, j, prop in self.rows:
            buf.write(f"{k},{i},{j},{prop:.6f},{str(self.is_absent(prop)).lower()}\n")
        return buf.getvalue()


def edge_proportion(coefficients, assignment, p=None):
    """Edge-absence proportions per cluster from per-subject coefficient rows.

    ``coefficients[g]`` is subject ``g``'s fitted strict-upper-triangle vector
    (column-stacked, as produced by :func:`scehg.glasso.vectorize_upper`).
    A coefficient counts as absent only if it is exactly zero.
    """
    coef = np.atleast_2d(np.asarray(coefficients, dtype=float))
    labels = np.asarray(assignment)
    if coef.shape[0] != len(labels):
        raise InvalidInputError(f"{coef.shape[0]} coefficient rows but {len(labels)} labels")
    d = coef.shape[1]
    p = glasso.n_nodes_from_features(d) if p is None else p
    if p * (p - 1) // 2 != d:
        raise InvalidInputError(f"{d} coefficients do not match p={p}")
    pairs = glasso.upper_index_pairs(p)
    table = EdgeProportionTable(p)
    for k in sorted(int(v) for v in np.unique(labels)):
        members = coef[labels == k]
        if len(members) == 0:
            log.warning("cluster %d is empty; skipped", k)
            continue
        props = np.sum(members == 0, axis=0) / len(members)
        rows = [(k, i + 1, j + 1, float(props[c])) for c, (i, j) in enumerate(pairs)]
        table.rows.extend(sorted(rows))
    return table


def subject_adjacency(coef_row, p):
    adj = np.zeros((p, p), dtype=int)
    for v, (i, j) in zip(coef_row, glasso.upper_index_pairs(p)):
        if v != 0:
            adj[i, j] = adj[j, i] = 1
    return adj


def graph_recovery(coefficients, truth: simgen.GroundTruth, p):
    """Per-subject TPR/TNR/FDR averaged within true clusters, then across clusters."""
    coef = np.asarray(coefficients)
    per_cluster = []
    for k in sorted(int(v) for v in np.unique(truth.labels)):
        rows = np.where(truth.labels == k)[0]
        ms = [simgen.graph_metrics(truth.adjacency[k - 1], subject_adjacency(coef[g], p)) for g in rows]
        per_cluster.append([_nanmean([getattr(m, name) for m in ms]) for name in ("tpr", "tnr", "fdr")])
    tpr, tnr, fdr = (_nanmean(col) for col in zip(*per_cluster))
    return simgen.GraphMetrics(tpr, tnr, fdr)


def _nanmean(values):
    arr = np.asarray(values, dtype=float)
    arr = arr[~np.isnan(arr)]
    return float(arr.mean()) if len(arr) else float("nan")


# ---------------------------------------------------------------- report


@dataclass
class RunReport:
    subject_ids: list
    assignment: list
    k_hat: int
    combo: list
    tuned: bool
    glasso_lambdas: list
    features: list
    centroids: list
    objective_trace: list
    kkt_residual: float
    dc_iters: int
    converged: bool
    edges: EdgeProportionTable
    cluster_metrics: dict | None = None
    graph_metrics: dict | None = None
    tuning_reports: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict, compare=False)

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "timing"}
        out["edges"] = self.edges.to_dict()
        return out

    @classmethod
    def from_dict(cls, data, timing=None):
        data = dict(data)
        data["edges"] = EdgeProportionTable.from_dict(data["edges"])
        return cls(**data, timing=timing or {})

    def to_json(self):
        # repr-based float output round-trips exactly; NaN is kept as the bare token
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def metrics_row(self):
        cm = self.cluster_metrics or {}
        gm = self.graph_metrics or {}
        values = {"k_hat": self.k_hat, **cm, **gm}
        return [_fmt(values.get(name)) for name in METRIC_COLUMNS]


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def emit_report(report: RunReport, out_dir):
    """Write report.json, metrics.csv, edges.csv and timing.json into ``out_dir``.

    Wall-clock timings live in their own file so that report.json depends
    only on the inputs.
    """
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
        (root / "report.json").write_text(report.to_json())
        (root / "metrics.csv").write_text(
            ",".join(METRIC_COLUMNS) + "\n" + ",".join(report.metrics_row()) + "\n"
        )
        (root / "edges.csv").write_text(report.edges.to_csv())
        (root / "timing.json").write_text(json.dumps(report.timing, indent=2, sort_keys=True) + "\n")
    except OSError as err:
        raise ScehgError(f"cannot write report to {root}: {err}") from err
    return [root / name for name in ("report.json", "metrics.csv", "edges.csv", "timing.json")]


def load_report(out_dir):
    root = Path(out_dir)
    timing_path = root / "timing.json"
    timing = json.loads(timing_path.read_text()) if timing_path.exists() else {}
    return RunReport.from_dict(json.loads((root / "report.json").read_text()), timing=timing)


# ---------------------------------------------------------------- running


def resolve_threads(threads):
    if threads in (None, "auto"):
        return max(1, os.cpu_count() or 1)
    try:
        n = int(threads)
    except (TypeError, ValueError):
        raise InvalidInputError(f"threads must be a positive integer or 'auto', got {threads!r}") from None
    if n < 1:
        raise InvalidInputError(f"threads must be >= 1, got {n}")
    return n


@contextmanager
def worker_pool(threads):
    n = resolve_threads(threads)
    if n == 1:
        yield None
        return
    with ProcessPoolExecutor(max_workers=n) as pool:
        yield pool


def _subject_features(args):
    series, kernel, lambdas, folds = args
    lam, est = glasso.glasso_cv(series, kernel, lambda_grid=lambdas, folds=folds)
    return lam, glasso.vectorize_upper(est).values


def _map(pool, fn, items):
    return list(map(fn, items)) if pool is None else list(pool.map(fn, items))


def subject_features(subjects, cfg: PipelineConfig, pool=None):
    """Per-subject CV penalty and feature row, in subject order."""
    kernel = cfg.kernel()
    jobs = [(s, kernel, cfg.glasso_lambdas, cfg.glasso_folds) for s in subjects]
    results = _map_attributed(pool, _subject_features, jobs, subjects)
    lambdas = [lam for lam, _ in results]
    return lambdas, np.array([values for _, values in results])


def _map_attributed(pool, fn, jobs, subjects):
    # re-raise with the subject id so failures are traceable to a file
    try:
        return _map(pool, fn, jobs)
    except ScehgError as err:
        for sub, job in zip(subjects, jobs):
            try:
                fn(job)
            except ScehgError as inner:
                raise type(inner)(f"subject {sub.subject_id}: {inner}") from inner
        raise err


def _prepare_inputs(cfg: PipelineConfig):
    if cfg.scenario is not None:
        subjects, truth = simgen.generate_scenario(cfg.scenario)
        return subjects, truth
    subjects = load_subjects(cfg.input_dir)
    truth_path = Path(cfg.input_dir) / "truth.json"
    truth = truth_from_dict(json.loads(truth_path.read_text())) if truth_path.exists() else None
    if truth is not None and len(truth.labels) != len(subjects):
        raise DimensionMismatchError(
            f"truth.json has {len(truth.labels)} labels for {len(subjects)} subjects"
        )
    return subjects, truth


def run_pipeline(cfg: PipelineConfig, threads=1, subjects=None, truth=None) -> RunReport:
    """Full flow from series to report. ``subjects``/``truth`` bypass ingestion."""
    timing = {}
    t0 = time.perf_counter()
    if subjects is None:
        subjects, truth = _prepare_inputs(cfg)
    timing["load"] = time.perf_counter() - t0
    if not subjects:
        raise EmptyInputError("no subjects to analyse")

    with worker_pool(threads) as pool:
        t0 = time.perf_counter()
        lambdas, X = subject_features(subjects, cfg, pool)
        timing["features"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        reports = []
        if cfg.combo is not None:
            combo = cfg.combo
        else:
            combo, reports = tuning.select_tuning(X, cfg.grid(), cfg.template(), executor=pool)
        timing["tuning"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    fitted = sprclust.fit(X, cfg.template(combo))
    assignment, k_hat = fitted.assignment, fitted.k_hat
    if cfg.k_max is not None and k_hat > cfg.k_max:
        assignment, k_hat = sprclust.merge_to_k(fitted.centroids, assignment, cfg.k_max)
    timing["fit"] = time.perf_counter() - t0

    p = subjects[0].p
    edges = edge_proportion(fitted.centroids, assignment, p)
    cm = gm = None
    if truth is not None:
        m = simgen.cluster_metrics(truth.labels, assignment)
        cm = {"rand": m.rand, "a_rand": m.a_rand, "jaccard": m.jaccard}
        g = graph_recovery(fitted.centroids, truth, p)
        gm = {"tpr": g.tpr, "tnr": g.tnr, "fdr": g.fdr}

    return RunReport(
        subject_ids=[s.subject_id for s in subjects],
        assignment=[int(v) for v in assignment],
        k_hat=int(k_hat),
        combo=[float(v) for v in combo],
        tuned=cfg.combo is None,
        glasso_lambdas=[float(v) for v in lambdas],
        features=X.tolist(),
        centroids=fitted.centroids.tolist(),
        objective_trace=[float(v) for v in fitted.objective_trace],
        kkt_residual=float(fitted.kkt_residual),
        dc_iters=int(fitted.dc_iters),
        converged=bool(fitted.converged),
        edges=edges,
        cluster_metrics=cm,
        graph_metrics=gm,
        tuning_reports=[rep.to_dict() for rep in reports],
        config=cfg.to_dict(),
        timing=timing,
    )


# ---------------------------------------------------------------- replication


def replicate_seeds(base_seed, reps):
    return [base_seed + r for r in range(reps)]


def _replicate_one(args):
    cfg, seed = args
    spec = dataclasses.replace(cfg.scenario, seed=seed)
    run_cfg = dataclasses.replace(cfg, scenario=spec, seed=seed)
    return run_pipeline(run_cfg, threads=1)


def replicate(cfg: PipelineConfig, reps, threads=1):
    """Run the scenario ``reps`` times with seeds ``seed, seed+1, ...``.

    Replicates, not the units inside them, are spread over the workers.
    """
    if cfg.scenario is None:
        raise InvalidInputError("replicate needs a scenario")
    if reps < 1:
        raise InvalidInputError("reps must be >= 1")
    jobs = [(cfg, seed) for seed in replicate_seeds(cfg.seed, reps)]
    with worker_pool(threads) as pool:
        return _map(pool, _replicate_one, jobs)


def summarize_replicates(reports, true_k):
    """Mean and standard deviation of every metric column plus over/under counts."""
    cols = {name: [] for name in METRIC_COLUMNS}
    for rep in reports:
        values = {"k_hat": rep.k_hat, **(rep.cluster_metrics or {}), **(rep.graph_metrics or {})}
        for name in METRIC_COLUMNS:
            v = values.get(name)
            cols[name].append(float("nan") if v is None else float(v))
    over = sum(rep.k_hat > true_k for rep in reports)
    under = sum(rep.k_hat < true_k for rep in reports)
    mean = {name: _nanmean(vals) for name, vals in cols.items()}
    std = {}
    for name, vals in cols.items():
        arr = np.asarray(vals)
        arr = arr[~np.isnan(arr)]
        std[name] = float(arr.std(ddof=1)) if len(arr) > 1 else float("nan")
    return {"mean": mean, "std": std, "over": over, "under": under, "reps": len(reports)}


def write_replicate_summary(summary, runs, out_dir):
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    header = "stat,freq_over_under," + ",".join(METRIC_COLUMNS) + "\n"
    freq = f"{summary['over']}|{summary['under']}"
    lines = [
        "mean," + freq + "," + ",".join(_fmt(summary["mean"][n]) for n in METRIC_COLUMNS),
        "std,," + ",".join(_fmt(summary["std"][n]) for n in METRIC_COLUMNS),
    ]
    (root / "metrics.csv").write_text(header + "\n".join(lines) + "\n")
    run_lines = ["seed," + ",".join(METRIC_COLUMNS)]
    for rep in runs:
        run_lines.append(f"{rep.config['seed']}," + ",".join(rep.metrics_row()))
    (root / "runs.csv").write_text("\n".join(run_lines) + "\n")
    (root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

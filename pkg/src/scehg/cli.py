"""Command line front end: ``scehg {simulate,fit,tune,pipeline,replicate}``.

Settings come from ``--config`` (JSON, snake_case field names of
:class:`scehg.pipeline.PipelineConfig`, with an optional nested
``scenario`` object) and are overridden by explicit flags. Failures print a
single line ``error code=<CODE> <detail>`` to stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline, simgen, tuning
from .errors import InvalidInputError, ParseError, ScehgError

EXIT_ERROR = 2


class CliError(ScehgError):
    code = "USAGE"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p):
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", default=None, help="worker processes: a count or 'auto' (default 1)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _scenario_flags(p):
    g = p.add_argument_group("scenario")
    g.add_argument("--scenario", help="AR+Hub, AR+SmallWorld, BC+Hub, BC+SmallWorld or 1-4")
    g.add_argument("--K", type=int, dest="K")
    g.add_argument("--n-k", type=int, dest="n_k")
    g.add_argument("--p", type=int, dest="p")
    g.add_argument("--q", type=int, dest="q")
    g.add_argument("--edge-weight", type=float, dest="edge_weight")
    g.add_argument("--rewire-prob", type=float, dest="rewire_prob")


def _model_flags(p, grid=True):
    g = p.add_argument_group("model")
    g.add_argument("--bandwidth", type=float)
    g.add_argument("--glasso-lambdas", type=_floats, dest="glasso_lambdas")
    g.add_argument("--glasso-folds", type=int, dest="glasso_folds")
    g.add_argument("--rho", type=float)
    g.add_argument("--admm-tol", type=float, dest="admm_tol")
    g.add_argument("--admm-max-iters", type=int, dest="admm_max_iters")
    g.add_argument("--dc-max-iters", type=int, dest="dc_max_iters")
    g.add_argument("--cluster-tol", type=float, dest="cluster_tol")
    g.add_argument("--standardize", action="store_const", const=True, default=None)
    g.add_argument("--k-max", type=int, dest="k_max", help="experimental: merge closest clusters down to this count")
    if grid:
        g.add_argument("--lam1", type=_floats, help="comma-separated grid (or a single value)")
        g.add_argument("--lam2", type=_floats)
        g.add_argument("--tau", type=_floats)
        g.add_argument("--r", type=float)
        g.add_argument("--s", type=float)
        g.add_argument("--alpha", type=float)
        g.add_argument("--B", type=int, dest="B")
        g.add_argument("--combo", type=_floats, help="fixed lam1,lam2,tau; skips tuning")


def build_parser():
    parser = _Parser(prog="scehg", description="Simultaneous clustering and graph recovery.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic dataset and truth.json")
    _common(p)
    _scenario_flags(p)

    p = sub.add_parser("fit", help="cluster a dataset at one fixed (lam1, lam2, tau)")
    _common(p)
    p.add_argument("--data", type=Path, help="directory of subject CSVs")
    _model_flags(p)

    p = sub.add_parser("tune", help="score a tuning grid and report the chosen combination")
    _common(p)
    p.add_argument("--data", type=Path)
    _model_flags(p)

    p = sub.add_parser("pipeline", help="features, tuning, clustering and reports")
    _common(p)
    p.add_argument("--data", type=Path)
    _scenario_flags(p)
    _model_flags(p)

    p = sub.add_parser("replicate", help="repeat a scenario over consecutive seeds")
    _common(p)
    p.add_argument("--reps", type=int, default=None)
    _scenario_flags(p)
    _model_flags(p)
    return parser


_SCENARIO_KEYS = ("scenario", "K", "n_k", "p", "q", "edge_weight", "rewire_prob")
_CONFIG_KEYS = (
    "seed", "bandwidth", "glasso_lambdas", "glasso_folds", "lam1", "lam2", "tau", "r", "s",
    "alpha", "B", "combo", "rho", "admm_tol", "admm_max_iters", "dc_max_iters", "cluster_tol",
    "standardize", "k_max",
)


def _read_config(path):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as err:
        raise InvalidInputError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ParseError(f"config {path}: line {err.lineno}, column {err.colno}: {err.msg}") from err
    if not isinstance(data, dict):
        raise ParseError(f"config {path} must hold a JSON object")
    return data


def _merged(args):
    """Config file values overridden by whichever flags were given."""
    data = _read_config(args.config)
    scenario = data.pop("scenario", None)
    if isinstance(scenario, str):
        scenario = {"scenario": scenario}
    scenario = dict(scenario or {})
    reps = data.pop("reps", None)
    for key in _SCENARIO_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            scenario[key] = value
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if getattr(args, "data", None) is not None:
        data["input_dir"] = str(args.data)
    if args.seed is not None:
        data["seed"] = args.seed
        if scenario or data.get("input_dir") is None:
            scenario["seed"] = args.seed
    if getattr(args, "reps", None) is not None:
        reps = args.reps
    return data, scenario, reps


def _pipeline_config(data, scenario, want_scenario):
    data = dict(data)
    if want_scenario and data.get("input_dir") is None:
        data["scenario"] = scenario
    return pipeline.PipelineConfig.from_dict(data)


def cmd_simulate(args):
    data, scenario, _ = _merged(args)
    scenario.setdefault("seed", data.get("seed", 0))
    spec = pipeline._scenario_from_dict(scenario)
    subjects, truth = simgen.generate_scenario(spec)
    pipeline.write_subjects(subjects, args.out)
    (args.out / "truth.json").write_text(
        json.dumps(pipeline.truth_to_dict(subjects, truth, spec), indent=2, sort_keys=True) + "\n"
    )
    print(f"wrote {len(subjects)} subjects to {args.out}")


def _single_combo(data):
    if data.get("combo") is not None:
        return tuple(data["combo"])
    vals = [data.get(k) for k in ("lam1", "lam2", "tau")]
    if any(v is None for v in vals):
        raise InvalidInputError("fit needs --combo or single --lam1, --lam2 and --tau")
    vals = [v if isinstance(v, (int, float)) else tuple(v) for v in vals]
    flat = []
    for v in vals:
        if isinstance(v, tuple):
            if len(v) != 1:
                raise InvalidInputError("fit takes one value each for lam1, lam2 and tau")
            v = v[0]
        flat.append(float(v))
    return tuple(flat)


def cmd_fit(args):
    data, _, _ = _merged(args)
    data["combo"] = _single_combo(data)
    cfg = _pipeline_config(data, None, want_scenario=False)
    report = pipeline.run_pipeline(cfg, threads=args.threads)
    pipeline.emit_report(report, args.out)
    print(f"k_hat={report.k_hat} combo={report.combo}")


def cmd_tune(args):
    data, _, _ = _merged(args)
    data.pop("combo", None)
    cfg = _pipeline_config(data, None, want_scenario=False)
    subjects = pipeline.load_subjects(cfg.input_dir)
    with pipeline.worker_pool(args.threads) as pool:
        _, X = pipeline.subject_features(subjects, cfg, pool)
        combo, reports = tuning.select_tuning(X, cfg.grid(), cfg.template(), executor=pool)
    args.out.mkdir(parents=True, exist_ok=True)
    payload = {"combo": list(combo), "reports": [r.to_dict() for r in reports], "config": cfg.to_dict()}
    (args.out / "tuning.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"combo={list(combo)}")


def cmd_pipeline(args):
    data, scenario, _ = _merged(args)
    cfg = _pipeline_config(data, scenario, want_scenario=True)
    report = pipeline.run_pipeline(cfg, threads=args.threads)
    pipeline.emit_report(report, args.out)
    print(f"k_hat={report.k_hat} combo={report.combo}")


def cmd_replicate(args):
    data, scenario, reps = _merged(args)
    if data.get("input_dir") is not None:
        raise InvalidInputError("replicate works on scenarios, not data directories")
    cfg = _pipeline_config(data, scenario, want_scenario=True)
    runs = pipeline.replicate(cfg, reps or 10, threads=args.threads)
    summary = pipeline.summarize_replicates(runs, cfg.scenario.K)
    pipeline.write_replicate_summary(summary, runs, args.out)
    print(f"reps={summary['reps']} over|under={summary['over']}|{summary['under']}")


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "tune": cmd_tune,
    "pipeline": cmd_pipeline,
    "replicate": cmd_replicate,
}


def _one_line(text):
    return " ".join(str(text).split())


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        pipeline.resolve_threads(args.threads)
        COMMANDS[args.command](args)
    except ScehgError as err:
        print(f"error code={err.code} {_one_line(err)}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as err:
        print(f"error code=IO_ERROR {_one_line(err)}", file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())

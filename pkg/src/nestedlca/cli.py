"""Command-line interface: ``nestedlca fit | benchmark | simulate``.

Exit codes: 0 success, 2 input error, 3 estimation error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__, io
from .errors import DataError, EstimationError
from .estimators import ESTIMATORS, EstimatorConfig, fit, init_random, parse_algorithm
from .harness import MODE_TOL, election_like_model, format_table, run_benchmark, simulate

DEFAULT_ALGOS = "nested_em,mm_em,nr_em,nr_em_q1,hybrid_em,three_step"


def _categories(text: str | None):
    if text is None:
        return None
    parts = [int(p) for p in text.split(",") if p.strip()]
    return parts[0] if len(parts) == 1 else parts


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV: header, J response columns, covariates")
    p.add_argument("--items", type=int, required=True, help="number of response columns J")
    p.add_argument("--categories", help="K for every item, or comma list of K_j "
                                        "(default: largest observed code)")
    p.add_argument("--intercept", action="store_true", help="prepend a constant design column")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    d = EstimatorConfig()
    p.add_argument("--classes", type=int, required=True, help="number of latent classes R")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=d.tol)
    p.add_argument("--max-iter", type=int, default=d.max_iter)
    p.add_argument("--epsilon", type=float, default=d.epsilon, help="hybrid switch threshold")
    p.add_argument("--alpha", type=float, default=d.alpha, help="Newton step rescaling")
    p.add_argument("--decay-slack", type=float, default=d.decay_slack)
    p.add_argument("--out-dir", default=".")


def _config(args) -> EstimatorConfig:
    return EstimatorConfig(tol=args.tol, max_iter=args.max_iter, epsilon=args.epsilon,
                           alpha=args.alpha, decay_slack=args.decay_slack, seed=args.seed)


def _manifest(command: str, argv, inputs: dict, cfg: EstimatorConfig | None,
              seeds, outputs: dict) -> dict:
    return {
        "command": command,
        "argv": list(argv),
        "inputs": inputs,
        "config": asdict(cfg) if cfg is not None else None,
        "seeds": list(seeds),
        "version": __version__,
        "outputs": outputs,
    }


def _load(args):
    try:
        categories = _categories(args.categories)
    except ValueError:
        raise DataError(f"bad --categories value {args.categories!r}") from None
    return io.read_dataset(args.data, args.items, categories, args.intercept)


def cmd_fit(args, argv) -> int:
    cfg = _config(args)
    parse_algorithm(args.algo)
    dataset = _load(args)
    init = init_random(dataset, args.classes, args.seed)
    result = fit(args.algo, dataset, args.classes, init, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"params": out / "params.json", "trace": out / "trace.csv",
             "manifest": out / "manifest.json"}
    io.write_params(paths["params"], result.params)
    io.write_trace(paths["trace"], result.loglik_trace)
    manifest = _manifest("fit", argv, {"data": str(args.data), "items": args.items,
                                       "categories": args.categories, "intercept": args.intercept,
                                       "algorithm": args.algo, "classes": args.classes},
                         cfg, [args.seed], {k: str(v) for k, v in paths.items()})
    manifest["result"] = {"loglik": result.loglik, "iterations": result.iterations,
                          "converged": result.converged, "decay_count": result.decay_count}
    io.write_json(paths["manifest"], manifest)
    print(f"algorithm   {args.algo}")
    print(f"loglik      {result.loglik:.10f}")
    print(f"iterations  {result.iterations}")
    print(f"decays      {result.decay_count}")
    print(f"converged   {result.converged}")
    return 0


def cmd_benchmark(args, argv) -> int:
    cfg = _config(args)
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    for a in algos:
        parse_algorithm(a)
    if args.runs < 1:
        raise DataError("--runs must be at least 1")
    dataset = _load(args)
    report = run_benchmark(dataset, args.classes, algos, args.runs, cfg,
                           base_seed=args.seed, jobs=args.jobs, mode_tol=args.mode_tol)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json", "runs": out / "runs.csv",
             "manifest": out / "manifest.json"}
    io.write_json(paths["report"], report.to_dict())
    io.write_runs(paths["runs"], report.runs)
    io.write_json(paths["manifest"], _manifest(
        "benchmark", argv, {"data": str(args.data), "items": args.items,
                            "categories": args.categories, "intercept": args.intercept,
                            "algorithms": algos, "classes": args.classes, "runs": args.runs,
                            "jobs": args.jobs, "mode_tol": args.mode_tol},
        cfg, report.seeds, {k: str(v) for k, v in paths.items()}))
    print(format_table(report))
    return 0


def cmd_simulate(args, argv) -> int:
    if args.n < 1:
        raise DataError("--n must be at least 1")
    if args.model:
        model = io.model_from_dict(io.read_json(args.model))
    else:
        model = election_like_model(args.classes, args.items, args.categories,
                                    party_effect=args.party_effect)
    dataset, labels = simulate(model, args.n, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"data": out / "data.csv", "model": out / "model.json",
             "manifest": out / "manifest.json"}
    io.write_dataset(paths["data"], dataset, skip_intercept=model.intercept)
    io.write_json(paths["model"], io.model_to_dict(model))
    if args.labels:
        paths["labels"] = out / "labels.csv"
        paths["labels"].write_text("class\n" + "".join(f"{s + 1}\n" for s in labels))
    io.write_json(paths["manifest"], _manifest(
        "simulate", argv, {"model": args.model, "n": args.n, "classes": model.params.n_classes,
                           "items": len(model.params.pi), "intercept": model.intercept},
        None, [args.seed], {k: str(v) for k, v in paths.items()}))
    print(f"wrote {dataset.n_units} units x {dataset.n_items} items to {paths['data']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nestedlca", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one estimator from one random start")
    _add_data_args(p)
    p.add_argument("--algo", default="nested_em",
                   help=f"one of {', '.join(ESTIMATORS)} (append @alpha to override step size)")
    _add_config_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("benchmark", help="multi-start comparison of estimators")
    _add_data_args(p)
    p.add_argument("--algos", default=DEFAULT_ALGOS)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--mode-tol", type=float, default=MODE_TOL)
    _add_config_args(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("simulate", help="draw a dataset from a generating model")
    p.add_argument("--model", help="model JSON (parameters plus covariate recipe); "
                                   "default is the built-in election-shaped model")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--items", type=int, default=12)
    p.add_argument("--categories", type=int, default=4)
    p.add_argument("--party-effect", type=float, default=1.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--labels", action="store_true", help="also write the true classes")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, argv)
    except DataError as err:
        print(f"input error: {err}", file=sys.stderr)
        return 2
    except EstimationError as err:
        print(f"estimation error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

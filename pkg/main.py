import argparse
import logging
import sys
from typing import List, Optional, Tuple

import pandas as pd

from bayes_factors import GPriorSpec, Method, Variant, benchmark_laplace
from config import FORMATS, RunConfig, load_config, resolve_threads
from datasets import resolve_input
from error_models import ErrorModel
from errors import ConfigError, SubharmonicError
from regression import standardize
from report import (
    bench_payload,
    dumps_json,
    frequency_frame,
    frequency_payload,
    render,
    render_selection_table,
    selection_frame,
    selection_payload,
    sweep_frame,
    sweep_payload,
    write_output,
)
from selection import ModelPrior, select
from simulation import SimDesign, run_consistency_sweep, run_frequency_study

logger = logging.getLogger("Subharmonic")

STUDY_REPLICATES = 200
SWEEP_REPLICATES = 100
DESIGNS = {"correlated16": "correlated16", "paper-6.1": "correlated16"}


def setup_logging(config: dict) -> None:
    logging.basicConfig(
        level=getattr(logging, str(config.get("log_level", "INFO")).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(config.get("log_file", "subharmonic.log")),
            logging.StreamHandler(sys.stderr),
        ],
    )


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _strings(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


class ArgumentParser(argparse.ArgumentParser):
    """Reports usage errors as ConfigError instead of exiting."""

    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {message}", {"usage": self.format_usage().strip()})


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="subharmonic",
        description="Robust Bayesian variable selection with mixtures of g-priors",
    )
    parser.add_argument("--config", help="JSON configuration file (default: config.json)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--nu", type=_floats, help="comma-separated nu values")
        p.add_argument("--k", type=float, help="k hyper-parameter of the prior on g")
        p.add_argument("--variant", choices=[v.value for v in Variant])
        p.add_argument("--method", type=_strings, help="comma-separated: exact, laplace, laplace-exact, bic")
        p.add_argument("--prior", choices=["uniform", "uniform-all"])
        p.add_argument("--min-size", type=int, default=0, help="zero prior mass on models smaller than this")
        p.add_argument("--rel-tol", type=float)
        p.add_argument("--format", choices=list(FORMATS))
        p.add_argument("--output", help="write the report here instead of stdout")
        p.add_argument("--threads", type=int)

    p = sub.add_parser("select", help="rank all submodels of a dataset")
    common(p)
    p.add_argument("--input", required=True, help="CSV path, or a bundled dataset: hald, uscrime")
    p.add_argument("--response", help="response column (default: last column)")
    p.add_argument("--top", type=int, help="models per method in the report (0 = all)")

    p = sub.add_parser("simulate", help="true-model recovery frequencies")
    common(p)
    p.add_argument("--design", default="correlated16", choices=list(DESIGNS))
    p.add_argument("--fixed-predictors", action="store_true", help="draw the predictors once and reuse them in every replicate")
    p.add_argument("--qt", type=_ints, help="true model sizes: 4, 8, 12, 16")
    p.add_argument("--sigma", type=_floats)
    p.add_argument("--error", type=_strings, help="gaussian, t3, ...")
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--seed", type=int)
    p.add_argument("--replicates", type=int)

    p = sub.add_parser("sweep", help="recovery rate against sample size")
    common(p)
    p.add_argument("--n-grid", type=_ints, default=[50, 200, 800, 3200])
    p.add_argument("--sigma", type=_floats)
    p.add_argument("--error", type=_strings)
    p.add_argument("--seed", type=int)
    p.add_argument("--replicates", type=int)

    p = sub.add_parser("bench-laplace", help="Laplace forms against exact quadrature")
    common(p)
    p.add_argument("--n-grid", type=_ints, default=[100, 1000, 10000])
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--r", type=float, default=0.5)
    return parser


def make_run_config(args: argparse.Namespace, config: dict) -> RunConfig:
    """CLI flags override the configuration file, which overrides defaults"""
    def pick(name, key=None):
        value = getattr(args, name, None)
        return config[key or name] if value is None else value

    try:
        methods = [Method.parse(m) for m in pick("method", "methods")]
        variant = Variant(pick("variant"))
    except (SubharmonicError, ValueError) as e:
        raise ConfigError(str(e))
    default_format = "csv" if args.command == "bench-laplace" else config["format"]
    replicates = pick("replicates")
    if replicates is None:
        replicates = SWEEP_REPLICATES if args.command == "sweep" else STUDY_REPLICATES
    run_config = RunConfig(
        command=args.command,
        input=getattr(args, "input", None),
        response=getattr(args, "response", None),
        nu=[float(v) for v in pick("nu")],
        k=float(pick("k")),
        variant=variant,
        methods=methods,
        prior=pick("prior"),
        min_size=args.min_size,
        seed=int(pick("seed")),
        replicates=int(replicates),
        output=args.output,
        format=args.format or default_format,
        rel_tol=float(pick("rel_tol")),
        top=int(pick("top")),
        threads=args.threads or resolve_threads(config),
        cap=int(config["enumeration_cap"]),
    )
    if args.command == "simulate":
        run_config.design = DESIGNS[args.design]
        run_config.fixed_predictors = args.fixed_predictors
        run_config.n = args.n
        run_config.q_true = args.qt or [4]
        run_config.sigma = args.sigma or [1.0]
        run_config.errors = args.error or ["gaussian"]
    elif args.command == "sweep":
        run_config.n_grid = args.n_grid
        run_config.sigma = args.sigma or [1.0]
        run_config.errors = args.error or ["gaussian"]
    elif args.command == "bench-laplace":
        run_config.n_grid = args.n_grid
        run_config.q = args.q
        run_config.r = args.r
    return run_config


def _prior(config: RunConfig) -> ModelPrior:
    if config.min_size:
        return ModelPrior.uniform_min_size(config.min_size)
    return ModelPrior.uniform_all() if config.prior == "uniform-all" else ModelPrior.uniform_non_null()


def _run_select(config: RunConfig) -> str:
    raw = resolve_input(config.input, config.response)
    data = standardize(raw)
    prior = _prior(config)
    reports = []
    for nu in config.nu:
        spec = GPriorSpec(nu=nu, k=config.k, variant=config.variant)
        reports.append(select(data, spec, config.methods, prior, config.rel_tol, config.cap))
    if config.format == "json":
        dataset = {"input": config.input, "n": data.n, "p": data.p, "columns": list(data.column_names)}
        return dumps_json(selection_payload(reports, config.top, dataset))
    if config.format == "csv":
        return render(selection_frame(reports, config.top), "csv")
    return render_selection_table(reports, config.top)


def _run_simulate(config: RunConfig) -> str:
    results = []
    for error in config.errors:
        for q_true in config.q_true:
            for sigma in config.sigma:
                design = SimDesign.benchmark(
                    q_true, sigma, ErrorModel.parse(error), n=config.n, replicates=config.replicates, seed=config.seed,
                    fixed_predictors=config.fixed_predictors,
                )
                results.append(run_frequency_study(
                    design, config.methods, config.nu, config.k, config.variant, _prior(config), config.threads,
                    keep_top=config.format == "json", cap=config.cap,
                ))
    if config.format == "json":
        return dumps_json(frequency_payload(results, config.seed))
    return render(frequency_frame(results), config.format)


def _run_sweep(config: RunConfig) -> str:
    frames = []
    payloads = []
    for error in config.errors:
        for sigma in config.sigma:
            base = SimDesign.small(
                error=ErrorModel.parse(error), sigma=sigma, replicates=config.replicates, seed=config.seed
            )
            sweep = run_consistency_sweep(
                base, config.n_grid, config.methods, config.nu, config.k, config.variant, _prior(config), config.threads
            )
            frame = sweep_frame(sweep)
            frame.insert(0, "sigma", sigma)
            frame.insert(0, "error", error)
            frames.append(frame)
            payload = sweep_payload(sweep, config.seed)
            payload.update({"error": error, "sigma": sigma})
            payloads.append(payload)
    if config.format == "json":
        return dumps_json(payloads[0] if len(payloads) == 1 else {"schema": 1, "command": "sweep", "sweeps": payloads})
    return render(pd.concat(frames, ignore_index=True), config.format)


def _run_bench(config: RunConfig) -> str:
    rows = []
    for nu in config.nu:
        for row in benchmark_laplace(config.n_grid, config.q, nu, config.r, config.k, config.variant, config.rel_tol):
            rows.append({"q": config.q, "nu": nu, "k": config.k, "r": config.r, **row})
    if config.format == "json":
        return dumps_json(bench_payload(rows))
    return render(pd.DataFrame(rows), config.format)


COMMAND_HANDLERS = {
    "select": _run_select,
    "simulate": _run_simulate,
    "sweep": _run_sweep,
    "bench-laplace": _run_bench,
}


def run(config: RunConfig) -> Tuple[int, str]:
    """Execute one command; returns (exit status, serialized output)"""
    try:
        config.validate()
        output = COMMAND_HANDLERS[config.command](config)
        return 0, output
    except SubharmonicError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        return 2, dumps_json(e.to_dict())
    except Exception as e:
        logger.exception(f"Unexpected error running {config.command}: {e}")
        return 1, dumps_json({"error": "internal_error", "type": type(e).__name__, "message": str(e), "details": {}})


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        write_output(dumps_json(e.to_dict()))
        return 2
    config = load_config(args.config)
    setup_logging(config)

    try:
        run_config = make_run_config(args, config)
    except SubharmonicError as e:
        logger.error(f"Invalid configuration: {e.message}")
        write_output(dumps_json(e.to_dict()))
        return 2

    status, output = run(run_config)
    if status == 0:
        write_output(output, run_config.output)
    else:
        write_output(output)
    return status


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Subcommands
-----------
* ``gen-data``: write a synthetic logistic dataset CSV.
* ``audit``: run the certificate pipeline on one target, emit a bound report.
* ``truth``: estimate the ground-truth KL(g, f) by sampling.
* ``table``: run a replicated experiment grid from a JSON spec.

Exit codes: 0 on success, 2 when the target violates a certificate
assumption (e.g. non-positive-definite Hessian at the mode), 1 for any other
failure including usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from .bound import AuditConfig, audit
from .errors import (
    AssumptionViolationError,
    DimensionMismatchError,
    MapNotConvergedError,
    NonFiniteObjectiveError,
)
from .experiments import ExperimentSpec, run_experiment
from .laplace import fit_laplace
from .mcmc import estimate_true_kl, get_preset
from .models import (
    LogisticRegressionModel,
    SyntheticDatasetConfig,
    generate_dataset,
    load_dataset_csv,
    random_gaussian_model,
    save_dataset_csv,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ASSUMPTION = 2


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1; code 2 is reserved for assumption violations
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _flatten(payload, prefix=""):
    for key, value in payload.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            yield from _flatten(value, prefix=f"{name}.")
        else:
            yield name, value


def _emit(payload: dict, out: str | None, fmt: str, pretty: bool) -> None:
    if fmt == "json":
        text = json.dumps(payload, indent=2 if pretty else None) + "\n"
    else:
        lines = ["key,value"]
        for key, value in _flatten(payload):
            if isinstance(value, (list, tuple)):
                value = json.dumps(value)
            lines.append(f"{key},{value}")
        text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as handle:
            handle.write(text)


def _add_model_flags(parser) -> None:
    parser.add_argument(
        "--model", choices=("logistic", "gaussian"), default="logistic",
        help="target family; 'gaussian' builds the seeded exact-null benchmark",
    )
    parser.add_argument("--data", help="dataset CSV (y,x1,...,xd) for the logistic target")
    parser.add_argument("--d", type=int, help="dimension for synthetic targets")
    parser.add_argument("--n", type=int, help="sample count for the synthetic logistic target")
    parser.add_argument("--sigma0", type=float, default=10.0, help="prior sigma0 (default 10)")
    parser.add_argument("--seed", type=int, default=0)


def _build_model(args, parser):
    if args.model == "gaussian":
        if args.d is None:
            parser.error("--model gaussian requires --d")
        return random_gaussian_model(args.d, args.seed)
    if args.data is not None:
        labels, covariates = load_dataset_csv(args.data)
        return LogisticRegressionModel(labels, covariates, args.sigma0)
    if args.d is None or args.n is None:
        parser.error("logistic target needs either --data or both --d and --n")
    dataset = generate_dataset(SyntheticDatasetConfig(d=args.d, n=args.n, seed=args.seed))
    return dataset.model(args.sigma0)


def _cmd_gen_data(args, parser) -> int:
    if args.d is None or args.n is None:
        parser.error("gen-data requires --d and --n")
    dataset = generate_dataset(SyntheticDatasetConfig(d=args.d, n=args.n, seed=args.seed))
    save_dataset_csv(args.out, dataset.labels, dataset.covariates)
    return EXIT_OK


def _cmd_audit(args, parser) -> int:
    model = _build_model(args, parser)
    config = AuditConfig(
        n_directions=args.directions,
        quadrature_nodes=args.nodes,
        seed=args.seed,
        delta4_mode=args.delta4_mode,
        bound_form=args.bound,
    )
    report = audit(model, config)
    _emit(report.to_json_dict(), args.out, args.format, args.pretty)
    return EXIT_OK


def _cmd_truth(args, parser) -> int:
    model = _build_model(args, parser)
    fit = fit_laplace(model)
    preset = get_preset(args.mcmc_preset, seed=args.seed)
    estimate = estimate_true_kl(model, fit, preset)
    _emit(estimate.to_json_dict(), args.out, args.format, args.pretty)
    return EXIT_OK


def _cmd_table(args, parser) -> int:
    spec = ExperimentSpec.from_file(args.spec)
    if args.mcmc_preset is not None:
        payload = spec.to_json_dict()
        payload["mcmc_preset"] = args.mcmc_preset
        spec = ExperimentSpec.from_json_dict(payload)
    report = run_experiment(spec, jobs=args.jobs)
    if args.format == "csv":
        text = report.to_csv(pretty=args.pretty)
    else:
        text = json.dumps(report.to_json_dict(), indent=2 if args.pretty else None) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="laplace-audit",
        description="Laplace approximation with a computable KL-divergence certificate",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen-data", parents=[], help="write a synthetic dataset CSV")
    p_gen.add_argument("--d", type=int, required=True)
    p_gen.add_argument("--n", type=int, required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=_cmd_gen_data)

    p_audit = sub.add_parser("audit", help="compute the KL certificate for one target")
    _add_model_flags(p_audit)
    p_audit.add_argument("--directions", type=int, default=256)
    p_audit.add_argument("--nodes", type=int, default=64)
    p_audit.add_argument("--bound", choices=("approx", "detailed", "both"), default="both")
    p_audit.add_argument("--delta4-mode", choices=("analytic", "grid"), default="analytic")
    p_audit.add_argument("--out")
    p_audit.add_argument("--format", choices=("json", "csv"), default="json")
    p_audit.add_argument("--pretty", action="store_true")
    p_audit.set_defaults(func=_cmd_audit)

    p_truth = sub.add_parser("truth", help="estimate the true KL(g, f) by sampling")
    _add_model_flags(p_truth)
    p_truth.add_argument("--mcmc-preset", choices=("desk", "paper"), default="desk")
    p_truth.add_argument("--out")
    p_truth.add_argument("--format", choices=("json", "csv"), default="json")
    p_truth.add_argument("--pretty", action="store_true")
    p_truth.set_defaults(func=_cmd_truth)

    p_table = sub.add_parser("table", help="run an experiment grid from a JSON spec")
    p_table.add_argument("--spec", required=True)
    p_table.add_argument("--mcmc-preset", choices=("desk", "paper"), default=None)
    p_table.add_argument("--jobs", type=int, default=1)
    p_table.add_argument("--out")
    p_table.add_argument("--format", choices=("json", "csv"), default="csv")
    p_table.add_argument("--pretty", action="store_true")
    p_table.set_defaults(func=_cmd_table)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except AssumptionViolationError as exc:
        payload = {"error": {"type": type(exc).__name__, "message": str(exc), "details": exc.details}}
        sys.stdout.write(json.dumps(payload) + "\n")
        return EXIT_ASSUMPTION
    except (
        MapNotConvergedError,
        NonFiniteObjectiveError,
        DimensionMismatchError,
        ValueError,
        OSError,
    ) as exc:
        sys.stderr.write(f"laplace-audit: error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

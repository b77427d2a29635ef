"""Command-line interface: ``mdogen {generate,solve,bench,graph,check}``.

Exit codes: 0 on success, 1 on configuration errors, 2 on numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from mdogen.bench import (
    PRESETS,
    ScenarioConfig,
    build_coupling,
    build_mdo_problem,
    compare_algorithms,
    emit_report,
    preset,
    run_scenario,
    starting_points,
)
from mdogen.coupling import dumps_coupling
from mdogen.errors import ConfigurationError, NumericalError
from mdogen.mda import MdaSettings
from mdogen.mdf import equivalence_report, export_coupling_graph
from mdogen.optimize import multistart


def _load_config(args) -> ScenarioConfig:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as err:
            raise ConfigurationError(f"cannot read {args.config}: {err}") from err
        config = ScenarioConfig.from_json(text)
    else:
        config = preset(args.preset)
    changes = {}
    if args.seed is not None:
        changes["seed_base"] = args.seed
    if args.reps is not None:
        changes["repetitions"] = args.reps
    mda = {}
    if args.algo:
        mda["algorithm"] = args.algo
    if args.accel:
        mda["acceleration"] = args.accel
    if mda:
        changes["mda"] = MdaSettings(**{**_mda_kwargs(config.mda), **mda})
    return config.replace(**changes) if changes else config


def _mda_kwargs(settings: MdaSettings) -> dict:
    return {k: getattr(settings, k) for k in settings.__dataclass_fields__}


def _write(out: str | None, name: str, text: str):
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    (path / name).write_text(text)
    print(f"wrote {path / name}")


def cmd_generate(args):
    config = _load_config(args)
    if args.coupling:
        _write(args.out, f"{config.name}-coupling.json", dumps_coupling(build_coupling(config, config.seed_base)) + "\n")
    else:
        _write(args.out, f"{config.name}.json", config.to_json() + "\n")


def cmd_solve(args):
    config = _load_config(args)
    problem = build_mdo_problem(config, args.repetition)
    part = problem.reference.partition
    starts = starting_points(config, args.repetition)
    if args.start:
        try:
            starts = np.array([[float(v) for v in args.start.split(",")]])
        except ValueError as err:
            raise ConfigurationError(f"bad --start value: {err}") from err
        if starts.shape[1] != part.dim:
            raise ConfigurationError(f"--start needs {part.dim} components")
    result = multistart(
        problem.penalized_objective,
        problem.gradient,
        (part.lower, part.upper),
        config.n_starts,
        None,
        config.optimizer,
        x_star=problem.reference.known_solution,
        starts=starts,
    )
    metrics = problem.metrics(result.x_final)
    summary = {
        "status": result.status.value,
        "iterations": result.iterations,
        "x_final": result.x_final.tolist(),
        "f_final": result.f_final,
        "delta_x": metrics.delta_x,
        "delta_f": metrics.delta_f,
        "counters": {k: [r.values, r.gradients] for k, r in problem.counters.items()},
    }
    print(json.dumps(summary, indent=2))
    if args.history:
        with open(args.history, "w", newline="") as stream:
            writer = csv.writer(stream)
            writer.writerow(["iteration", "objective", "delta_x"])
            for k, (f, dx) in enumerate(result.history, start=1):
                writer.writerow([k, repr(f), repr(dx)])


def cmd_bench(args):
    config = _load_config(args)
    if args.compare:
        variants = [
            MdaSettings(**{**_mda_kwargs(config.mda), "algorithm": algo})
            for algo in ("jacobi", "gauss-seidel")
        ]
        report = compare_algorithms(config, variants, workers=args.threads)
    else:
        report = run_scenario(config, workers=args.threads)
    if args.out:
        _write(args.out, f"{config.name}.csv", emit_report(report, "csv"))
        _write(args.out, f"{config.name}.md", emit_report(report, "md"))
    else:
        sys.stdout.write(emit_report(report, args.format))


def cmd_graph(args):
    config = _load_config(args)
    _write(args.out, f"{config.name}.dot", export_coupling_graph(build_mdo_problem(config)))


def cmd_check(args):
    config = _load_config(args)
    problem = build_mdo_problem(config)
    summary = equivalence_report(problem, args.samples, config.seed_base)
    print(json.dumps(summary.__dict__, indent=2))


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mdogen", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="scenario JSON file")
    common.add_argument("--preset", default="problem1", choices=sorted(PRESETS))
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--reps", type=int, help="override the number of repetitions")
    common.add_argument("--algo", choices=["jacobi", "gauss-seidel"])
    common.add_argument("--accel", choices=["none", "mpe"])
    common.add_argument("--out", help="output directory (stdout when omitted)")
    common.add_argument("--format", default="csv", choices=["csv", "md", "markdown"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a scenario or a sampled coupling")
    p.add_argument("--coupling", action="store_true", help="write the sampled coupling system")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", parents=[common], help="run one optimization")
    p.add_argument("--repetition", type=int, default=0)
    p.add_argument("--start", help="comma-separated starting point")
    p.add_argument("--history", help="write the convergence history CSV here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", parents=[common], help="run a scenario")
    p.add_argument("--compare", action="store_true", help="compare Jacobi and Gauss-Seidel")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("graph", parents=[common], help="emit the coupling graph as DOT")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("check", parents=[common], help="check the MDO/reference equivalence")
    p.add_argument("--samples", type=int, default=100)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 1
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

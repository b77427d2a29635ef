"""Scenario configuration, repetition harness and report emission."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mdogen.coupling import CouplingSpace, sample_linear_coupling, sample_sigmoid_coupling
from mdogen.errors import ConfigurationError, MdogenError
from mdogen.mda import MdaSettings
from mdogen.mdf import MdoProblem, RunMetrics, build_problem
from mdogen.optimize import OptimizerSettings, lhs_sample, multistart
from mdogen.problems import DesignPartition, make_rosenbrock_problem

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProblemConfig:
    family: str = "rosenbrock"
    block_sizes: tuple[int, ...] = (1, 1, 1)
    lower: float = -2.0
    upper: float = 2.0

    def partition(self) -> DesignPartition:
        return DesignPartition.uniform(self.block_sizes, self.lower, self.upper)


@dataclass(frozen=True)
class CouplingConfig:
    family: str = "linear"
    coefficient_range: float = 1.0
    contraction_target: float = 0.9
    slope: float = 0.3
    space: str = "unbounded"
    space_lower: float = -1.0
    space_upper: float = 1.0
    resample_per_repetition: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    coupling: CouplingConfig = field(default_factory=CouplingConfig)
    link: str = "linear-explicit"
    exp_scale: float = 1.0
    mda: MdaSettings = field(default_factory=MdaSettings)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    n_starts: int = 1
    repetitions: int = 100
    seed_base: int = 0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigurationError("repetitions must be >= 1")
        if self.n_starts < 1:
            raise ConfigurationError("n_starts must be >= 1")
        if self.problem.family != "rosenbrock":
            raise ConfigurationError(f"unknown problem family {self.problem.family!r}")
        if self.coupling.family not in ("linear", "sigmoid"):
            raise ConfigurationError(f"unknown coupling family {self.coupling.family!r}")
        if self.coupling.space not in ("unbounded", "box"):
            raise ConfigurationError(f"unknown coupling space {self.coupling.space!r}")
        if self.coupling.family == "sigmoid" and self.link == "linear-explicit":
            raise ConfigurationError("the explicit link needs a linear coupling")
        if self.coupling.family == "sigmoid" and self.coupling.space != "box":
            raise ConfigurationError("sigmoid couplings need a box coupling space")
        if self.link not in ("additive", "exponential", "linear-explicit"):
            raise ConfigurationError(f"unknown link {self.link!r}")
        self.problem.partition()

    def replace(self, **changes) -> ScenarioConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        for key in ("algorithm", "acceleration", "initial_guess"):
            doc["mda"][key] = getattr(self.mda, key).value
        doc["problem"]["block_sizes"] = list(self.problem.block_sizes)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> ScenarioConfig:
        doc = dict(doc)
        try:
            problem = dict(doc.pop("problem", {}))
            if "block_sizes" in problem:
                problem["block_sizes"] = tuple(problem["block_sizes"])
            return cls(
                problem=ProblemConfig(**problem),
                coupling=CouplingConfig(**doc.pop("coupling", {})),
                mda=MdaSettings(**doc.pop("mda", {})),
                optimizer=OptimizerSettings(**doc.pop("optimizer", {})),
                **doc,
            )
        except TypeError as err:
            raise ConfigurationError(f"malformed scenario: {err}") from err

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> ScenarioConfig:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigurationError(f"invalid JSON: {err}") from err
        return cls.from_dict(doc)


_MPE3 = dict(acceleration="mpe", mpe_window=3)

PRESETS = {
    "problem1": ScenarioConfig(name="problem1"),
    "problem1-accelerated": ScenarioConfig(name="problem1-accelerated", mda=MdaSettings(**_MPE3)),
    "problem2": ScenarioConfig(
        name="problem2",
        problem=ProblemConfig(block_sizes=(1,) * 7),
        mda=MdaSettings(**_MPE3),
        n_starts=10,
    ),
    "problem3": ScenarioConfig(
        name="problem3",
        problem=ProblemConfig(block_sizes=(2, 3, 2)),
        mda=MdaSettings(**_MPE3),
        n_starts=10,
    ),
    "problem4": ScenarioConfig(
        name="problem4",
        coupling=CouplingConfig(family="sigmoid", slope=0.3, space="box"),
        link="additive",
        mda=MdaSettings(**_MPE3),
    ),
}


def preset(name: str) -> ScenarioConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown preset {name!r}; choose from {', '.join(PRESETS)}"
        ) from None


def build_coupling(config: ScenarioConfig, seed):
    part = config.problem.partition()
    cc = config.coupling
    sizes = part.block_sizes[1:]
    if cc.space == "box":
        space = CouplingSpace.box(sizes, cc.space_lower, cc.space_upper)
    else:
        space = CouplingSpace.unbounded(sizes)
    if cc.family == "sigmoid":
        return sample_sigmoid_coupling(
            seed, part, space, cc.slope, cc.coefficient_range, cc.contraction_target
        )
    return sample_linear_coupling(seed, part, space, cc.coefficient_range, cc.contraction_target)


def build_mdo_problem(config: ScenarioConfig, repetition: int = 0) -> MdoProblem:
    seed = config.seed_base + (repetition if config.coupling.resample_per_repetition else 0)
    reference = make_rosenbrock_problem(config.problem.partition())
    coupling = build_coupling(config, seed)
    return build_problem(reference, coupling, config.link, config.mda, config.exp_scale)


def starting_points(config: ScenarioConfig, repetition: int) -> np.ndarray:
    """Starts of one repetition.

    Single-start scenarios draw all repetitions from one design of
    ``repetitions`` points; multi-start repetitions each get their own design
    seeded with ``seed_base + repetition``.
    """
    part = config.problem.partition()
    bounds = (part.lower, part.upper)
    if config.n_starts == 1:
        design = lhs_sample(config.seed_base, config.repetitions, bounds)
        return design[repetition : repetition + 1]
    return lhs_sample(config.seed_base + repetition, config.n_starts, bounds)


@dataclass
class RepetitionRow:
    repetition: int
    metrics: RunMetrics | None
    status: str
    error: str = ""


def metric_names(n_disciplines: int) -> list[str]:
    names = ["delta_x", "delta_f", "n_f", "n_f_grad", "n_L", "n_L_grad"]
    for i in range(1, n_disciplines + 1):
        names += [f"n_h_{i}", f"n_h_{i}_grad"]
    return names + ["n_h_mean", "n_h_grad_mean"]


def metric_values(metrics: RunMetrics) -> list[float]:
    values = [
        metrics.delta_x,
        metrics.delta_f,
        metrics.n_f,
        metrics.n_f_grad,
        metrics.n_L,
        metrics.n_L_grad,
    ]
    for n, n_grad in zip(metrics.n_h, metrics.n_h_grad):
        values += [n, n_grad]
    return values + [metrics.n_h_mean, metrics.n_h_grad_mean]


@dataclass
class BenchReport:
    scenario: str
    algorithm: str
    n_disciplines: int
    rows: list[RepetitionRow] = field(default_factory=list)

    @property
    def metric_names(self) -> list[str]:
        return metric_names(self.n_disciplines)

    def raw(self) -> np.ndarray:
        """Metric matrix with one row per successful repetition."""
        data = [metric_values(r.metrics) for r in self.rows if r.metrics is not None]
        return np.array(data, dtype=float).reshape(len(data), len(self.metric_names))

    @property
    def partial(self) -> bool:
        return any(r.metrics is None for r in self.rows)

    def aggregate(self) -> dict[str, tuple[float, float]]:
        """Mean and unbiased standard deviation of every metric."""
        data = self.raw()
        out = {}
        for k, name in enumerate(self.metric_names):
            column = data[:, k]
            mean = float(np.mean(column)) if column.size else math.nan
            std = float(np.std(column, ddof=1)) if column.size > 1 else math.nan
            out[name] = (mean, std)
        return out

    def mean(self, name: str) -> float:
        return self.aggregate()[name][0]


def _run_repetition(config: ScenarioConfig, repetition: int) -> RepetitionRow:
    try:
        problem = build_mdo_problem(config, repetition)
        part = problem.reference.partition
        result = multistart(
            problem.penalized_objective,
            problem.gradient,
            (part.lower, part.upper),
            config.n_starts,
            None,
            config.optimizer,
            x_star=problem.reference.known_solution,
            starts=starting_points(config, repetition),
        )
    except MdogenError as err:
        logger.error("repetition %d of %s failed: %s", repetition, config.name, err)
        return RepetitionRow(repetition, None, "error", str(err))
    return RepetitionRow(repetition, problem.metrics(result.x_final), result.status.value)


def run_scenario(config: ScenarioConfig, workers: int = 1) -> BenchReport:
    """Run every repetition of ``config``; rows come back in repetition order."""
    n = len(config.problem.block_sizes) - 1
    report = BenchReport(config.name, config.mda.label, n)
    reps = range(config.repetitions)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            report.rows = list(pool.map(lambda r: _run_repetition(config, r), reps))
    else:
        report.rows = [_run_repetition(config, r) for r in reps]
    return report


@dataclass
class Comparison:
    reports: list[BenchReport]

    def ratios(self) -> np.ndarray:
        """``ratios[i, j]`` = mean n_h_mean of variant ``i`` over that of ``j``."""
        means = np.array([r.mean("n_h_mean") for r in self.reports])
        return means[:, None] / means[None, :]


def compare_algorithms(config: ScenarioConfig, variants, workers: int = 1) -> Comparison:
    """Run ``config`` once per MDA variant with shared seeds."""
    variants = list(variants)
    if len(variants) < 2:
        raise ConfigurationError("a comparison needs at least two variants")
    return Comparison([run_scenario(config.replace(mda=v), workers) for v in variants])


def _format_cell(mean: float, std: float) -> str:
    def fmt(v):
        return "n/a" if math.isnan(v) else f"{v:.1f}"

    return f"{fmt(mean)} ({fmt(std)})"


def emit_report(report, fmt: str = "csv") -> str:
    """CSV of raw repetition rows or a markdown "mean (std)" table.

    ``report`` may be a :class:`BenchReport`, a :class:`Comparison` or a list
    of reports sharing the same number of disciplines.
    """
    if isinstance(report, Comparison):
        reports = report.reports
    elif isinstance(report, BenchReport):
        reports = [report]
    else:
        reports = list(report)
    if not reports:
        raise ConfigurationError("nothing to emit")
    names = reports[0].metric_names
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["scenario", "algorithm", "repetition"] + names)
        for rep in reports:
            for row in rep.rows:
                values = metric_values(row.metrics) if row.metrics else [math.nan] * len(names)
                writer.writerow([rep.scenario, rep.algorithm, row.repetition] + [repr(float(v)) for v in values])
        return buffer.getvalue()
    if fmt in ("md", "markdown"):
        lines = [
            "| algorithm | " + " | ".join(names) + " |",
            "|" + "---|" * (len(names) + 1),
        ]
        for rep in reports:
            agg = rep.aggregate()
            label = rep.algorithm + (" (partial)" if rep.partial else "")
            cells = [_format_cell(*agg[n]) for n in names]
            lines.append(f"| {label} | " + " | ".join(cells) + " |")
        if isinstance(report, Comparison):
            lines += ["", "| n_h_mean ratio | " + " | ".join(r.algorithm for r in reports) + " |"]
            lines.append("|" + "---|" * (len(reports) + 1))
            for rep, row in zip(reports, report.ratios()):
                lines.append(f"| {rep.algorithm} | " + " | ".join(f"{v:.3f}" for v in row) + " |")
        return "\n".join(lines) + "\n"
    raise ConfigurationError(f"unknown report format {fmt!r}")

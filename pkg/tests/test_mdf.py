import logging

import numpy as np
import pydot
import pytest

from conftest import central_fd, hand_system
from mdogen.coupling import CouplingSpace, LinearCoupling, LinkFunction, sample_linear_coupling, sample_sigmoid_coupling
from mdogen.errors import DivergenceError, EmptyDomainError
from mdogen.mda import MdaSettings
from mdogen.mdf import (
    FAILURE_PENALTY,
    MdoProblem,
    build_problem,
    equivalence_report,
    export_coupling_graph,
    mdf_constraint_jacobian,
    mdf_constraints,
    mdf_objective,
)
from mdogen.problems import Constraint, DesignPartition, ReferenceProblem, make_rosenbrock_problem, rosenbrock_gradient, rosenbrock_value

TIGHT = MdaSettings(tolerance=1e-13, max_iterations=1000)


def problem(link="linear-explicit", sizes=(1, 1, 1), seed=0, mda=TIGHT, family="linear"):
    ref = make_rosenbrock_problem(sizes)
    sampler = sample_linear_coupling if family == "linear" else sample_sigmoid_coupling
    return build_problem(ref, sampler(seed, ref.partition), link, mda)


class TestObjective:
    @pytest.mark.parametrize("link", ["additive", "exponential", "linear-explicit"])
    def test_reference_values(self, link):
        p = problem(link)
        assert mdf_objective(p, np.ones(3)) == pytest.approx(0.0, abs=1e-20)
        assert mdf_objective(p, np.zeros(3)) == pytest.approx(2.0, abs=1e-10)

    @pytest.mark.parametrize("link", ["additive", "exponential", "linear-explicit"])
    def test_equals_reference_objective(self, link):
        p = problem(link, sizes=(2, 1, 2, 1), seed=4)
        rng = np.random.default_rng(0)
        for x in rng.uniform(-2, 2, (20, 6)):
            assert mdf_objective(p, x) == pytest.approx(rosenbrock_value(x), rel=1e-9, abs=1e-9)

    def test_loose_tolerance_leaves_a_gap(self):
        gaps = []
        for tol in (1.0, 1e-2, 1e-4, 1e-6, 1e-8):
            p = problem("additive", seed=3, mda=MdaSettings(tolerance=tol))
            gaps.append(abs(mdf_objective(p, np.zeros(3)) - 2.0))
        assert gaps[0] > 1e-4 and gaps[1] > 1e-4
        assert all(a > b for a, b in zip(gaps, gaps[1:]))

    def test_sigmoid_coupling(self):
        p = problem("additive", sizes=(1, 2, 1), family="sigmoid", seed=2)
        x = np.array([0.3, -0.5, 1.2, 0.8])
        assert mdf_objective(p, x) == pytest.approx(rosenbrock_value(x), abs=1e-9)


class TestGradient:
    def test_vanishes_at_solution(self):
        for link in ("additive", "exponential", "linear-explicit"):
            np.testing.assert_allclose(problem(link).gradient(np.ones(3)), 0.0, atol=1e-9)

    def test_explicit_link_gives_reference_gradient(self):
        p = problem("linear-explicit", sizes=(1, 2, 2), seed=7)
        rng = np.random.default_rng(1)
        for x in rng.uniform(-2, 2, (20, 5)):
            np.testing.assert_allclose(p.gradient(x), rosenbrock_gradient(x), rtol=1e-9, atol=1e-9)

    @pytest.mark.parametrize(
        "link, family",
        [("additive", "linear"), ("exponential", "linear"), ("additive", "sigmoid"), ("exponential", "sigmoid")],
    )
    def test_matches_finite_differences(self, link, family):
        p = problem(link, sizes=(1, 2, 1), seed=5, family=family, mda=MdaSettings(tolerance=1e-12, max_iterations=2000))
        rng = np.random.default_rng(2)
        for x in rng.uniform(-2, 2, (5, 4)):
            g = p.gradient(x)
            fd = central_fd(p.objective, x, 1e-6)
            assert np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd))) <= 1e-4

    def test_counters(self):
        p = problem("additive", sizes=(1, 1, 1, 1))
        p.gradient(np.zeros(4))
        p.gradient(np.ones(4))
        assert p.counters["f"].gradients == 2
        assert p.counters["L"].gradients == 2
        assert [p.counters[f"h{i}"].gradients for i in (1, 2, 3)] == [2, 2, 2]


class TestCounting:
    def test_function_and_link_counted_together(self):
        p = problem("additive", mda=MdaSettings())
        rng = np.random.default_rng(0)
        for x in rng.uniform(-2, 2, (7, 3)):
            p.objective(x)
        assert p.counters["f"].values == p.counters["L"].values == 7

    def test_mda_cached_for_repeated_point(self):
        p = problem("additive", mda=MdaSettings())
        p.objective(np.zeros(3))
        n_h = p.counters["h1"].values
        p.objective(np.zeros(3))
        p.gradient(np.zeros(3))
        assert p.counters["h1"].values == n_h
        assert p.counters["f"].values == 2

    def test_metrics_and_reset(self):
        p = problem("additive", mda=MdaSettings())
        p.objective(np.zeros(3))
        m = p.metrics(np.zeros(3))
        assert m.delta_x == pytest.approx(np.sqrt(3))
        assert m.delta_f == pytest.approx(2.0)
        assert (m.n_f, m.n_L) == (1, 1)
        assert m.n_h_mean == m.n_h[0] > 0
        assert p.counters["f"].values == 1  # metrics do not count
        p.reset()
        assert all(r.values == r.gradients == 0 for r in p.counters.values())

    def test_unconverged_mda_warns(self, caplog):
        p = problem("additive", mda=MdaSettings(max_iterations=2))
        with caplog.at_level(logging.WARNING):
            p.objective(np.zeros(3))
        assert "MDA stopped" in caplog.text


class TestEquivalenceReport:
    def test_unbounded(self):
        summary = equivalence_report(problem("additive", sizes=(1, 2, 1, 1), seed=9), 50, seed=0)
        assert summary.n_samples == summary.n_attempts == 50
        assert summary.max_objective_gap <= 1e-8
        assert summary.max_link_gap <= 1e-9

    def test_box_filters_samples(self):
        ref = make_rosenbrock_problem((1, 1, 1))
        coupling = hand_system(box=(-1.0, 1.0))
        report = equivalence_report(MdoProblem(ref, coupling, LinkFunction.linear_explicit(coupling), TIGHT), 20, seed=1)
        assert report.n_samples == 20
        assert report.n_attempts > 20

    def test_empty_domain(self):
        ref = make_rosenbrock_problem((1, 1, 1))
        part = ref.partition
        coupling = LinearCoupling.from_blocks(part, CouplingSpace.box((1, 1), -1.0, 1.0), [50, 50], [0, 0], [0, 0], {})
        with pytest.raises(EmptyDomainError):
            equivalence_report(MdoProblem(ref, coupling, LinkFunction.additive()), 5, seed=0)

    def test_needs_samples(self):
        with pytest.raises(ValueError):
            equivalence_report(problem(), 0, seed=0)


class TestGraph:
    def test_nodes_and_edges(self):
        p = problem(sizes=(1, 1, 1))
        dot = export_coupling_graph(p)
        graph, = pydot.graph_from_dot_data(dot)
        shapes = {n.get_name(): n.get_shape() for n in graph.get_nodes()}
        assert shapes == {
            "x0": "box", "x1": "box", "x2": "box",
            "y1": "diamond", "y2": "diamond",
            "h1": "circle", "h2": "circle", "L": "circle", "f": "circle",
        }
        edges = {(e.get_source(), e.get_destination()) for e in graph.get_edges()}
        assert {("x0", "h1"), ("x1", "h1"), ("h1", "y1"), ("y2", "h1"), ("h2", "h1"), ("L", "f")} <= edges
        assert ("x2", "h1") not in edges
        bold = [e for e in graph.get_edges() if e.get("penwidth") == "3"]
        assert {(e.get_source(), e.get_destination()) for e in bold} == {("h1", "h2"), ("h2", "h1")}

    def test_zero_block_has_no_edge(self):
        ref = make_rosenbrock_problem((1, 1, 1))
        coupling = LinearCoupling.from_blocks(ref.partition, CouplingSpace((1, 1)), [1, 1], [1, 1], [1, 1], {(2, 1): 0.5})
        graph, = pydot.graph_from_dot_data(export_coupling_graph(MdoProblem(ref, coupling, LinkFunction.additive())))
        edges = {(e.get_source(), e.get_destination()) for e in graph.get_edges()}
        assert ("y1", "h2") in edges and ("h1", "h2") in edges
        assert ("y2", "h1") not in edges and ("h2", "h1") not in edges

    def test_no_shared_block(self):
        dot = export_coupling_graph(problem(sizes=(0, 1, 1)))
        assert "x0" not in dot


class TestFailures:
    def divergent(self):
        ref = make_rosenbrock_problem((1, 1, 1))
        coupling = LinearCoupling.from_blocks(ref.partition, CouplingSpace((1, 1)), [1, 1], [0, 0], [0, 0], {(1, 2): 1e200, (2, 1): 1e200})
        return MdoProblem(ref, coupling, LinkFunction.additive(), MdaSettings(max_iterations=50))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_objective_raises(self):
        with pytest.raises(DivergenceError):
            self.divergent().objective(np.zeros(3))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_penalized_objective(self):
        value = self.divergent().penalized_objective(np.zeros(3))
        assert np.isfinite(value)
        assert FAILURE_PENALTY < value <= 2 * FAILURE_PENALTY

    def test_partition_mismatch(self):
        ref = make_rosenbrock_problem((1, 1, 1))
        coupling = sample_linear_coupling(0, DesignPartition.uniform((1, 2, 1)))
        with pytest.raises(ValueError):
            MdoProblem(ref, coupling, LinkFunction.additive())


class TestConstraints:
    def test_composition(self):
        part = DesignPartition.uniform((1, 1, 1))
        cons = [Constraint(lambda x: np.array([x[0] + 2 * x[2] - 3.0]), 0, lambda x: np.array([[1.0, 0.0, 2.0]]))]
        ref = ReferenceProblem(rosenbrock_value, rosenbrock_gradient, part, np.ones(3), 0.0, cons)
        coupling = sample_linear_coupling(1, part)
        p = MdoProblem(ref, coupling, LinkFunction.additive(), TIGHT)
        assert "g" in p.counters
        x = np.array([0.5, -1.0, 0.25])
        np.testing.assert_allclose(mdf_constraints(p, x), [-2.0], atol=1e-10)
        np.testing.assert_allclose(mdf_constraint_jacobian(p, x), central_fd(p.constraints, x), atol=1e-6)
        assert p.counters["g"].values == 1 + 2 * 3
        assert p.counters["g"].gradients == 1

import csv

import numpy as np
import pytest

from conftest import hand_system
from scipy.optimize import fsolve

from mdogen.coupling import (
    CouplingSpace,
    LinearCoupling,
    SigmoidCoupling,
    sample_linear_coupling,
    sample_sigmoid_coupling,
    solve_couplings_exact,
)
from mdogen.errors import ConfigurationError, DivergenceError
from mdogen.mda import (
    Acceleration,
    Algorithm,
    InitialGuess,
    MdaSettings,
    initial_coupling,
    mpe_accelerate,
    normalized_residual,
    run_mda,
)
from mdogen.problems import DesignPartition

X0 = np.zeros(3)


def iterates(coupling, algorithm, n):
    out = []
    for k in range(1, n + 1):
        out.append(run_mda(coupling, X0, MdaSettings(algorithm=algorithm, max_iterations=k, tolerance=1e-300)).y)
    return out


class TestSweeps:
    def test_jacobi_iterates(self, example_system):
        np.testing.assert_allclose(iterates(example_system, "jacobi", 3), [[1, 1], [1.5, 1.5], [1.75, 1.75]])

    def test_gauss_seidel_iterates(self, example_system):
        np.testing.assert_allclose(iterates(example_system, "gauss-seidel", 2), [[1, 1.5], [1.75, 1.875]])

    @pytest.mark.parametrize("algorithm", list(Algorithm))
    def test_converges_to_exact_solution(self, example_system, algorithm):
        result = run_mda(example_system, X0, MdaSettings(algorithm=algorithm, tolerance=1e-12))
        assert result.converged
        np.testing.assert_allclose(result.y, [2.0, 2.0], atol=1e-11)
        assert result.residual_history[-1] <= 1e-12

    def test_constant_sigmoid_converges_in_one_sweep(self):
        part = DesignPartition.uniform((1, 1, 1))
        inner = LinearCoupling(part, CouplingSpace((1, 1)), [0, 0], np.zeros((2, 3)), np.zeros((2, 2)))
        coupling = SigmoidCoupling(inner, CouplingSpace.box((1, 1), -1.0, 1.0))
        result = run_mda(coupling, X0)
        assert result.converged
        assert result.iterations == 1
        np.testing.assert_array_equal(result.y, [0.0, 0.0])

    def test_max_iterations_not_converged(self, example_system):
        result = run_mda(example_system, X0, MdaSettings(max_iterations=3))
        assert not result.converged
        assert result.iterations == 3
        assert len(result.residual_history) == 3


class TestResidual:
    def test_examples(self):
        assert normalized_residual([1.0, 1.0], [1.0, 1.5], [0.0, 0.0]) == 0.5
        assert normalized_residual([0.0], [3.0], [0.5]) == 3.0
        assert normalized_residual([0.0, 0.0], [3.0, 4.0], [6.0, 8.0]) == 0.5

    def test_history_matches_iterates(self, example_system):
        result = run_mda(example_system, X0, MdaSettings(algorithm="jacobi", max_iterations=3, tolerance=1e-300))
        np.testing.assert_allclose(result.residual_history, [np.sqrt(2), np.sqrt(0.5), np.sqrt(0.125)])


class TestMpe:
    def test_linear_sequence_window(self):
        window = [[0, 0], [1, 1], [1.5, 1.5], [1.75, 1.75]]
        np.testing.assert_allclose(mpe_accelerate(window), [2.0, 2.0])

    def test_scalar_geometric_sequence(self):
        assert mpe_accelerate([[1.0], [1.5], [1.75]])[0] == pytest.approx(2.0)

    def test_constant_sequence(self):
        np.testing.assert_array_equal(mpe_accelerate([[3.0, 1.0]] * 4), [3.0, 1.0])

    def test_exact_for_linear_iteration(self):
        # a 2x2 affine iteration has a degree-2 minimal polynomial
        rng = np.random.default_rng(0)
        M = rng.uniform(-0.4, 0.4, (2, 2))
        b = rng.uniform(-1, 1, 2)
        seq = [np.zeros(2)]
        for _ in range(3):
            seq.append(M @ seq[-1] + b)
        np.testing.assert_allclose(mpe_accelerate(seq), np.linalg.solve(np.eye(2) - M, b), atol=1e-10)

    def test_needs_three_iterates(self):
        with pytest.raises(ConfigurationError):
            mpe_accelerate([[0.0], [1.0]])

    def test_accelerated_run_converges(self, example_system):
        result = run_mda(example_system, X0, MdaSettings(acceleration="mpe", mpe_window=3, tolerance=1e-12))
        assert result.converged
        np.testing.assert_allclose(result.y, [2.0, 2.0], atol=1e-10)


class TestSettings:
    def test_strings_become_enums(self):
        s = MdaSettings(algorithm="jacobi", acceleration="mpe", initial_guess="zeros")
        assert s.algorithm is Algorithm.JACOBI
        assert s.acceleration is Acceleration.MPE
        assert s.initial_guess is InitialGuess.ZEROS
        assert s.label == "J+MPE"
        assert MdaSettings().label == "GS"

    @pytest.mark.parametrize(
        "kwargs",
        [dict(algorithm="newton"), dict(tolerance=0.0), dict(max_iterations=0), dict(mpe_window=1), dict(initial_guess="given")],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            MdaSettings(**kwargs)

    def test_initial_guesses(self):
        box = hand_system(box=(0.0, 4.0))
        np.testing.assert_array_equal(initial_coupling(box, MdaSettings()), [2.0, 2.0])
        np.testing.assert_array_equal(initial_coupling(box, MdaSettings(initial_guess="zeros")), [0.0, 0.0])
        given = MdaSettings(initial_guess="given", given_y=(1.0, -1.0))
        np.testing.assert_array_equal(initial_coupling(box, given), [1.0, -1.0])
        with pytest.raises(ConfigurationError):
            initial_coupling(hand_system(), MdaSettings(initial_guess="box-midpoint"))
        with pytest.raises(ConfigurationError):
            initial_coupling(box, MdaSettings(initial_guess="given", given_y=(1.0,)))


def _random_case(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    sizes = (int(rng.integers(0, 3)),) + tuple(int(v) for v in rng.integers(1, 4, n))
    part = DesignPartition.uniform(sizes)
    return sample_linear_coupling(seed, part), rng.uniform(-2, 2, part.dim)


class TestAgainstOracle:
    @pytest.mark.parametrize("algorithm", list(Algorithm))
    def test_matches_direct_solve(self, algorithm):
        settings = MdaSettings(algorithm=algorithm, tolerance=1e-12, max_iterations=2000)
        for seed in range(100):
            coupling, x = _random_case(seed)
            result = run_mda(coupling, x, settings)
            assert result.converged
            oracle = np.linalg.solve(np.eye(coupling.space.dim) - coupling.C_off, coupling.a - coupling.B @ x)
            np.testing.assert_allclose(result.y, oracle, atol=1e-9)
            np.testing.assert_allclose(result.y, solve_couplings_exact(coupling, x), atol=1e-9)

    def test_gauss_seidel_not_slower_for_nonnegative_coupling(self):
        part = DesignPartition.uniform((1, 1, 1, 1, 1))
        for seed in range(50):
            c = sample_linear_coupling(seed, part)
            coupling = LinearCoupling(part, c.space, c.a, c.B, np.abs(c.C_off))
            x = np.random.default_rng(seed).uniform(-2, 2, part.dim)
            sweeps = {
                algo: run_mda(coupling, x, MdaSettings(algorithm=algo, tolerance=1e-10, max_iterations=5000)).iterations
                for algo in Algorithm
            }
            assert sweeps[Algorithm.GAUSS_SEIDEL] <= sweeps[Algorithm.JACOBI]

    @pytest.mark.parametrize("algorithm", list(Algorithm))
    def test_mpe_reduces_sweeps(self, algorithm):
        part = DesignPartition.uniform((1, 1, 1))
        wins = 0
        for seed in range(50):
            coupling = sample_linear_coupling(seed, part)
            x = np.random.default_rng(seed).uniform(-2, 2, 3)
            plain = run_mda(coupling, x, MdaSettings(algorithm=algorithm)).iterations
            fast = run_mda(coupling, x, MdaSettings(algorithm=algorithm, acceleration="mpe", mpe_window=3)).iterations
            wins += fast < plain
        assert wins >= 45


class TestBookkeeping:
    @pytest.mark.parametrize("algorithm", list(Algorithm))
    @pytest.mark.parametrize("acceleration", list(Acceleration))
    def test_one_evaluation_per_discipline_per_sweep(self, algorithm, acceleration):
        coupling = sample_linear_coupling(2, DesignPartition.uniform((1, 2, 1, 1)))
        result = run_mda(coupling, np.ones(5), MdaSettings(algorithm=algorithm, acceleration=acceleration))
        assert result.discipline_eval_counts == [result.iterations] * 3

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self):
        part = DesignPartition.uniform((1, 1, 1))
        coupling = LinearCoupling.from_blocks(part, CouplingSpace((1, 1)), [1, 1], [0, 0], [0, 0], {(1, 2): 1e200, (2, 1): 1e200})
        with pytest.raises(DivergenceError) as info:
            run_mda(coupling, X0, MdaSettings(max_iterations=50))
        assert len(info.value.history) >= 2
        np.testing.assert_array_equal(info.value.x, X0)

    def test_residual_csv(self, example_system, tmp_path):
        result = run_mda(example_system, X0, MdaSettings(algorithm="jacobi", max_iterations=3, tolerance=1e-300))
        path = tmp_path / "residuals.csv"
        result.write_residual_history(path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["iteration", "residual"]
        assert [int(r[0]) for r in rows[1:]] == [1, 2, 3]
        assert [float(r[1]) for r in rows[1:]] == result.residual_history

    def test_sigmoid_oracle(self):
        coupling = sample_sigmoid_coupling(6, DesignPartition.uniform((1, 1, 2, 1)))
        x = np.array([0.5, -1.0, 1.0, 0.2, -0.3])
        result = run_mda(coupling, x, MdaSettings(tolerance=1e-13))
        oracle = fsolve(lambda y: coupling.evaluate(x, y) - y, np.zeros(4), xtol=1e-14)
        np.testing.assert_allclose(result.y, oracle, atol=1e-10)

import io as io_module
import itertools
import math

import numpy as np
import pytest

from geomfit.mincut import (
    ProblemGraph,
    build_problem_graph,
    dump_problem_graph,
    energy_of,
    gaussian_kernel,
    min_cut,
)
from geomfit.neighbors import NeighborGraph


def random_problem(rng: np.random.Generator, max_nodes: int = 16) -> ProblemGraph:
    n = int(rng.integers(2, max_nodes + 1))
    all_pairs = list(itertools.combinations(range(n), 2))
    m = int(rng.integers(0, len(all_pairs) + 1))
    sel = rng.choice(len(all_pairs), size=m, replace=False) if m else np.empty(0, dtype=int)
    edges = np.array([all_pairs[i] for i in sel], dtype=np.int64).reshape(-1, 2)
    return ProblemGraph(
        cost_inlier=rng.uniform(0, 1, n),
        cost_outlier=rng.uniform(0, 1, n),
        edges=edges,
        penalties=rng.uniform(0, 1, m),
    )


def brute_force_minimum(problem: ProblemGraph):
    best_energy = math.inf
    best_labels = None
    for bits in itertools.product([False, True], repeat=problem.n_nodes):
        labels = np.array(bits)
        energy = energy_of(problem, labels)
        if energy < best_energy:
            best_energy = energy
            best_labels = labels
    return best_energy, best_labels


def line_graph(n: int, weight: float = 1.0) -> NeighborGraph:
    edges = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    return NeighborGraph(n, edges, np.full(n - 1, weight), kind="line")


class TestKernelCosts:
    def test_zero_residual(self):
        g = build_problem_graph([0.0], 1.0, NeighborGraph(1, np.empty((0, 2), dtype=np.int64), [], "x"), 0.5)
        assert g.cost_inlier[0] == pytest.approx(0.0)
        assert g.cost_outlier[0] == pytest.approx(1.0)

    def test_huge_residual_truncates(self):
        g = build_problem_graph([np.inf, 1e6], 1.0,
                                NeighborGraph(2, np.empty((0, 2), dtype=np.int64), [], "x"), 0.5)
        assert np.all(g.cost_inlier == 1.0)
        assert np.all(g.cost_outlier == 0.0)

    def test_kernel_at_threshold(self):
        # closed form: exp(-eps^2 / (2 eps^2)) = exp(-1/2)
        g = build_problem_graph([2.0], 2.0, NeighborGraph(1, np.empty((0, 2), dtype=np.int64), [], "x"), 0.5)
        assert g.cost_outlier[0] == pytest.approx(math.exp(-0.5))
        assert g.cost_inlier[0] == pytest.approx(1.0 - math.exp(-0.5))

    def test_truncation_boundary(self):
        eps = 0.5
        k = gaussian_kernel(np.array([3 * eps - 1e-12, 3 * eps + 1e-12]), eps)
        assert k[0] > 0.0
        assert k[1] == 0.0

    def test_negative_residual_rejected(self):
        with pytest.raises(ValueError):
            build_problem_graph([-0.1], 1.0, NeighborGraph(1, np.empty((0, 2), dtype=np.int64), [], "x"), 0.5)

    def test_penalties_scale_with_weight(self):
        graph = line_graph(3, weight=2.0)
        g = build_problem_graph([0.0, 0.0, 0.0], 1.0, graph, 0.25)
        assert np.allclose(g.penalties, 0.5)


class TestMinCut:
    def test_lambda_zero_is_per_node_argmin(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(1, 20))
            residuals = rng.uniform(0, 3, n)
            graph = NeighborGraph(n, np.empty((0, 2), dtype=np.int64), [], "x")
            problem = build_problem_graph(residuals, 1.0, graph, 0.0)
            result = min_cut(problem)
            kernel = gaussian_kernel(residuals, 1.0)
            expected = kernel >= 0.5  # ties toward inlier
            assert np.array_equal(result.labels, expected)

    def test_three_node_chain_example(self):
        # unary (inlier, outlier) = (0,1), (0.6,0.4), (0,1); penalty 0.3
        problem = ProblemGraph(
            cost_inlier=[0.0, 0.6, 0.0],
            cost_outlier=[1.0, 0.4, 1.0],
            edges=np.array([[0, 1], [1, 2]]),
            penalties=[0.3, 0.3],
        )
        expected_energy, expected_labels = brute_force_minimum(problem)
        result = min_cut(problem)
        assert result.energy == pytest.approx(0.6)
        assert result.energy == pytest.approx(expected_energy)
        assert np.all(result.labels)  # all-inlier beats paying two penalties
        assert np.array_equal(result.labels, expected_labels)

    def test_exhaustive_oracle_small_graphs(self):
        rng = np.random.default_rng(1234)
        for _ in range(120):
            problem = random_problem(rng, max_nodes=12)
            result = min_cut(problem)
            best_energy, _ = brute_force_minimum(problem)
            assert abs(result.energy - best_energy) < 1e-9

    def test_energy_self_consistent(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            problem = random_problem(rng, max_nodes=14)
            result = min_cut(problem)
            assert result.energy == pytest.approx(energy_of(problem, result.labels), abs=1e-12)

    def test_monotone_in_unary_cost(self):
        rng = np.random.default_rng(99)
        for _ in range(30):
            problem = random_problem(rng, max_nodes=10)
            base = min_cut(problem).energy
            node = int(rng.integers(problem.n_nodes))
            bumped_inlier = problem.cost_inlier.copy()
            bumped_inlier[node] += float(rng.uniform(0.1, 1.0))
            bumped = ProblemGraph(bumped_inlier, problem.cost_outlier, problem.edges, problem.penalties)
            assert min_cut(bumped).energy >= base - 1e-12

    def test_tie_breaks_toward_inlier(self):
        problem = ProblemGraph(
            cost_inlier=[0.5, 0.5],
            cost_outlier=[0.5, 0.5],
            edges=np.empty((0, 2), dtype=np.int64),
            penalties=[],
        )
        result = min_cut(problem)
        assert np.all(result.labels)

    def test_empty_graph(self):
        problem = ProblemGraph([], [], np.empty((0, 2), dtype=np.int64), [])
        result = min_cut(problem)
        assert result.labels.shape == (0,)
        assert result.energy == 0.0

    def test_smoothing_flips_isolated_outlier(self):
        # a point with a mild residual surrounded by perfect neighbors gets
        # pulled to the inlier side once the penalty outweighs its unary gap
        residuals = np.array([0.0, 1.4, 0.0, 0.0])
        graph = NeighborGraph(4, np.array([[0, 1], [1, 2], [1, 3]]), np.ones(3), "x")
        loose = min_cut(build_problem_graph(residuals, 1.0, graph, 0.0))
        tight = min_cut(build_problem_graph(residuals, 1.0, graph, 0.9))
        assert not loose.labels[1]
        assert tight.labels[1]


class TestDump:
    def test_dump_format(self):
        problem = ProblemGraph([0.25], [0.75], np.empty((0, 2), dtype=np.int64), [])
        buf = io_module.StringIO()
        dump_problem_graph(problem, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "3"  # one data node plus source and sink
        assert lines[1].split() == ["1", "0", "0.75"]
        assert lines[2].split() == ["0", "2", "0.25"]

    def test_dump_includes_penalty_edges(self):
        problem = ProblemGraph([0.1, 0.2], [0.9, 0.8], np.array([[0, 1]]), [0.3])
        buf = io_module.StringIO()
        dump_problem_graph(problem, buf)
        assert buf.getvalue().splitlines()[-1].split() == ["0", "1", "0.3"]

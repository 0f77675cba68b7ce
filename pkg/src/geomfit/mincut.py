"""Binary inlier/outlier labeling by exact min-cut.

The energy is a per-node unary term plus a Potts penalty on neighbor-graph
edges with differing labels.  Unaries come from a truncated Gaussian kernel
of the model residuals: cost_outlier(p) = K(r_p), cost_inlier(p) = 1 - K(r_p)
with K(r) = exp(-r^2 / (2 eps^2)) and K = 0 beyond 3 eps.  The energy is
submodular, so an s-t max-flow gives the global minimum; ties are resolved
toward the inlier label by a deterministic post-sweep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .neighbors import NeighborGraph

_RESIDUAL_EPS = 1e-12  # residual capacity below this counts as saturated


@dataclass(frozen=True)
class ProblemGraph:
    cost_inlier: np.ndarray   # (n,) >= 0
    cost_outlier: np.ndarray  # (n,) >= 0
    edges: np.ndarray         # (m, 2) int
    penalties: np.ndarray     # (m,) >= 0

    def __post_init__(self):
        ci = np.asarray(self.cost_inlier, dtype=float).reshape(-1)
        co = np.asarray(self.cost_outlier, dtype=float).reshape(-1)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        pen = np.asarray(self.penalties, dtype=float).reshape(-1)
        if ci.shape != co.shape:
            raise ValueError("unary cost arrays must have equal length")
        if not (np.all(np.isfinite(ci)) and np.all(np.isfinite(co))):
            raise ValueError("unary costs must be finite")
        if np.any(ci < 0.0) or np.any(co < 0.0):
            raise ValueError("unary costs must be non-negative")
        if edges.shape[0] != pen.shape[0]:
            raise ValueError("edge and penalty counts differ")
        if edges.size and (edges.min() < 0 or edges.max() >= ci.shape[0]):
            raise ValueError("edge endpoint out of range")
        if np.any(pen < 0.0) or not np.all(np.isfinite(pen)):
            raise ValueError("penalties must be finite and non-negative")
        for name, arr in (("cost_inlier", ci), ("cost_outlier", co), ("edges", edges), ("penalties", pen)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_nodes(self) -> int:
        return int(self.cost_inlier.shape[0])


@dataclass(frozen=True)
class CutResult:
    labels: np.ndarray  # (n,) bool, True = inlier
    energy: float

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=bool)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)


def gaussian_kernel(residuals: np.ndarray, threshold: float) -> np.ndarray:
    """Truncated Gaussian of the residuals: exp(-r^2/(2 eps^2)), 0 past 3 eps."""
    r = np.asarray(residuals, dtype=float)
    with np.errstate(invalid="ignore"):
        inside = r <= 3.0 * threshold
    k = np.zeros_like(r, dtype=float)
    k[inside] = np.exp(-(r[inside] ** 2) / (2.0 * threshold ** 2))
    return k


def build_problem_graph(residuals, threshold: float, graph: NeighborGraph, spatial_weight: float) -> ProblemGraph:
    """Assemble the labeling energy for one model from its residuals."""
    r = np.asarray(residuals, dtype=float).reshape(-1)
    if np.any(r < 0.0) or np.any(np.isnan(r)):
        raise ValueError("residuals must be non-negative")
    if not threshold > 0.0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    if not 0.0 <= spatial_weight <= 1.0:
        raise ValueError(f"spatial weight must be in [0, 1], got {spatial_weight}")
    if graph.n_nodes != r.shape[0]:
        raise ValueError(f"graph has {graph.n_nodes} nodes but {r.shape[0]} residuals given")
    k = gaussian_kernel(r, threshold)
    return ProblemGraph(
        cost_inlier=1.0 - k,
        cost_outlier=k,
        edges=graph.edges,
        penalties=spatial_weight * graph.weights,
    )


def energy_of(problem: ProblemGraph, labels: np.ndarray) -> float:
    """Evaluate the labeling energy (unary sum plus Potts penalties)."""
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    if labels.shape[0] != problem.n_nodes:
        raise ValueError("labeling length does not match node count")
    unary = float(np.sum(np.where(labels, problem.cost_inlier, problem.cost_outlier)))
    if problem.edges.size:
        differ = labels[problem.edges[:, 0]] != labels[problem.edges[:, 1]]
        unary += float(np.sum(problem.penalties[differ]))
    return unary


@njit(cache=True)
def _dinic_source_side(n_total, source, sink, adj_start, adj_edge, edge_to, cap):
    """Run Dinic max-flow on the residual network and return the set of nodes
    reachable from the source afterwards.  Edges come in (e, e^1) pairs."""
    eps = _RESIDUAL_EPS
    level = np.empty(n_total, np.int64)
    iter_ptr = np.empty(n_total, np.int64)
    queue = np.empty(n_total, np.int64)
    stack_v = np.empty(n_total + 1, np.int64)
    stack_e = np.empty(n_total + 1, np.int64)

    while True:
        level[:] = -1
        level[source] = 0
        queue[0] = source
        qh, qt = 0, 1
        while qh < qt:
            u = queue[qh]
            qh += 1
            for pos in range(adj_start[u], adj_start[u + 1]):
                e = adj_edge[pos]
                v = edge_to[e]
                if cap[e] > eps and level[v] < 0:
                    level[v] = level[u] + 1
                    queue[qt] = v
                    qt += 1
        if level[sink] < 0:
            break
        for u in range(n_total):
            iter_ptr[u] = adj_start[u]
        while True:
            sp = 0
            stack_v[0] = source
            found = False
            while sp >= 0:
                u = stack_v[sp]
                if u == sink:
                    found = True
                    break
                advanced = False
                pos = iter_ptr[u]
                stop = adj_start[u + 1]
                while pos < stop:
                    e = adj_edge[pos]
                    v = edge_to[e]
                    if cap[e] > eps and level[v] == level[u] + 1:
                        iter_ptr[u] = pos
                        stack_e[sp] = e
                        sp += 1
                        stack_v[sp] = v
                        advanced = True
                        break
                    pos += 1
                if not advanced:
                    iter_ptr[u] = stop
                    level[u] = -1  # dead end: retreat so no path retries it this phase
                    sp -= 1
            if not found:
                break
            bottleneck = 1e300
            for k in range(sp):
                e = stack_e[k]
                if cap[e] < bottleneck:
                    bottleneck = cap[e]
            for k in range(sp):
                e = stack_e[k]
                cap[e] -= bottleneck
                cap[e ^ 1] += bottleneck

    reach = np.zeros(n_total, np.bool_)
    reach[source] = True
    queue[0] = source
    qh, qt = 0, 1
    while qh < qt:
        u = queue[qh]
        qh += 1
        for pos in range(adj_start[u], adj_start[u + 1]):
            e = adj_edge[pos]
            v = edge_to[e]
            if cap[e] > eps and not reach[v]:
                reach[v] = True
                queue[qt] = v
                qt += 1
    return reach


def _flow_network(problem: ProblemGraph):
    """Directed edge arrays in (forward, reverse) pairs plus a CSR adjacency.

    Source-side membership after the cut means the inlier label, so the
    sink-side terminal edge carries cost_inlier and the source-side terminal
    edge carries cost_outlier.
    """
    n = problem.n_nodes
    m = problem.edges.shape[0]
    source, sink = n, n + 1
    n_dir = 4 * n + 2 * m
    edge_src = np.empty(n_dir, dtype=np.int64)
    edge_to = np.empty(n_dir, dtype=np.int64)
    cap = np.zeros(n_dir, dtype=np.float64)
    node_idx = np.arange(n, dtype=np.int64)

    edge_src[0:2 * n:2] = source
    edge_to[0:2 * n:2] = node_idx
    cap[0:2 * n:2] = problem.cost_outlier
    edge_src[1:2 * n:2] = node_idx
    edge_to[1:2 * n:2] = source

    edge_src[2 * n:4 * n:2] = node_idx
    edge_to[2 * n:4 * n:2] = sink
    cap[2 * n:4 * n:2] = problem.cost_inlier
    edge_src[2 * n + 1:4 * n:2] = sink
    edge_to[2 * n + 1:4 * n:2] = node_idx

    if m:
        p = problem.edges[:, 0]
        q = problem.edges[:, 1]
        edge_src[4 * n::2] = p
        edge_to[4 * n::2] = q
        cap[4 * n::2] = problem.penalties
        edge_src[4 * n + 1::2] = q
        edge_to[4 * n + 1::2] = p
        cap[4 * n + 1::2] = problem.penalties

    order = np.argsort(edge_src, kind="stable").astype(np.int64)
    counts = np.bincount(edge_src, minlength=n + 2)
    adj_start = np.zeros(n + 3, dtype=np.int64)
    np.cumsum(counts, out=adj_start[1:n + 3][:n + 2])
    return source, sink, adj_start, order, edge_to, cap


def min_cut(problem: ProblemGraph) -> CutResult:
    """Globally minimize the labeling energy; ties go to the inlier label."""
    n = problem.n_nodes
    if n == 0:
        return CutResult(np.zeros(0, dtype=bool), 0.0)
    source, sink, adj_start, adj_edge, edge_to, cap = _flow_network(problem)
    reach = _dinic_source_side(n + 2, source, sink, adj_start, adj_edge, edge_to, cap)
    labels = np.asarray(reach[:n], dtype=bool)
    labels = _sweep_ties_toward_inlier(problem, labels)
    return CutResult(labels, energy_of(problem, labels))


def _sweep_ties_toward_inlier(problem: ProblemGraph, labels: np.ndarray) -> np.ndarray:
    """Flip outlier nodes to inlier wherever that does not raise the energy."""
    labels = labels.copy()
    n = problem.n_nodes
    nbr_of = [[] for _ in range(n)]
    for (p, q), w in zip(problem.edges, problem.penalties):
        nbr_of[p].append((int(q), float(w)))
        nbr_of[q].append((int(p), float(w)))
    changed = True
    while changed:
        changed = False
        for p in range(n):
            if labels[p]:
                continue
            delta = problem.cost_inlier[p] - problem.cost_outlier[p]
            for q, w in nbr_of[p]:
                delta += -w if labels[q] else w
            if delta <= 0.0:
                labels[p] = True
                changed = True
    return labels


def dump_problem_graph(problem: ProblemGraph, stream) -> None:
    """Write the flow network as plain text for external verification.

    First line: total node count (data nodes, then source, then sink).
    Then one `u v cap` line per capacity: source->p with cost_outlier,
    p->sink with cost_inlier, and one symmetric line per penalty edge.
    """
    n = problem.n_nodes
    source, sink = n, n + 1
    stream.write(f"{n + 2}\n")
    for p in range(n):
        stream.write(f"{source} {p} {float(problem.cost_outlier[p])!r}\n")
    for p in range(n):
        stream.write(f"{p} {sink} {float(problem.cost_inlier[p])!r}\n")
    for (p, q), w in zip(problem.edges, problem.penalties):
        stream.write(f"{p} {q} {float(w)!r}\n")

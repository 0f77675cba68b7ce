"""Neighborhood systems used for spatial coherence.

Two constructions: an 8-connected image-grid graph over 2-D feature
locations, and a radius graph over 3-D landmarks.  Both produce the same
immutable edge-list structure with canonical i < j edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import as_ref_cur, as_xyz


@dataclass(frozen=True)
class NeighborGraph:
    n_nodes: int
    edges: np.ndarray    # (m, 2) int, i < j, unique
    weights: np.ndarray  # (m,) float, > 0
    kind: str            # construction descriptor

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if edges.shape[0] != weights.shape[0]:
            raise ValueError("edge and weight counts differ")
        if edges.size:
            if edges.min() < 0 or edges.max() >= self.n_nodes:
                raise ValueError("edge endpoint out of range")
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise ValueError("edges must satisfy i < j (no self-edges)")
            keys = edges[:, 0] * self.n_nodes + edges[:, 1]
            if np.unique(keys).size != keys.size:
                raise ValueError("duplicate edges")
            if np.any(weights <= 0.0):
                raise ValueError("edge weights must be positive")
        edges.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        if self.edges.size:
            adj[self.edges[:, 0], self.edges[:, 1]] = True
            adj[self.edges[:, 1], self.edges[:, 0]] = True
        return adj


class GridIndex:
    """Assigns 2-D pixel coordinates to cells of a regular image grid."""

    def __init__(self, image_size: tuple[float, float], cells_per_axis: int):
        width, height = float(image_size[0]), float(image_size[1])
        if width <= 0 or height <= 0:
            raise ValueError(f"image size must be positive, got {image_size}")
        if cells_per_axis < 1:
            raise ValueError(f"cells_per_axis must be >= 1, got {cells_per_axis}")
        self.width = width
        self.height = height
        self.cells_per_axis = int(cells_per_axis)

    def cell_of(self, xy: np.ndarray, ids=None) -> np.ndarray:
        """Map (n, 2) pixel coordinates to (n, 2) integer cell coordinates."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        out = (xy[:, 0] < 0) | (xy[:, 0] >= self.width) | (xy[:, 1] < 0) | (xy[:, 1] >= self.height)
        if np.any(out):
            bad = int(np.flatnonzero(out)[0])
            bad_id = ids[bad] if ids is not None else bad
            raise ValueError(
                f"point id {bad_id} at ({xy[bad, 0]:g}, {xy[bad, 1]:g}) lies outside "
                f"the {self.width:g}x{self.height:g} image"
            )
        c = self.cells_per_axis
        cx = np.minimum((xy[:, 0] * c / self.width).astype(np.int64), c - 1)
        cy = np.minimum((xy[:, 1] * c / self.height).astype(np.int64), c - 1)
        return np.column_stack([cx, cy])


def grid_graph(points, image_size, cells_per_axis: int, pairwise_weight: float = 1.0) -> NeighborGraph:
    """Connect points whose reference-frame locations fall in the same or
    8-connected neighboring grid cells."""
    try:
        ref, _ = as_ref_cur(points)
        ids = [c.id for c in points] if not isinstance(points, tuple) else None
    except (TypeError, AttributeError):
        ref = np.asarray(points, dtype=float).reshape(-1, 2)
        ids = None
    grid = GridIndex(image_size, cells_per_axis)
    cells = grid.cell_of(ref, ids=ids)
    n = ref.shape[0]

    # Bucket points per cell, then enumerate pairs within each cell and
    # between each cell and its 4 lexicographically-later neighbors (the
    # other 4 directions are covered symmetrically).
    buckets: dict[tuple[int, int], list[int]] = {}
    for idx in range(n):
        buckets.setdefault((int(cells[idx, 0]), int(cells[idx, 1])), []).append(idx)

    pairs = []
    later_neighbors = ((1, -1), (1, 0), (1, 1), (0, 1))
    for (cx, cy), members in buckets.items():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                pairs.append((members[a], members[b]))
        for dx, dy in later_neighbors:
            other = buckets.get((cx + dx, cy + dy))
            if not other:
                continue
            for i in members:
                for j in other:
                    pairs.append((i, j) if i < j else (j, i))

    edges = np.array(sorted(set(pairs)), dtype=np.int64).reshape(-1, 2)
    weights = np.full(edges.shape[0], float(pairwise_weight))
    return NeighborGraph(n, edges, weights, kind=f"grid[{cells_per_axis}x{cells_per_axis}]")


def radius_graph(points, radius: float, pairwise_weight: float = 1.0) -> NeighborGraph:
    """Connect 3-D points within `radius` of each other (boundary inclusive).

    Built with a k-d tree plus an exact distance post-filter, so the result
    equals the brute-force definition.
    """
    if not radius > 0.0:
        raise ValueError(f"radius must be positive, got {radius}")
    xyz = as_xyz(points)
    n = xyz.shape[0]
    if n < 2:
        return NeighborGraph(n, np.empty((0, 2), dtype=np.int64), np.empty(0), kind=f"radius[{radius:g}]")
    tree = cKDTree(xyz)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if pairs.size:
        # k-d tree boundary handling is tolerance-based; re-check exactly.
        dist = np.linalg.norm(xyz[pairs[:, 0]] - xyz[pairs[:, 1]], axis=1)
        pairs = pairs[dist <= radius]
        pairs = np.sort(pairs, axis=1)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        pairs = pairs[order]
    edges = pairs.astype(np.int64).reshape(-1, 2)
    weights = np.full(edges.shape[0], float(pairwise_weight))
    return NeighborGraph(n, edges, weights, kind=f"radius[{radius:g}]")


def subgraph(graph: NeighborGraph, node_ids: np.ndarray) -> NeighborGraph:
    """Restrict a graph to a subset of nodes, renumbering them 0..k-1 in the
    order given by `node_ids`."""
    node_ids = np.asarray(node_ids, dtype=np.int64)
    remap = np.full(graph.n_nodes, -1, dtype=np.int64)
    remap[node_ids] = np.arange(node_ids.size)
    if graph.edges.size:
        a = remap[graph.edges[:, 0]]
        b = remap[graph.edges[:, 1]]
        keep = (a >= 0) & (b >= 0)
        edges = np.column_stack([np.minimum(a[keep], b[keep]), np.maximum(a[keep], b[keep])])
        weights = graph.weights[keep]
    else:
        edges = np.empty((0, 2), dtype=np.int64)
        weights = np.empty(0)
    return NeighborGraph(int(node_ids.size), edges, weights, kind=graph.kind + "|sub")

"""Road networks, lattice generators and all-pairs shortest paths."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph


class NetworkError(ValueError):
    """Raised for malformed, disconnected or otherwise invalid networks."""


@dataclass(frozen=True, eq=False)
class RoadNetwork:
    """Directed road graph with integer travel times.

    Successor lists are stored in CSR form and always contain the node itself
    (the "stay put" move, which costs one time-step). Rows are sorted by
    node id, so row ``i`` is ``indices[indptr[i]:indptr[i + 1]]``.
    """

    node_count: int
    indptr: np.ndarray
    indices: np.ndarray
    travel_time: np.ndarray
    edges: tuple = field(repr=False, default=())

    @classmethod
    def from_edges(cls, node_count, edges):
        """Build from ``(origin, dest, travel_time)`` triples.

        Self-loops in ``edges`` are ignored; every node gets an implicit
        self entry with travel time 1. Duplicate edges keep the last weight.
        """
        node_count = int(node_count)
        if node_count < 1:
            raise NetworkError("network needs at least one node")
        weights: dict[tuple[int, int], int] = {}
        for u, v, w in edges:
            u, v, w = int(u), int(v), int(w)
            if not (0 <= u < node_count and 0 <= v < node_count):
                raise NetworkError(f"edge ({u}, {v}) references a missing node")
            if w < 1:
                raise NetworkError(f"non-positive travel time on edge ({u}, {v})")
            if u != v:
                weights[(u, v)] = w
        for i in range(node_count):
            weights[(i, i)] = 1
        keys = sorted(weights)
        rows = np.fromiter((k[0] for k in keys), dtype=np.int64, count=len(keys))
        indices = np.fromiter((k[1] for k in keys), dtype=np.int64, count=len(keys))
        tt = np.fromiter((weights[k] for k in keys), dtype=np.int64, count=len(keys))
        indptr = np.zeros(node_count + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        indptr = np.cumsum(indptr)
        real = tuple((u, v, weights[(u, v)]) for (u, v) in keys if u != v)
        net = cls(node_count, indptr, indices, tt, real)
        for arr in (indptr, indices, tt):
            arr.setflags(write=False)
        net.validate()
        return net

    @property
    def edge_count(self) -> int:
        """Number of directed edges between distinct nodes."""
        return len(self.edges)

    @property
    def degree(self) -> np.ndarray:
        """``n_i``: successor count including the node itself."""
        return np.diff(self.indptr)

    @property
    def max_degree(self) -> int:
        return int(self.degree.max())

    def row_of(self, slot):
        """Origin node of a CSR slot (vectorised)."""
        return np.searchsorted(self.indptr, slot, side="right") - 1

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def slot(self, i: int, j: int) -> int:
        """CSR position of edge ``i -> j``; raises KeyError when absent."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        k = lo + int(np.searchsorted(self.indices[lo:hi], j))
        if k >= hi or self.indices[k] != j:
            raise KeyError((i, j))
        return k

    def adjacency(self) -> sparse.csr_matrix:
        """Reciprocal travel times off the diagonal, ones on it."""
        data = 1.0 / self.travel_time.astype(float)
        return sparse.csr_matrix(
            (data, self.indices, self.indptr), shape=(self.node_count, self.node_count)
        )

    def weight_matrix(self) -> sparse.csr_matrix:
        """Travel times of real edges (self entries dropped)."""
        rows = self.row_of(np.arange(len(self.indices)))
        keep = rows != self.indices
        return sparse.csr_matrix(
            (self.travel_time[keep].astype(float), (rows[keep], self.indices[keep])),
            shape=(self.node_count, self.node_count),
        )

    def validate(self) -> None:
        n = self.node_count
        if np.any(self.travel_time < 1):
            raise NetworkError("non-positive travel time")
        if np.any(self.degree < 2) and n > 1:
            bad = int(np.flatnonzero(self.degree < 2)[0])
            raise NetworkError(f"disconnected: node {bad} has no outgoing edge")
        if not _strongly_connected(n, self.edges):
            raise NetworkError("disconnected: not every node is reachable from every node")


def _strongly_connected(n, edges) -> bool:
    if n == 1:
        return True
    fwd = [[] for _ in range(n)]
    bwd = [[] for _ in range(n)]
    for u, v, _ in edges:
        fwd[u].append(v)
        bwd[v].append(u)
    for adj in (fwd, bwd):
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    queue.append(v)
        if not seen.all():
            return False
    return True


def build_lattice(rows, cols, weight_low=1, weight_high=10, seed=None) -> RoadNetwork:
    """Square lattice with independent uniform integer weight per direction.

    Node ``r * cols + c`` sits at row ``r``, column ``c``.
    """
    if rows < 2 or cols < 2:
        raise ValueError("lattice dimensions must both be >= 2")
    if not 1 <= weight_low <= weight_high:
        raise ValueError("need 1 <= weight_low <= weight_high")
    rng = np.random.default_rng(seed)
    edges = []
    for r in range(rows):
        for c in range(cols):
            u = r * cols + c
            if c + 1 < cols:
                edges.append((u, u + 1))
                edges.append((u + 1, u))
            if r + 1 < rows:
                edges.append((u, u + cols))
                edges.append((u + cols, u))
    weights = rng.integers(weight_low, weight_high + 1, size=len(edges))
    return RoadNetwork.from_edges(
        rows * cols, [(u, v, int(w)) for (u, v), w in zip(edges, weights)]
    )


def load_network(path) -> RoadNetwork:
    """Parse the ``nodes N`` / ``edge u v w`` text format."""
    path = Path(path)
    node_count = None
    edges = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "nodes" and len(parts) == 2:
                    node_count = int(parts[1])
                elif parts[0] == "edge" and len(parts) == 4:
                    u, v, w = (int(p) for p in parts[1:])
                    if w < 1:
                        raise NetworkError(f"non-positive travel time {w}")
                    edges.append((u, v, w))
                else:
                    raise NetworkError(f"unrecognised record {line!r}")
            except (ValueError, NetworkError) as exc:
                raise NetworkError(f"{path}:{lineno}: {exc}") from None
    if node_count is None:
        raise NetworkError(f"{path}: missing 'nodes <N>' header")
    try:
        return RoadNetwork.from_edges(node_count, edges)
    except NetworkError as exc:
        raise NetworkError(f"{path}: {exc}") from None


def save_network(network: RoadNetwork, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"nodes {network.node_count}\n")
        for u, v, w in network.edges:
            fh.write(f"edge {u} {v} {w}\n")


@dataclass(frozen=True, eq=False)
class TravelTimeMatrix:
    """Shortest travel times ``d`` (with ``d[i, i] == 1``) and first hops.

    ``next_slot[i, dest]`` is the CSR slot of the edge ``i -> next_hop[i, dest]``;
    the simulation core routes with it directly.
    """

    d: np.ndarray
    next_hop: np.ndarray
    next_slot: np.ndarray

    def path(self, origin: int, dest: int) -> list[int]:
        nodes = [origin]
        while nodes[-1] != dest:
            nodes.append(int(self.next_hop[nodes[-1], dest]))
        return nodes


def all_pairs_shortest(network: RoadNetwork) -> TravelTimeMatrix:
    """Exact all-pairs travel times plus lowest-id next hops."""
    n = network.node_count
    dist = csgraph.dijkstra(network.weight_matrix(), directed=True)
    dist = np.rint(dist).astype(np.int64)
    next_hop = np.full((n, n), -1, dtype=np.int64)
    next_slot = np.full((n, n), -1, dtype=np.int64)
    for i in range(n):
        lo, hi = network.indptr[i], network.indptr[i + 1]
        # successors are sorted, so the first match is the lowest id
        for k in range(lo, hi):
            j = network.indices[k]
            if j == i:
                continue
            hit = (next_hop[i] < 0) & (network.travel_time[k] + dist[j] == dist[i])
            next_hop[i, hit] = j
            next_slot[i, hit] = k
        next_hop[i, i] = i
        next_slot[i, i] = network.slot(i, i)
    np.fill_diagonal(dist, 1)
    for arr in (dist, next_hop, next_slot):
        arr.setflags(write=False)
    return TravelTimeMatrix(dist, next_hop, next_slot)

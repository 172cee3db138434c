"""Commuter demand: generation probabilities, destinations and queues."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ENTROPY_BAND = (0.6, 0.8)
DEFAULT_QUEUE_CAP = 1_000_001


class DemandError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DemandPattern:
    """Stationary demand.

    Attributes:
        g: probability that one commuter appears at each node per time-step.
        M: row-stochastic destination matrix with a zero diagonal.
    """

    g: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        M = np.asarray(self.M, dtype=float)
        if g.ndim != 1 or M.shape != (g.size, g.size):
            raise DemandError("g must be (N,) and M must be (N, N)")
        if np.any(g < 0) or np.any(g > 1):
            raise DemandError("generation probabilities must lie in [0, 1]")
        if np.any(M < 0) or np.any(np.diag(M) != 0):
            raise DemandError("M must be non-negative with a zero diagonal")
        if not np.allclose(M.sum(axis=1), 1.0, atol=1e-9):
            raise DemandError("rows of M must sum to 1")
        g.setflags(write=False)
        M.setflags(write=False)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "M", M)

    @property
    def n_c(self) -> float:
        """Expected commuters per time-step."""
        return float(self.g.sum())

    @property
    def entropy(self) -> float:
        return normalized_entropy(self.g)


def normalized_entropy(g) -> float:
    """Shannon entropy of ``g / sum(g)`` divided by ``log(len(g))``."""
    g = np.asarray(g, dtype=float)
    total = g.sum()
    if total <= 0:
        raise ValueError("normalized_entropy needs a positive total")
    if g.size == 1:
        return 1.0
    p = g[g > 0] / total
    return float(-(p * np.log(p)).sum() / np.log(g.size))


def _scale_capped(raw, total):
    """Scale ``raw`` to sum to ``total`` with every entry capped at 1."""
    g = np.zeros_like(raw)
    free = np.ones(raw.size, dtype=bool)
    remaining = total
    while True:
        g[free] = raw[free] * remaining / raw[free].sum()
        over = free & (g > 1.0)
        if not over.any():
            return g
        g[over] = 1.0
        free &= ~over
        remaining = total - g[~free].sum()


def random_destinations(n, rng) -> np.ndarray:
    M = rng.random((n, n))
    np.fill_diagonal(M, 0.0)
    return M / M.sum(axis=1, keepdims=True)


def generate_random_demand(network, seed, n_c, band=ENTROPY_BAND, spread=2.0, max_tries=1000):
    """Random hotspot demand with normalised entropy inside ``band``.

    Raw weights are log-normal with log-scale ``spread``; they are redrawn
    until the entropy falls in the open band.
    """
    n = network.node_count
    if not 0 < n_c <= n:
        raise ValueError("n_c must lie in (0, node_count]")
    rng = np.random.default_rng(seed)
    lo, hi = band
    for _ in range(max_tries):
        raw = np.exp(spread * rng.standard_normal(n))
        g = _scale_capped(raw, float(n_c))
        if lo < normalized_entropy(g) < hi:
            return DemandPattern(g, random_destinations(n, rng))
    raise DemandError(f"no draw reached entropy band {band} after {max_tries} tries")


def load_demand(path, node_count=None) -> DemandPattern:
    """Parse ``g <node> <prob>`` and ``m <origin> <dest> <prob>`` lines.

    Rows of M are renormalised; nodes without any ``m`` line get uniform
    destinations over the other nodes.
    """
    path = Path(path)
    g_entries, m_entries = [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "g" and len(parts) == 3:
                    g_entries.append((int(parts[1]), float(parts[2])))
                elif parts[0] == "m" and len(parts) == 4:
                    m_entries.append((int(parts[1]), int(parts[2]), float(parts[3])))
                else:
                    raise ValueError(f"unrecognised record {line!r}")
            except ValueError as exc:
                raise DemandError(f"{path}:{lineno}: {exc}") from None
    ids = [i for i, _ in g_entries] + [x for i, j, _ in m_entries for x in (i, j)]
    n = node_count if node_count is not None else (max(ids) + 1 if ids else 0)
    if n < 2:
        raise DemandError(f"{path}: demand needs at least two nodes")
    g = np.zeros(n)
    M = np.zeros((n, n))
    for i, p in g_entries:
        g[i] = p
    for i, j, p in m_entries:
        if i != j:
            M[i, j] = p
    empty = M.sum(axis=1) <= 0
    M[empty] = 1.0
    np.fill_diagonal(M, 0.0)
    M /= M.sum(axis=1, keepdims=True)
    return DemandPattern(g, M)


def save_demand(demand: DemandPattern, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for i, p in enumerate(demand.g):
            fh.write(f"g {i} {float(p)!r}\n")
        for i, j in zip(*np.nonzero(demand.M)):
            fh.write(f"m {i} {j} {float(demand.M[i, j])!r}\n")


@dataclass
class Commuter:
    origin: int
    dest: int
    birth: int


@dataclass
class CommuterQueues:
    """FIFO commuter queues per node (reference representation)."""

    node_count: int
    cap: int = DEFAULT_QUEUE_CAP
    queues: list = field(default=None)
    dropped: int = 0
    births: int = 0

    def __post_init__(self):
        if self.queues is None:
            self.queues = [deque() for _ in range(self.node_count)]

    @property
    def c(self) -> np.ndarray:
        return np.array([len(q) for q in self.queues], dtype=np.int64)

    def push(self, commuter: Commuter) -> bool:
        self.births += 1
        q = self.queues[commuter.origin]
        if len(q) >= self.cap:
            self.dropped += 1
            return False
        q.append(commuter)
        return True


def sample_destination(M_row_cdf, u) -> int:
    """Inverse-CDF draw; ``u`` in [0, 1) is rescaled to the row's total mass."""
    return int(np.searchsorted(M_row_cdf, u * M_row_cdf[-1], side="right"))


def step_commuters(queues: CommuterQueues, demand: DemandPattern, t, rng) -> CommuterQueues:
    """One Bernoulli(g_i) arrival trial at every node, in place."""
    n = queues.node_count
    arrive = rng.random(n) < demand.g
    for i in np.flatnonzero(arrive):
        dest = sample_destination(np.cumsum(demand.M[i]), rng.random())
        queues.push(Commuter(int(i), dest, int(t)))
    return queues


def pickup_rule(node, queues: CommuterQueues, vacant_taxis_here):
    """Assign FIFO commuters at ``node`` to vacant taxis in ascending id.

    Returns a list of ``(taxi_id, Commuter)`` pairs and pops the served
    commuters from the queue.
    """
    q = queues.queues[node]
    out = []
    for taxi in sorted(vacant_taxis_here):
        if not q:
            break
        out.append((taxi, q.popleft()))
    return out


def waiting_time_total(queue_totals, horizon, n_c):
    """Total and average commuter waiting time.

    ``queue_totals[t]`` is the number of waiting commuters summed over nodes
    at step ``t`` (a per-node history of shape (H, N) is summed first).
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    q = np.asarray(queue_totals)
    total = int(q.sum()) if q.size else 0
    if n_c <= 0:
        return total, 0.0 if total == 0 else float("inf")
    return total, total / (horizon * n_c)

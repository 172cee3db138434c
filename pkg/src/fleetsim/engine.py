"""Discrete-time taxi fleet simulation.

One call to :func:`run_epoch` simulates ``H`` time-steps. Inside a step the
order is: commuter arrivals, taxi motion (arrival at the head node), drop-off,
pick-up (FIFO commuters, ascending taxi id), routing decisions, reward and
queue bookkeeping. Occupied taxis follow the shortest path; vacant taxis ask
their router.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .demand import DEFAULT_QUEUE_CAP, waiting_time_total
from .policy import PolicyMatrix

DEFAULT_HORIZON = 50_000
DESK_HORIZON = 10_000
MAX_SAMPLES = 512_000
CHUNK = 2048

CSV_FIELDS = ("epoch", "seed", "taxis", "reward_avg", "waiting_avg", "served", "samples")


class RouterError(ValueError):
    """Router cannot produce valid moves on this network."""


class PolicyRouter:
    """Vacant taxis move one hop according to a turn-by-turn policy."""

    kind = "policy"

    def __init__(self, policy: PolicyMatrix):
        self.policy = policy

    def kernel_args(self, network):
        if self.policy.network is not network:
            if not np.array_equal(self.policy.network.indices, network.indices):
                raise RouterError("policy was built for a different network")
        probs = self.policy.probs
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise RouterError("policy has negative or non-finite entries")
        sums = np.add.reduceat(probs, network.indptr[:-1])
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise RouterError("policy rows must sum to 1")
        cdf = _row_cumsum(probs, network)
        dummy = np.zeros((1, 1))
        return _core.ROUTER_POLICY, cdf, dummy, np.ones(1), False


def _row_cumsum(values, network):
    cdf = np.cumsum(values)
    starts = np.repeat(cdf[network.indptr[:-1]] - values[network.indptr[:-1]], network.degree)
    return (cdf - starts) / np.repeat(np.add.reduceat(values, network.indptr[:-1]), network.degree)


@dataclass
class TrajectoryBatch:
    """Vacant-taxi decisions from one epoch.

    ``own_before[k]`` is the deciding taxi's occupied time-steps before the
    decision; with ``own_final`` it yields per-taxi tail returns.
    """

    states: np.ndarray
    slots: np.ndarray
    actions: np.ndarray
    times: np.ndarray
    taxis: np.ndarray
    own_before: np.ndarray
    occupancy: np.ndarray
    own_final: np.ndarray
    horizon: int

    def __len__(self):
        return int(self.states.size)


@dataclass
class EpochResult:
    horizon: int
    taxi_count: int
    n_c: float
    total_extrinsic_reward: int
    waiting_total: int
    births: int
    commuters_served: int
    delivered: int
    overflow_drops: int
    vacant_moves: int
    violations: int
    trajectory: TrajectoryBatch
    queue_totals: np.ndarray
    visits: np.ndarray
    moves: np.ndarray
    commuters: np.ndarray = field(repr=False)
    taxis: np.ndarray = field(repr=False)

    @property
    def average_reward(self) -> float:
        return self.total_extrinsic_reward / self.horizon

    @property
    def average_waiting(self) -> float:
        return waiting_time_total(self.queue_totals, self.horizon, self.n_c)[1]

    @property
    def in_transit(self) -> int:
        return int(np.count_nonzero(self.taxis[:, _core.T_DEST] >= 0))

    def csv_row(self, epoch, seed) -> dict:
        return {
            "epoch": epoch,
            "seed": seed,
            "taxis": self.taxi_count,
            "reward_avg": repr(float(self.average_reward)),
            "waiting_avg": repr(float(self.average_waiting)),
            "served": self.commuters_served,
            "samples": len(self.trajectory),
        }


def write_epoch_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def arrival_stream(demand, horizon, rng):
    """Pre-draw every commuter birth of an epoch.

    Bernoulli(g_i) trials at each node are generated as geometric gaps, which
    is the same process with far fewer draws. Returns ``(t, node, dest)``
    sorted by time, then node.
    """
    g = demand.g
    times, nodes = [], []
    for i in np.flatnonzero(g > 0):
        p = g[i]
        expected = horizon * p
        n_draw = int(expected + 6.0 * np.sqrt(expected + 1.0) + 16)
        ts = np.cumsum(rng.geometric(p, size=n_draw)) - 1
        while ts[-1] < horizon:
            more = np.cumsum(rng.geometric(p, size=n_draw)) + ts[-1]
            ts = np.concatenate([ts, more])
        ts = ts[ts < horizon]
        times.append(ts)
        nodes.append(np.full(ts.size, i, dtype=np.int64))
    if not times:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    t = np.concatenate(times)
    node = np.concatenate(nodes)
    order = np.lexsort((node, t))
    t, node = t[order], node[order]
    dest = np.empty_like(node)
    u = rng.random(node.size)
    cdf = np.cumsum(demand.M, axis=1)
    for i in np.unique(node):
        sel = node == i
        dest[sel] = np.searchsorted(cdf[i], u[sel] * cdf[i, -1], side="right")
    return t.astype(np.int64), node, dest


def run_epoch(
    network,
    travel_times,
    demand,
    router,
    taxi_count,
    horizon=DESK_HORIZON,
    seed=0,
    max_samples=MAX_SAMPLES,
    queue_cap=DEFAULT_QUEUE_CAP,
    initial_positions=None,
    initial_commuters=(),
    validate=False,
) -> EpochResult:
    """Simulate ``horizon`` steps of ``taxi_count`` taxis.

    Separate random streams drive commuter births, initial taxi positions and
    vacant routing, so changing the router leaves the demand realisation
    untouched. ``initial_commuters`` are ``(node, dest)`` pairs queued at t=0
    ahead of the random births.
    """
    if taxi_count < 0 or horizon < 1:
        raise ValueError("need taxi_count >= 0 and horizon >= 1")
    n = network.node_count
    mode, policy_cdf, dispatch_cdf, gate, committed = router.kernel_args(network)
    demand_ss, position_ss, route_ss = np.random.SeedSequence(seed).spawn(3)
    demand_rng = np.random.default_rng(demand_ss)
    route_rng = np.random.default_rng(route_ss)

    bt, bn, bd = arrival_stream(demand, horizon, demand_rng)
    if initial_commuters:
        extra = np.asarray(initial_commuters, dtype=np.int64).reshape(-1, 2)
        if np.any(extra[:, 0] == extra[:, 1]):
            raise ValueError("initial commuter destination equals its origin")
        bt = np.concatenate([np.zeros(len(extra), dtype=np.int64), bt])
        bn = np.concatenate([extra[:, 0], bn])
        bd = np.concatenate([extra[:, 1], bd])

    taxis, commuters, head, tail, count, counters = _core.new_state(taxi_count, bt.size, n)
    if initial_positions is None:
        taxis[:, _core.T_NODE] = np.random.default_rng(position_ss).integers(0, n, taxi_count)
    else:
        pos = np.asarray(initial_positions, dtype=np.int64)
        if pos.shape != (taxi_count,):
            raise ValueError("initial_positions must have one node per taxi")
        taxis[:, _core.T_NODE] = pos

    n_rec = int(min(max_samples, horizon * taxi_count))
    rec = [np.zeros(n_rec, dtype=np.int64) for _ in range(5)]
    occ = np.zeros(horizon, dtype=np.int64)
    queue_total = np.zeros(horizon, dtype=np.int64)
    visits = np.zeros(n, dtype=np.int64)
    moves = np.zeros(len(network.indices), dtype=np.int64)
    self_slot = network.indptr[:-1] + np.array(
        [np.searchsorted(network.neighbors(i), i) for i in range(n)], dtype=np.int64
    )
    for t0 in range(0, horizon, CHUNK):
        t1 = min(horizon, t0 + CHUNK)
        uniforms = route_rng.random((t1 - t0, taxi_count, 2))
        _core.advance(
            t0, t1,
            network.indptr, network.indices, network.travel_time, self_slot,
            travel_times.next_slot,
            mode, policy_cdf, dispatch_cdf, gate, committed,
            bt, bn, bd,
            uniforms,
            taxis, commuters, head, tail, count, counters,
            occ, queue_total, visits, moves,
            *rec,
            int(queue_cap), bool(validate),
        )

    k = int(counters[_core.K_NREC])
    states, slots, times, taxi_ids, own = (a[:k] for a in rec)
    batch = TrajectoryBatch(
        states=states,
        slots=slots,
        actions=network.indices[slots],
        times=times,
        taxis=taxi_ids,
        own_before=own,
        occupancy=occ,
        own_final=taxis[:, _core.T_OCC].copy(),
        horizon=horizon,
    )
    return EpochResult(
        horizon=horizon,
        taxi_count=taxi_count,
        n_c=demand.n_c,
        total_extrinsic_reward=int(counters[_core.K_REWARD]),
        waiting_total=int(counters[_core.K_WAITING]),
        births=int(counters[_core.K_BIRTHS]),
        commuters_served=int(counters[_core.K_PICKED]),
        delivered=int(counters[_core.K_DELIVERED]),
        overflow_drops=int(counters[_core.K_DROPPED]),
        vacant_moves=int(counters[_core.K_VACANT_MOVES]),
        violations=int(counters[_core.K_VIOLATIONS]),
        trajectory=batch,
        queue_totals=queue_total,
        visits=visits,
        moves=moves,
        commuters=commuters[: bt.size],
        taxis=taxis,
    )

"""Hotspot dispatch and the turn-by-turn policy it induces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _core
from .engine import DEFAULT_HORIZON, run_epoch
from .policy import PolicyMatrix, random_policy, save_policy

VARIANTS = {
    "committed": (True, False),
    "committed-normalized": (True, True),
    "non-committed": (False, False),
    "non-committed-normalized": (False, True),
}


class ExtractionError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DispatchMatrix:
    """Dispatch weights ``D[i, j]`` from node ``i`` to any node ``j``.

    ``weights`` always holds the raw ``g_j / d_ij``; ``D`` is either the
    row-normalised matrix or the raw weights, depending on ``normalized``.
    """

    weights: np.ndarray
    normalized: bool

    @property
    def D(self) -> np.ndarray:
        if self.normalized:
            return self.weights * self.normalizer[:, None]
        return self.weights

    @property
    def normalizer(self) -> np.ndarray:
        """Per-row factor that makes the weights sum to one."""
        return 1.0 / self.weights.sum(axis=1)


def build_dispatch(travel_times, g, normalized=True) -> DispatchMatrix:
    g = np.asarray(g, dtype=float)
    if not np.any(g > 0):
        raise ValueError("dispatch needs at least one node with g > 0")
    w = g[None, :] / travel_times.d
    w.setflags(write=False)
    return DispatchMatrix(w, bool(normalized))


class DispatchRouter:
    """Sends vacant taxis to sampled targets along shortest paths.

    A taxi without a target draws one from its row of ``D``; drawing its own
    node means waiting one step. ``committed`` taxis ignore commuters until
    they reach the target. With ``unnormalized_mode="raw"`` an unnormalised
    matrix is used as-is: a target is drawn with probability
    ``min(1, sum_j D[i, j])`` and the taxi waits otherwise. The default
    ``"proportional"`` samples targets proportionally to the weights.
    """

    kind = "dispatch"

    def __init__(self, dispatch: DispatchMatrix, travel_times, committed, unnormalized_mode="proportional"):
        if unnormalized_mode not in ("proportional", "raw"):
            raise ValueError("unnormalized_mode must be 'proportional' or 'raw'")
        self.dispatch = dispatch
        self.travel_times = travel_times
        self.committed = bool(committed)
        self.unnormalized_mode = unnormalized_mode

    def kernel_args(self, network):
        w = self.dispatch.weights
        if w.shape != (network.node_count, network.node_count):
            raise ValueError("dispatch matrix does not match the network")
        totals = w.sum(axis=1)
        cdf = np.cumsum(w, axis=1) / totals[:, None]
        if self.dispatch.normalized or self.unnormalized_mode == "proportional":
            gate = np.ones(network.node_count)
        else:
            gate = np.minimum(1.0, totals)
        dummy = np.zeros(1)
        return _core.ROUTER_DISPATCH, dummy, np.ascontiguousarray(cdf), gate, self.committed


def dispatch_router(D, travel_times, committed, unnormalized_mode="proportional") -> DispatchRouter:
    return DispatchRouter(D, travel_times, committed, unnormalized_mode)


def variant_router(name, travel_times, g, unnormalized_mode="proportional") -> DispatchRouter:
    """Router for one of the four named dispatch variants."""
    committed, normalized = VARIANTS[name]
    D = build_dispatch(travel_times, g, normalized=normalized)
    return DispatchRouter(D, travel_times, committed, unnormalized_mode)


@dataclass
class EffectivePolicyCounters:
    """Vacant landings per node and moves per successor slot."""

    n: np.ndarray
    p: np.ndarray

    def __add__(self, other):
        return EffectivePolicyCounters(self.n + other.n, self.p + other.p)


def effective_policy(network, counters: EffectivePolicyCounters):
    """Move-count ratios; unvisited rows fall back to the random policy.

    Returns ``(policy, visited)`` where ``visited`` flags rows estimated from
    data.
    """
    if counters.n.sum() == 0:
        raise ExtractionError("no vacant moves were observed")
    deg = network.degree
    n_slot = np.repeat(counters.n, deg)
    visited = counters.n > 0
    fallback = random_policy(network).probs
    probs = np.where(n_slot > 0, counters.p / np.maximum(n_slot, 1), fallback)
    return PolicyMatrix(network, probs), visited


def extract_effective_policy(network, travel_times, demand, router, taxi_count, horizon=DEFAULT_HORIZON, seed=0):
    """Run the engine with ``router`` and estimate the induced policy.

    Returns ``(policy, visited, counters)``.
    """
    result = run_epoch(network, travel_times, demand, router, taxi_count, horizon, seed, max_samples=0)
    counters = EffectivePolicyCounters(result.visits.copy(), result.moves.copy())
    policy, visited = effective_policy(network, counters)
    return policy, visited, counters


def save_effective_policy(policy, path, variant, horizon) -> None:
    save_policy(policy, path, header=f"effective-from {variant} H={horizon}")

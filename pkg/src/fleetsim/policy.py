"""Turn-by-turn routing policies stored along the network's successor lists."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

PROB_FLOOR = 1e-6


class PolicyError(ValueError):
    pass


def project_to_simplex(v, mass=1.0) -> np.ndarray:
    """Euclidean projection of a vector onto ``{x >= 0, sum(x) = mass}``.

    Sort-based threshold search; exact up to floating point.
    """
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("projection input must be finite")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - mass
    k = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - css / k > 0)
    tau = css[rho - 1] / rho
    return np.maximum(v - tau, 0.0)


def project_rows(values, network, floor=0.0) -> np.ndarray:
    """Project every successor row onto the simplex with entries >= floor.

    ``values`` is aligned with ``network.indices``. Rows are padded to the
    maximum degree so the whole matrix projects in one vectorised pass.
    """
    n, width = network.node_count, network.max_degree
    deg = network.degree
    if np.any(floor * deg >= 1.0):
        raise ValueError("floor too large for the row sizes")
    col = np.arange(len(values)) - np.repeat(network.indptr[:-1], deg)
    row = np.repeat(np.arange(n), deg)
    mass = 1.0 - floor * deg
    # padded cells get a value far below any threshold so they project to 0
    pad = np.full((n, width), -1e300)
    pad[row, col] = np.asarray(values, dtype=float) - floor
    u = -np.sort(-pad, axis=1)
    css = np.cumsum(np.where(u > -1e299, u, 0.0), axis=1) - mass[:, None]
    k = np.arange(1, width + 1)
    valid = (u - css / k > 0) & (k <= deg[:, None])
    rho = valid.sum(axis=1)
    tau = css[np.arange(n), rho - 1] / rho
    out = np.maximum(pad - tau[:, None], 0.0) + floor
    return out[row, col]


@dataclass(eq=False)
class PolicyMatrix:
    """Row-stochastic ``P[i, j]`` over each node's successors (self included).

    ``probs[k]`` is the probability of moving along CSR slot ``k`` of the
    network. Instances are treated as immutable snapshots.
    """

    network: object
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.shape != self.network.indices.shape:
            raise PolicyError("probs must align with the network successor lists")

    def row(self, i) -> np.ndarray:
        return self.probs[self.network.indptr[i]:self.network.indptr[i + 1]]

    def dense(self) -> np.ndarray:
        net = self.network
        P = np.zeros((net.node_count, net.node_count))
        P[net.row_of(np.arange(len(net.indices))), net.indices] = self.probs
        return P

    def row_sums(self) -> np.ndarray:
        return np.add.reduceat(self.probs, self.network.indptr[:-1])

    def check(self, atol=1e-9) -> None:
        if not np.all(np.isfinite(self.probs)) or np.any(self.probs < 0):
            raise PolicyError("policy entries must be finite and non-negative")
        bad = np.flatnonzero(np.abs(self.row_sums() - 1.0) > atol)
        if bad.size:
            raise PolicyError(f"row {int(bad[0])} does not sum to 1")

    def floored(self, floor=PROB_FLOOR) -> "PolicyMatrix":
        return PolicyMatrix(self.network, project_rows(self.probs, self.network, floor))

    def total_variation(self, other: "PolicyMatrix") -> np.ndarray:
        """Per-row total-variation distance."""
        return 0.5 * np.add.reduceat(np.abs(self.probs - other.probs), self.network.indptr[:-1])


def random_policy(network) -> PolicyMatrix:
    return PolicyMatrix(network, 1.0 / np.repeat(network.degree, network.degree))


def sample_action(policy: PolicyMatrix, node, rng) -> int:
    row = policy.row(node)
    if row.size == 0 or np.any(row < 0) or abs(row.sum() - 1.0) > 1e-9:
        raise PolicyError(f"row {node} is not a probability distribution")
    k = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
    return int(policy.network.neighbors(node)[min(k, row.size - 1)])


def save_policy(policy: PolicyMatrix, path, header=None) -> None:
    net = policy.network
    with Path(path).open("w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        rows = net.row_of(np.arange(len(net.indices)))
        for i, j, p in zip(rows, net.indices, policy.probs):
            if p != 0.0:
                fh.write(f"p {i} {j} {float(p)!r}\n")


def load_policy(path, network) -> PolicyMatrix:
    probs = np.zeros(len(network.indices))
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] != "p" or len(parts) != 4:
                    raise ValueError(f"unrecognised record {line!r}")
                i, j, p = int(parts[1]), int(parts[2]), float(parts[3])
                probs[network.slot(i, j)] = p
            except KeyError:
                raise PolicyError(f"{path}:{lineno}: ({i}, {j}) is not an edge") from None
            except ValueError as exc:
                raise PolicyError(f"{path}:{lineno}: {exc}") from None
    policy = PolicyMatrix(network, probs)
    policy.check()
    return policy

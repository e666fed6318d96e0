"""Network topology: validated symmetric doubly stochastic weights."""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (
    Disconnected,
    IndexOutOfRange,
    NegativeEntry,
    NotStochastic,
    NotSymmetric,
    TopologyError,
)

STOCHASTIC_TOL = 1e-12
SYMMETRY_TOL = 1e-12


class NotPrimitive(TopologyError):
    """Some entry of ``A**D`` is zero (happens when a node lacks a self-loop)."""


@dataclass(frozen=True)
class NetworkTopology:
    n: int
    weights: np.ndarray
    diameter: int
    a_min: float

    def neighbors(self, i: int) -> frozenset[int]:
        return neighbors(self, i)

    @cached_property
    def in_neighbors(self) -> tuple[np.ndarray, ...]:
        """Sorted index arrays of {j : a_ji > 0} for every node i."""
        return tuple(np.flatnonzero(self.weights[:, i] > 0) for i in range(self.n))

    @cached_property
    def solo_nodes(self) -> np.ndarray:
        """Nodes whose only in-neighbor is themselves (a_ii = 1)."""
        return np.flatnonzero([nb.size == 1 for nb in self.in_neighbors])

    def power(self, k: int) -> np.ndarray:
        return np.linalg.matrix_power(self.weights, k)


def _hop_distances(support: np.ndarray, source: int) -> np.ndarray:
    n = support.shape[0]
    dist = np.full(n, -1, dtype=int)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(support[u]):
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def graph_diameter(weights: np.ndarray) -> int:
    """Longest shortest path on the off-diagonal support, by BFS from every node.

    Raises ``Disconnected`` naming the first unreachable node. A single node
    has diameter 1 by convention (the theory needs ``D >= 1``).
    """
    n = weights.shape[0]
    support = weights > 0
    np.fill_diagonal(support, False)
    diameter = 1
    for s in range(n):
        dist = _hop_distances(support, s)
        unreachable = np.flatnonzero(dist < 0)
        if unreachable.size:
            raise Disconnected(
                f"node {int(unreachable[0])} is unreachable from node {s}",
                index=(s, int(unreachable[0])),
            )
        diameter = max(diameter, int(dist.max()))
    return diameter


def build_topology(raw_weights) -> NetworkTopology:
    w = np.array(raw_weights, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
        raise TopologyError(f"weights must be a non-empty square matrix, got shape {w.shape}")
    n = w.shape[0]
    if not np.all(np.isfinite(w)):
        bad = tuple(int(x) for x in np.argwhere(~np.isfinite(w))[0])
        raise TopologyError(f"non-finite weight at {bad}", index=bad)

    neg = np.argwhere(w < 0)
    if neg.size:
        idx = tuple(int(x) for x in neg[0])
        raise NegativeEntry(f"negative weight {w[idx]} at {idx}", index=idx)

    asym = np.argwhere(np.abs(w - w.T) > SYMMETRY_TOL)
    if asym.size:
        i, j = (int(x) for x in asym[0])
        raise NotSymmetric(f"a[{i},{j}]={w[i, j]} differs from a[{j},{i}]={w[j, i]}", index=(i, j))

    row_sums = w.sum(axis=1)
    bad_rows = np.flatnonzero(np.abs(row_sums - 1.0) > STOCHASTIC_TOL)
    if bad_rows.size:
        r = int(bad_rows[0])
        raise NotStochastic(f"row {r} sums to {row_sums[r]!r}", index=r)

    diameter = graph_diameter(w)
    power = np.linalg.matrix_power(w, diameter)
    zero = np.argwhere(power <= 0)
    if zero.size:
        idx = tuple(int(x) for x in zero[0])
        raise NotPrimitive(
            f"entry {idx} of the weight matrix to the power {diameter} is zero; "
            "every node needs a positive self-weight",
            index=idx,
        )
    w.setflags(write=False)
    return NetworkTopology(n=n, weights=w, diameter=diameter, a_min=float(power.min()))


def neighbors(topology: NetworkTopology, i: int) -> frozenset[int]:
    """Nodes j with a_ji > 0, including i itself when it has a self-loop."""
    if not 0 <= i < topology.n:
        raise IndexOutOfRange(f"node {i} not in 0..{topology.n - 1}")
    return frozenset(int(j) for j in np.flatnonzero(topology.weights[:, i] > 0))


def parse_real(token) -> float:
    """Parse a decimal or an exact ratio such as ``"2/3"``."""
    if isinstance(token, (int, float)):
        return float(token)
    return float(Fraction(str(token).strip()))


def load_weights_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        rows = [[parse_real(tok) for tok in row] for row in csv.reader(fh) if row]
    return np.array(rows, dtype=float)


def metropolis_weights(adjacency) -> np.ndarray:
    """Metropolis-Hastings weights for an undirected 0/1 adjacency (convenience only)."""
    adj = np.array(adjacency, dtype=bool)
    np.fill_diagonal(adj, False)
    deg = adj.sum(axis=1)
    n = adj.shape[0]
    w = np.zeros((n, n))
    for i, j in np.argwhere(adj):
        w[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return w


LINE_WEIGHTS = np.array(
    [
        [2 / 3, 1 / 3, 0.0],
        [1 / 3, 1 / 2, 1 / 6],
        [0.0, 1 / 6, 5 / 6],
    ]
)


def line_topology() -> NetworkTopology:
    """The 3-node line network used in the cooperative ARX example."""
    return build_topology(LINE_WEIGHTS)

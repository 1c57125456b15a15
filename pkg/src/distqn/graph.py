"""Network topologies and consensus weight matrices.

A :class:`Topology` is a simple undirected graph on nodes ``0..n-1``. A
:class:`WeightMatrix` is the symmetric doubly stochastic matrix ``W`` attached
to it. ``W`` is stored by its diagonal and one weight per edge; the products
the solvers need (``W_u X``, ``(I - W) X``) are applied through sparse
operators and never through a dense ``np x np`` matrix.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from distqn import _rng
from distqn.errors import DisconnectedGraphError, DistqnError

NETWORK_FORMAT = "distqn.network/1"


@dataclass(frozen=True)
class Topology:
    n: int
    edges: tuple  # sorted tuple of (i, j) with i < j
    coordinates: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("topology needs at least one node")
        normalized = set()
        for e in self.edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge {(i, j)} references a node outside 0..{self.n - 1}")
            key = (min(i, j), max(i, j))
            if key in normalized:
                raise ValueError(f"duplicate edge {key}")
            normalized.add(key)
        object.__setattr__(self, "edges", tuple(sorted(normalized)))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def neighbors(self) -> tuple:
        """Open neighborhoods, one sorted tuple per node."""
        adj = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return tuple(tuple(sorted(a)) for a in adj)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.neighbors], dtype=int)

    def relabel(self, perm) -> "Topology":
        """Topology with node ``i`` renamed ``perm[i]``."""
        perm = np.asarray(perm)
        edges = [(int(perm[i]), int(perm[j])) for i, j in self.edges]
        coords = None
        if self.coordinates is not None:
            coords = np.empty_like(self.coordinates)
            coords[perm] = self.coordinates
        return Topology(self.n, tuple(edges), coords)


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric stochastic weights supported on a topology's edges."""

    topology: Topology
    diagonal: np.ndarray
    edge_weights: np.ndarray  # aligned with topology.edges

    def __post_init__(self):
        d = np.asarray(self.diagonal, dtype=float)
        w = np.asarray(self.edge_weights, dtype=float)
        if d.shape != (self.topology.n,):
            raise ValueError("diagonal length must equal node count")
        if w.shape != (self.topology.num_edges,):
            raise ValueError("one weight per edge required")
        d.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "diagonal", d)
        object.__setattr__(self, "edge_weights", w)

    @property
    def n(self) -> int:
        return self.topology.n

    @property
    def w_min(self) -> float:
        return float(self.diagonal.min())

    @property
    def w_max(self) -> float:
        return float(self.diagonal.max())

    @cached_property
    def _edge_index(self):
        if self.topology.num_edges == 0:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        e = np.asarray(self.topology.edges, dtype=int)
        return e[:, 0], e[:, 1]

    @cached_property
    def offdiag(self) -> sp.csr_matrix:
        """``W_u``: W with its diagonal removed, as a sparse n x n matrix."""
        i, j = self._edge_index
        rows = np.concatenate([i, j])
        cols = np.concatenate([j, i])
        vals = np.concatenate([self.edge_weights, self.edge_weights])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    @cached_property
    def _incidence(self) -> sp.csr_matrix:
        i, j = self._edge_index
        m = len(i)
        rows = np.concatenate([np.arange(m), np.arange(m)])
        cols = np.concatenate([i, j])
        vals = np.concatenate([np.ones(m), -np.ones(m)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, self.n))

    @cached_property
    def extreme_eigenvalues(self) -> tuple:
        return extreme_eigenvalues(self)

    @property
    def lambda_1(self) -> float:
        return self.extreme_eigenvalues[0]

    @property
    def lambda_n(self) -> float:
        return self.extreme_eigenvalues[1]

    def dense(self) -> np.ndarray:
        out = self.offdiag.toarray()
        out[np.diag_indices(self.n)] = self.diagonal
        return out

    def edge_differences(self, X: np.ndarray) -> np.ndarray:
        """Rows ``x_i - x_j`` for every edge ``(i, j)``."""
        return self._incidence @ X

    def laplacian_apply(self, X: np.ndarray) -> np.ndarray:
        """``(I - W) X``; block ``i`` is ``sum_j w_ij (x_i - x_j)``."""
        diff = self.edge_differences(X)
        return self._incidence.T @ (self.edge_weights[:, None] * diff)

    def disagreement(self, X: np.ndarray) -> float:
        """``x^T (I - Z) x = sum over edges of w_ij ||x_i - x_j||^2``."""
        diff = self.edge_differences(X)
        return float(np.dot(self.edge_weights, np.einsum("ep,ep->e", diff, diff)))

    def offdiag_apply(self, X: np.ndarray) -> np.ndarray:
        return self.offdiag @ X

    def mix(self, X: np.ndarray) -> np.ndarray:
        """``W X``."""
        return self.diagonal[:, None] * X + self.offdiag @ X

    def check(self, tol: float = 1e-12) -> None:
        """Raise if any weight-matrix assumption is violated."""
        if np.any(self.edge_weights <= 0):
            raise DistqnError("edge weights must be positive")
        rows = self.diagonal + np.asarray(self.offdiag.sum(axis=1)).ravel()
        if np.max(np.abs(rows - 1.0)) > tol:
            raise DistqnError("rows of W must sum to one")
        if not (self.w_min > 0 and self.w_max < 1):
            raise DistqnError("diagonal entries must lie strictly inside (0, 1)")


def generate_random_geometric(n: int, seed: int) -> Topology:
    """Random geometric graph on the unit square with radius ``sqrt(ln n / n)``.

    Node ``i`` draws its position from its own stream, so positions do not
    depend on ``n`` beyond the radius. The result may be disconnected; see
    :func:`generate_connected_geometric`.
    """
    if n < 1:
        raise ValueError("n must be positive")
    coords = np.empty((n, 2))
    for i in range(n):
        coords[i] = _rng.node_stream(seed, _rng.GRAPH, i).uniform(0.0, 1.0, size=2)
    r = np.sqrt(np.log(n) / n)
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    iu, ju = np.triu_indices(n, k=1)
    mask = dist[iu, ju] <= r
    edges = tuple(zip(iu[mask].tolist(), ju[mask].tolist()))
    return Topology(n, edges, coords)


def generate_connected_geometric(n: int, seed: int, max_attempts: int = 100):
    """Draw geometric graphs with seeds ``seed, seed+1, ...`` until one is connected.

    Returns ``(topology, used_seed)``.
    """
    for attempt in range(max_attempts):
        t = generate_random_geometric(n, seed + attempt)
        if is_connected(t):
            return t, seed + attempt
    raise DisconnectedGraphError(
        f"no connected geometric graph with n={n} in {max_attempts} draws from seed {seed}"
    )


def is_connected(t: Topology) -> bool:
    seen = [False] * t.n
    seen[0] = True
    queue = deque([0])
    count = 1
    while queue:
        i = queue.popleft()
        for j in t.neighbors[i]:
            if not seen[j]:
                seen[j] = True
                count += 1
                queue.append(j)
    return count == t.n


def metropolis_weights(t: Topology) -> WeightMatrix:
    """Metropolis-like weights ``w_ij = 1 / (2 max(d_i, d_j) + 1)``."""
    if t.n < 2:
        raise DistqnError("weights need at least two nodes (w_ii = 1 would violate w_max < 1)")
    if not is_connected(t):
        raise DisconnectedGraphError("metropolis weights require a connected topology")
    deg = t.degrees
    w = np.array([1.0 / (2 * max(deg[i], deg[j]) + 1) for i, j in t.edges])
    incident = np.zeros(t.n)
    # accumulate per node in edge order so the diagonal is reproducible
    for (i, j), wij in zip(t.edges, w):
        incident[i] += wij
        incident[j] += wij
    wm = WeightMatrix(t, 1.0 - incident, w)
    wm.check()
    return wm


def extreme_eigenvalues(w: WeightMatrix) -> tuple:
    """``(lambda_1, lambda_n)``, the largest and smallest eigenvalues of W."""
    ev = scipy.linalg.eigvalsh(w.dense())
    return float(ev[-1]), float(ev[0])


# -- serialization ---------------------------------------------------------


def _hex(a) -> list:
    return [float(v).hex() for v in np.ravel(a)]


def _unhex(values) -> np.ndarray:
    return np.array([float.fromhex(v) if isinstance(v, str) else float(v) for v in values])


def network_to_dict(t: Topology, w: Optional[WeightMatrix] = None) -> dict:
    doc = {
        "format": NETWORK_FORMAT,
        "n": t.n,
        "edges": [list(e) for e in t.edges],
        "coordinates": None if t.coordinates is None else [_hex(c) for c in t.coordinates],
    }
    if w is not None:
        doc["weights"] = {"diagonal": _hex(w.diagonal), "edges": _hex(w.edge_weights)}
    return doc


def network_from_dict(doc: dict):
    """Inverse of :func:`network_to_dict`; returns ``(topology, weights_or_None)``."""
    coords = doc.get("coordinates")
    if coords is not None:
        coords = np.array([_unhex(c) for c in coords])
    t = Topology(int(doc["n"]), tuple(tuple(e) for e in doc["edges"]), coords)
    weights = doc.get("weights")
    if weights is None:
        return t, None
    # edges were re-sorted by Topology; realign weights
    given = [tuple(sorted(e)) for e in doc["edges"]]
    by_edge = dict(zip(given, _unhex(weights["edges"])))
    w = WeightMatrix(t, _unhex(weights["diagonal"]), np.array([by_edge[e] for e in t.edges]))
    return t, w


def dump_network(path, t: Topology, w: Optional[WeightMatrix] = None) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(t, w), fh, indent=1)


def load_network(path):
    with open(path) as fh:
        return network_from_dict(json.load(fh))

"""Network topologies, directed-link bookkeeping and the constraint matrices.

Every undirected edge ``{i, j}`` is carried as the two directed links
``(i, j)`` and ``(j, i)``. Links are kept in lexicographic order; that order
fixes the block layout of the link variables ``z`` and ``mu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Network",
    "ConstraintMatrices",
    "PowerIterationError",
    "network_from_edges",
    "build_topology",
    "build_small_world",
    "build_random_avg_degree",
    "build_from_spec",
    "constraint_matrices",
    "spectral_norm_B",
    "power_iteration_norm_B",
    "is_connected",
]

TOPOLOGY_KINDS = ("line", "star", "complete", "cycle", "small_world", "random_avg_degree")


class PowerIterationError(RuntimeError):
    """Power iteration on B^T B failed to settle or disagreed with the closed form."""


@dataclass(frozen=True, eq=False)
class Network:
    """Undirected simple graph with canonical directed-link enumeration."""

    n: int
    undirected_edges: tuple[tuple[int, int], ...]
    directed_links: tuple[tuple[int, int], ...] = field(init=False)
    neighbors: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"network needs at least one node, got n={self.n}")
        edges = set()
        for a, b in self.undirected_edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self-loop at node {a}")
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise ValueError(f"edge ({a}, {b}) out of range for n={self.n}")
            e = (min(a, b), max(a, b))
            if e in edges:
                raise ValueError(f"duplicate edge {e}")
            edges.add(e)
        und = tuple(sorted(edges))
        links = tuple(sorted([(i, j) for i, j in und] + [(j, i) for i, j in und]))
        nbrs = [[] for _ in range(self.n)]
        for i, j in links:
            nbrs[i].append(j)
        object.__setattr__(self, "undirected_edges", und)
        object.__setattr__(self, "directed_links", links)
        object.__setattr__(self, "neighbors", tuple(tuple(sorted(v)) for v in nbrs))

    @property
    def m(self) -> int:
        return len(self.directed_links)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(v) for v in self.neighbors], dtype=np.int64)

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.n else 0

    @cached_property
    def link_src(self) -> np.ndarray:
        """Source node ``i`` of every directed link ``(i, j)``."""
        return np.array([i for i, _ in self.directed_links], dtype=np.int64)

    @cached_property
    def link_dst(self) -> np.ndarray:
        """Destination node ``j`` of every directed link ``(i, j)``."""
        return np.array([j for _, j in self.directed_links], dtype=np.int64)

    @cached_property
    def incoming_sum(self) -> sp.csr_matrix:
        """``n x m`` 0/1 matrix summing link blocks into their destination node."""
        return sp.csr_matrix(
            (np.ones(self.m), (self.link_dst, np.arange(self.m))), shape=(self.n, self.m)
        )

    @cached_property
    def outgoing_sum(self) -> sp.csr_matrix:
        """``n x m`` 0/1 matrix summing link blocks into their source node."""
        return sp.csr_matrix(
            (np.ones(self.m), (self.link_src, np.arange(self.m))), shape=(self.n, self.m)
        )

    @cached_property
    def link_index(self) -> dict[tuple[int, int], int]:
        return {lk: k for k, lk in enumerate(self.directed_links)}

    def out_links(self, i: int) -> np.ndarray:
        """Indices of links ``(i, j)``, ordered by ``j``."""
        return np.array([self.link_index[(i, j)] for j in self.neighbors[i]], dtype=np.int64)

    def in_links(self, i: int) -> np.ndarray:
        """Indices of links ``(l, i)``, ordered by ``l``."""
        return np.array([self.link_index[(l, i)] for l in self.neighbors[i]], dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return self.n == other.n and self.undirected_edges == other.undirected_edges

    def __hash__(self):
        return hash((self.n, self.undirected_edges))

    def __repr__(self):
        return f"Network(n={self.n}, edges={len(self.undirected_edges)}, m={self.m})"


def network_from_edges(n: int, edges) -> Network:
    return Network(n, tuple((int(a), int(b)) for a, b in edges))


def is_connected(net: Network) -> bool:
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in net.neighbors[i]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == net.n


def build_topology(kind: str, n: int) -> Network:
    """Deterministic line, star, complete or cycle network on ``n`` nodes.

    The star is centred at node 0 and the line is the path ``0-1-...-(n-1)``.
    """
    minimum = 3 if kind == "cycle" else 2
    if kind not in ("line", "star", "complete", "cycle"):
        raise ValueError(f"unknown topology kind {kind!r}")
    if n < minimum:
        raise ValueError(f"{kind} network needs n >= {minimum}, got {n}")
    if kind == "line":
        edges = [(i, i + 1) for i in range(n - 1)]
    elif kind == "star":
        edges = [(0, i) for i in range(1, n)]
    elif kind == "complete":
        edges = list(combinations(range(n), 2))
    else:
        edges = [(i, (i + 1) % n) for i in range(n)]
    return network_from_edges(n, edges)


def _add_random_edges(n, edges, count, rng):
    present = set(edges)
    candidates = [e for e in combinations(range(n), 2) if e not in present]
    if count > len(candidates):
        raise ValueError(f"cannot add {count} edges, only {len(candidates)} non-edges left")
    picks = rng.choice(len(candidates), size=count, replace=False) if count else []
    return list(edges) + [candidates[k] for k in np.sort(picks)]


def build_small_world(n: int, extra_links: int, seed: int = 0) -> Network:
    """Cycle over ``n`` nodes plus ``extra_links`` distinct random chords.

    Chords are drawn uniformly without replacement from the non-edges of the
    cycle, so the result only depends on ``seed``.
    """
    if n < 3:
        raise ValueError(f"small-world network needs n >= 3, got {n}")
    capacity = n * (n - 1) // 2 - n
    if not 0 <= extra_links <= capacity:
        raise ValueError(f"extra_links must lie in [0, {capacity}] for n={n}, got {extra_links}")
    cycle = [tuple(sorted((i, (i + 1) % n))) for i in range(n)]
    rng = np.random.default_rng(seed)
    return network_from_edges(n, _add_random_edges(n, cycle, extra_links, rng))


def build_random_avg_degree(n: int, avg_degree: float, seed: int = 0) -> Network:
    """Connected random graph with mean degree ``avg_degree``.

    A uniformly random recursive spanning tree is grown first, then random
    non-edges are added until ``round(n * avg_degree / 2)`` edges exist.
    """
    if n < 2:
        raise ValueError(f"random network needs n >= 2, got {n}")
    if not 1 <= avg_degree < n:
        raise ValueError(f"avg_degree must lie in [1, n), got {avg_degree}")
    n_edges = int(round(n * avg_degree / 2))
    if abs(2 * n_edges / n - avg_degree) > 2 / n + 1e-12:
        raise ValueError(f"avg_degree {avg_degree} not attainable on {n} nodes")
    if n_edges < n - 1:
        raise ValueError(
            f"avg_degree {avg_degree} gives {n_edges} edges, fewer than the {n - 1} needed to connect {n} nodes"
        )
    if n_edges > n * (n - 1) // 2:
        raise ValueError(f"avg_degree {avg_degree} exceeds the complete graph on {n} nodes")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    tree = []
    for k in range(1, n):
        parent = order[rng.integers(k)]
        a, b = int(order[k]), int(parent)
        tree.append((min(a, b), max(a, b)))
    return network_from_edges(n, _add_random_edges(n, sorted(tree), n_edges - (n - 1), rng))


def build_from_spec(spec: dict) -> Network:
    """Build a network from a topology spec such as ``{"kind": "line", "n": 5}``."""
    kind = spec["kind"]
    n = int(spec["n"])
    if kind == "small_world":
        return build_small_world(n, int(spec.get("extra_links", 0)), int(spec.get("seed", 0)))
    if kind == "random_avg_degree":
        return build_random_avg_degree(n, float(spec["avg_degree"]), int(spec.get("seed", 0)))
    if kind in TOPOLOGY_KINDS:
        return build_topology(kind, n)
    raise ValueError(f"unknown topology kind {kind!r}")


@dataclass(frozen=True, eq=False)
class ConstraintMatrices:
    """Sparse view of ``A`` (link-to-node selection) and ``B = [I; A]``.

    Vectors are handled as arrays of per-node / per-link blocks: ``x`` has
    shape ``(n, p)`` and ``B x`` is returned as the pair ``(x, z)`` with ``z``
    of shape ``(m, p)``.
    """

    net: Network
    p: int

    @property
    def n(self) -> int:
        return self.net.n

    @property
    def m(self) -> int:
        return self.net.m

    def A_matvec(self, x: np.ndarray) -> np.ndarray:
        return x[self.net.link_dst]

    def AT_matvec(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(self.net.incoming_sum @ z)

    def B_matvec(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x.copy(), self.A_matvec(x)

    def BT_matvec(self, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        return y + self.AT_matvec(z)

    def BtB_diag(self) -> np.ndarray:
        """Per-node multiplier of the block-diagonal ``B^T B``."""
        return 1.0 + self.net.degrees.astype(float)

    def dense_A(self) -> np.ndarray:
        blocks = np.zeros((self.m, self.n))
        blocks[np.arange(self.m), self.net.link_dst] = 1.0
        return np.kron(blocks, np.eye(self.p))

    def dense_B(self) -> np.ndarray:
        return np.vstack([np.eye(self.n * self.p), self.dense_A()])


def constraint_matrices(net: Network, p: int) -> ConstraintMatrices:
    if p < 1:
        raise ValueError(f"block dimension p must be >= 1, got {p}")
    return ConstraintMatrices(net, int(p))


def _power_iteration_BtB(cm: ConstraintMatrices, tol: float, max_iters: int) -> float:
    v = np.ones((cm.n, cm.p))
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iters):
        w = cm.BT_matvec(*cm.B_matvec(v))
        new_estimate = float(np.sum(v * w))
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(new_estimate - estimate) <= tol * abs(new_estimate):
            return new_estimate
        estimate = new_estimate
    raise PowerIterationError(f"power iteration on B^T B did not settle within {max_iters} iterations")


def power_iteration_norm_B(cm: ConstraintMatrices, tol: float = 1e-12, max_iters: int = 10_000) -> float:
    """Spectral norm of ``B`` estimated by power iteration on ``B^T B`` alone."""
    return math.sqrt(_power_iteration_BtB(cm, tol, max_iters))


def spectral_norm_B(cm: ConstraintMatrices, tol: float = 1e-10, max_iters: int = 10_000) -> float:
    """Spectral norm of ``B``.

    The closed form ``sqrt(max_j (1 + |Omega_j|))`` follows from ``B^T B``
    being block diagonal. It is cross-checked against power iteration on the
    operator ``B^T B`` and the closed-form value is returned.

    Raises
    ------
    PowerIterationError
        If power iteration does not settle or disagrees with the closed form
        beyond ``tol`` (relative), which means ``A`` was built wrongly.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    closed = math.sqrt(float(cm.BtB_diag().max()))
    iterated = power_iteration_norm_B(cm, tol * 1e-2, max_iters)
    if abs(iterated - closed) > tol * closed:
        raise PowerIterationError(
            f"power iteration gives {iterated!r}, closed form {closed!r}; A is inconsistent"
        )
    return closed

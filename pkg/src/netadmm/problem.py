"""Node and link cost oracles, problem instances and network constants.

Oracles declare their own smoothness and strong-convexity constants; the
``check_*`` helpers sample points to cross-check those declarations.
Link-cost oracles broadcast over leading axes so that all links sharing one
oracle can be evaluated in a single call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .graph import Network, constraint_matrices, spectral_norm_B

__all__ = [
    "NodeCostOracle",
    "LinkCostOracle",
    "LogisticNodeCost",
    "QuadraticNodeCost",
    "QuadraticLinkCost",
    "QuadraticFormLinkCost",
    "ZeroNodeCost",
    "ZeroLinkCost",
    "logistic_node_cost",
    "quadratic_node_cost",
    "quadratic_link_cost",
    "quadratic_form_link_cost",
    "ProblemInstance",
    "NetworkConstants",
    "network_constants",
    "total_cost",
    "check_gradient",
    "check_lipschitz",
    "check_strong_monotonicity",
]


class NodeCostOracle:
    """Cost ``f_i`` of a single node's decision vector."""

    lipschitz_L: float = 0.0
    strong_convexity_tau: float = 0.0

    def eval(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hessian(self, p: int):
        """Constant Hessian for quadratic costs, ``None`` otherwise."""
        return None


class LinkCostOracle:
    """Cost ``g_ij(x_i, x_j)`` on one directed link."""

    lipschitz_L: float = 0.0
    strong_convexity_tau: float = 0.0

    def eval(self, xi, xj):
        raise NotImplementedError

    def grad(self, xi, xj):
        """Return the pair ``(d/dx_i, d/dx_j)``."""
        raise NotImplementedError

    def hessian(self, p: int):
        return None


class LogisticNodeCost(NodeCostOracle):
    def __init__(self, features: np.ndarray, labels: np.ndarray):
        self.features = features
        self.labels = labels
        self._signed = labels[:, None] * features
        self.lipschitz_L = 0.25 * float(np.sum(features**2))
        self.strong_convexity_tau = 0.0

    def eval(self, x):
        return float(np.sum(np.logaddexp(0.0, -(self._signed @ x))))

    def grad(self, x):
        s = expit(-(self._signed @ x))
        return -(s @ self._signed)

    def __repr__(self):
        return f"LogisticNodeCost(q={len(self.labels)}, p={self.features.shape[1]})"


def logistic_node_cost(features, labels) -> LogisticNodeCost:
    """Logistic loss ``sum_l log(1 + exp(-t_l u_l^T x))`` over local samples.

    Parameters
    ----------
    features : array_like, shape (q, p)
        Feature vectors ``u_l``, one per row.
    labels : array_like, shape (q,)
        Labels ``t_l`` in ``{-1, +1}``.

    The declared Lipschitz constant is ``sum_l ||u_l||^2 / 4``; the loss is
    not declared strongly convex.
    """
    u = np.atleast_2d(np.asarray(features, dtype=float))
    t = np.asarray(labels, dtype=float).reshape(-1)
    if u.shape[0] == 0:
        raise ValueError("logistic cost needs at least one sample")
    if u.shape[0] != t.shape[0]:
        raise ValueError(f"{u.shape[0]} feature rows but {t.shape[0]} labels")
    if not np.all(np.isin(t, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    return LogisticNodeCost(u, t)


class QuadraticNodeCost(NodeCostOracle):
    def __init__(self, Q: np.ndarray, b: np.ndarray):
        self.Q = Q
        self.b = b
        eig = np.linalg.eigvalsh(Q)
        self.lipschitz_L = float(eig[-1])
        self.strong_convexity_tau = float(eig[0])

    def eval(self, x):
        return float(0.5 * x @ self.Q @ x + self.b @ x)

    def grad(self, x):
        return self.Q @ x + self.b

    def hessian(self, p):
        return self.Q

    def minimizer(self):
        return np.linalg.solve(self.Q, -self.b)


def quadratic_node_cost(Q, b) -> QuadraticNodeCost:
    """``x^T Q x / 2 + b^T x`` for symmetric positive-definite ``Q``.

    Declared constants are the extreme eigenvalues of ``Q``.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if Q.shape != (b.size, b.size):
        raise ValueError(f"Q has shape {Q.shape}, expected {(b.size, b.size)}")
    if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise ValueError("Q must be symmetric")
    Q = 0.5 * (Q + Q.T)
    if np.linalg.eigvalsh(Q)[0] <= 0:
        raise ValueError("Q must be positive definite")
    return QuadraticNodeCost(Q, b)


class ZeroNodeCost(NodeCostOracle):
    def eval(self, x):
        return 0.0

    def grad(self, x):
        return np.zeros_like(x, dtype=float)

    def hessian(self, p):
        return np.zeros((p, p))


class QuadraticLinkCost(LinkCostOracle):
    """``beta * ||x_i - x_j||^2``."""

    def __init__(self, beta_reg: float):
        self.beta_reg = beta_reg
        self.lipschitz_L = 4.0 * beta_reg
        # Hessian is singular along x_i = x_j
        self.strong_convexity_tau = 0.0

    def eval(self, xi, xj):
        d = np.asarray(xi) - np.asarray(xj)
        return self.beta_reg * np.sum(d * d, axis=-1)

    def grad(self, xi, xj):
        d = 2.0 * self.beta_reg * (np.asarray(xi) - np.asarray(xj))
        return d, -d

    def hessian(self, p):
        eye = np.eye(p)
        return 2.0 * self.beta_reg * np.block([[eye, -eye], [-eye, eye]])

    def __repr__(self):
        return f"QuadraticLinkCost(beta_reg={self.beta_reg})"


def quadratic_link_cost(beta_reg: float) -> QuadraticLinkCost:
    if not beta_reg > 0:
        raise ValueError(f"beta_reg must be positive, got {beta_reg}")
    return QuadraticLinkCost(float(beta_reg))


class QuadraticFormLinkCost(LinkCostOracle):
    """``v^T H v / 2 + h^T v`` on the stacked vector ``v = [x_i; x_j]``."""

    def __init__(self, H: np.ndarray, h: np.ndarray):
        self.H = H
        self.h = h
        self.p = h.size // 2
        eig = np.linalg.eigvalsh(H)
        self.lipschitz_L = float(eig[-1])
        self.strong_convexity_tau = float(max(eig[0], 0.0))

    def eval(self, xi, xj):
        v = np.concatenate([np.asarray(xi, float), np.asarray(xj, float)], axis=-1)
        return 0.5 * np.sum(v * (v @ self.H), axis=-1) + v @ self.h

    def grad(self, xi, xj):
        v = np.concatenate([np.asarray(xi, float), np.asarray(xj, float)], axis=-1)
        gv = v @ self.H + self.h
        return gv[..., : self.p], gv[..., self.p :]

    def hessian(self, p):
        return self.H


def quadratic_form_link_cost(H, h) -> QuadraticFormLinkCost:
    H = np.atleast_2d(np.asarray(H, dtype=float))
    h = np.asarray(h, dtype=float).reshape(-1)
    if H.shape != (h.size, h.size) or h.size % 2:
        raise ValueError("H must be 2p x 2p and h of length 2p")
    if not np.allclose(H, H.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(H).max())):
        raise ValueError("H must be symmetric")
    H = 0.5 * (H + H.T)
    if np.linalg.eigvalsh(H)[0] < 0:
        raise ValueError("H must be positive semidefinite")
    return QuadraticFormLinkCost(H, h)


class ZeroLinkCost(LinkCostOracle):
    def eval(self, xi, xj):
        return np.zeros(np.shape(xi)[:-1])

    def grad(self, xi, xj):
        return np.zeros_like(xi, dtype=float), np.zeros_like(xj, dtype=float)

    def hessian(self, p):
        return np.zeros((2 * p, 2 * p))


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Decomposable network cost: node oracles plus one oracle per directed link.

    Link variables follow the canonical link order of ``network``; ``g_ij`` and
    ``g_ji`` are separate entries of ``link_costs`` (they may be the same
    object, which only matters for batching).
    """

    network: Network
    p: int
    node_costs: tuple
    link_costs: tuple

    def __post_init__(self):
        if len(self.node_costs) != self.network.n:
            raise ValueError(f"{len(self.node_costs)} node costs for {self.network.n} nodes")
        if len(self.link_costs) != self.network.m:
            raise ValueError(f"{len(self.link_costs)} link costs for {self.network.m} directed links")
        object.__setattr__(self, "node_costs", tuple(self.node_costs))
        object.__setattr__(self, "link_costs", tuple(self.link_costs))
        groups: dict[int, tuple[LinkCostOracle, list]] = {}
        for k, oracle in enumerate(self.link_costs):
            groups.setdefault(id(oracle), (oracle, []))[1].append(k)
        object.__setattr__(
            self,
            "_link_groups",
            tuple((oracle, np.array(idx, dtype=np.int64)) for oracle, idx in groups.values()),
        )

    @property
    def n(self) -> int:
        return self.network.n

    @property
    def m(self) -> int:
        return self.network.m

    @classmethod
    def uniform_links(cls, network: Network, p: int, node_costs: Sequence, link_cost) -> "ProblemInstance":
        return cls(network, p, tuple(node_costs), (link_cost,) * network.m)

    def constraint_matrices(self):
        return constraint_matrices(self.network, self.p)

    def grad_f(self, x: np.ndarray) -> np.ndarray:
        out = np.empty((self.n, self.p))
        for i, oracle in enumerate(self.node_costs):
            out[i] = oracle.grad(x[i])
        return out

    def f(self, x: np.ndarray) -> float:
        return float(sum(oracle.eval(x[i]) for i, oracle in enumerate(self.node_costs)))

    def link_grads(self, y: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-link partial gradients of ``g_ij(y_i, z_ij)``, each of shape ``(m, p)``."""
        gy = np.empty((self.m, self.p))
        gz = np.empty((self.m, self.p))
        src = self.network.link_src
        for oracle, idx in self._link_groups:
            a, b = oracle.grad(y[src[idx]], z[idx])
            gy[idx] = a
            gz[idx] = b
        return gy, gz

    def grad_g(self, y: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of ``g(w) = sum_i sum_j g_ij(y_i, z_ij)`` split into ``(d/dy, d/dz)``."""
        gy_links, gz = self.link_grads(y, z)
        return np.asarray(self.network.outgoing_sum @ gy_links), gz

    def g(self, y: np.ndarray, z: np.ndarray) -> float:
        src = self.network.link_src
        total = 0.0
        for oracle, idx in self._link_groups:
            total += float(np.sum(oracle.eval(y[src[idx]], z[idx])))
        return total

    def total_cost(self, x: np.ndarray) -> float:
        return total_cost(self, x)

    def grad_total(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the consensus view ``F(x) = f(x) + g(Bx)``."""
        gy, gz = self.grad_g(x, x[self.network.link_dst])
        return self.grad_f(x) + gy + np.asarray(self.network.incoming_sum @ gz)


def total_cost(inst: ProblemInstance, x) -> float:
    """Network cost ``sum_i f_i(x_i) + sum_i sum_{j in Omega_i} g_ij(x_i, x_j)``."""
    x = np.asarray(x, dtype=float)
    if x.size != inst.n * inst.p:
        raise ValueError(f"x has {x.size} entries, expected n*p = {inst.n * inst.p}")
    x = x.reshape(inst.n, inst.p)
    return inst.f(x) + inst.g(x, x[inst.network.link_dst])


@dataclass(frozen=True)
class NetworkConstants:
    L: float
    K: int
    M: float
    tau: float
    Gamma: float


def network_constants(inst: ProblemInstance) -> NetworkConstants:
    """Constants entering the convergence conditions.

    ``L`` and ``tau`` are the max / min over all declared oracle constants,
    ``K`` is the max degree, ``M = sqrt(L^2 K^2 + L^2 K)`` bounds the
    Lipschitz constant of the stacked link gradient, and ``Gamma`` is the
    spectral norm of ``B``.
    """
    oracles = list(inst.node_costs) + list(inst.link_costs)
    L = max(float(o.lipschitz_L) for o in oracles)
    tau = min(float(o.strong_convexity_tau) for o in oracles)
    K = inst.network.max_degree
    M = math.sqrt(L * L * K * K + L * L * K)
    Gamma = spectral_norm_B(inst.constraint_matrices())
    return NetworkConstants(L=L, K=K, M=M, tau=tau, Gamma=Gamma)


# debug samplers -----------------------------------------------------------


def _as_stacked(oracle, p):
    """Return ``(eval, grad)`` on the stacked argument of a node or link oracle."""
    if isinstance(oracle, LinkCostOracle):
        return (
            lambda v: float(oracle.eval(v[:p], v[p:])),
            lambda v: np.concatenate(oracle.grad(v[:p], v[p:])),
            2 * p,
        )
    return (lambda v: float(oracle.eval(v)), lambda v: np.asarray(oracle.grad(v), float), p)


def check_gradient(oracle, p, rng, n_points=100, step=1e-6, scale=1.0) -> float:
    """Worst relative error between ``grad`` and central finite differences."""
    fun, grad, dim = _as_stacked(oracle, p)
    worst = 0.0
    eye = np.eye(dim)
    for _ in range(n_points):
        v = scale * rng.standard_normal(dim)
        g = grad(v)
        fd = np.array([(fun(v + step * e) - fun(v - step * e)) / (2 * step) for e in eye])
        err = np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1.0)
        worst = max(worst, err)
    return worst


def check_lipschitz(oracle, p, rng, n_pairs=100, scale=1.0) -> float:
    """Largest sampled ratio ``||grad(v) - grad(v')|| / ||v - v'||``."""
    _, grad, dim = _as_stacked(oracle, p)
    worst = 0.0
    for _ in range(n_pairs):
        v = scale * rng.standard_normal(dim)
        v2 = v + scale * rng.standard_normal(dim) * rng.uniform(1e-3, 1.0)
        worst = max(worst, np.linalg.norm(grad(v) - grad(v2)) / np.linalg.norm(v - v2))
    return worst


def check_strong_monotonicity(oracle, p, rng, n_pairs=100, scale=1.0) -> float:
    """Smallest sampled ratio ``(grad(v) - grad(v'))^T (v - v') / ||v - v'||^2``."""
    _, grad, dim = _as_stacked(oracle, p)
    worst = math.inf
    for _ in range(n_pairs):
        v = scale * rng.standard_normal(dim)
        v2 = scale * rng.standard_normal(dim)
        d = v - v2
        worst = min(worst, float((grad(v) - grad(v2)) @ d / (d @ d)))
    return worst

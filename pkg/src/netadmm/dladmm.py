"""Distributed linearized ADMM.

Each round performs three closed-form phases: every node updates ``x_i``
and broadcasts it, then updates ``y_i`` and its outgoing ``z_ij``, then the
multipliers ``lambda_i`` and ``mu_ij``. The phases are written over whole
arrays, but every row of a result depends only on the node's own blocks and
the blocks its neighbours send it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .problem import ProblemInstance

__all__ = [
    "SolverState",
    "SolverConfig",
    "RunResult",
    "init_state",
    "x_update",
    "w_update",
    "dual_update",
    "iterate",
    "run",
    "run_rounds",
    "neighbor_sums",
]

STATUSES = ("converged", "budget-exhausted", "diverged")


@dataclass
class SolverState:
    """Iterate ``u = (x, w, alpha)`` with ``w = (y, z)`` and ``alpha = (lam, mu)``.

    ``x``, ``y``, ``lam`` have shape ``(n, p)``; ``z`` and ``mu`` have shape
    ``(m, p)`` in canonical directed-link order.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    k: int = 0

    @property
    def w(self) -> np.ndarray:
        return np.concatenate([self.y.ravel(), self.z.ravel()])

    @property
    def alpha(self) -> np.ndarray:
        return np.concatenate([self.lam.ravel(), self.mu.ravel()])

    def stacked(self) -> np.ndarray:
        return np.concatenate(
            [self.x.ravel(), self.y.ravel(), self.z.ravel(), self.lam.ravel(), self.mu.ravel()]
        )

    @property
    def x_size(self) -> int:
        return self.x.size

    @classmethod
    def from_stacked(cls, u: np.ndarray, n: int, m: int, p: int, k: int = 0) -> "SolverState":
        u = np.asarray(u, dtype=float)
        if u.size != 3 * n * p + 2 * m * p:
            raise ValueError(f"stacked vector has {u.size} entries, expected {3 * n * p + 2 * m * p}")
        sizes = np.cumsum([n * p, n * p, m * p, n * p])
        x, y, z, lam, mu = np.split(u, sizes)
        return cls(
            x.reshape(n, p).copy(),
            y.reshape(n, p).copy(),
            z.reshape(m, p).copy(),
            lam.reshape(n, p).copy(),
            mu.reshape(m, p).copy(),
            k,
        )

    def copy(self) -> "SolverState":
        return SolverState(
            self.x.copy(), self.y.copy(), self.z.copy(), self.lam.copy(), self.mu.copy(), self.k
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.x, self.y, self.z, self.lam, self.mu))


@dataclass(frozen=True)
class SolverConfig:
    rho: float
    c: float = 1.0
    max_iters: int = 2000
    divergence_guard: float = 1e6

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if not self.divergence_guard > 1:
            raise ValueError("divergence_guard must exceed 1")


@dataclass
class RunResult:
    state: SolverState
    status: str
    iterations: int


def init_state(inst: ProblemInstance) -> SolverState:
    n, m, p = inst.n, inst.m, inst.p
    return SolverState(
        np.zeros((n, p)), np.zeros((n, p)), np.zeros((m, p)), np.zeros((n, p)), np.zeros((m, p)), 0
    )


def neighbor_sums(inst: ProblemInstance, link_values: np.ndarray) -> np.ndarray:
    """``out[i] = sum_{l in Omega_i} v_li``: what node ``i`` receives on its incoming links."""
    return np.asarray(inst.network.incoming_sum @ link_values)


def x_update(state: SolverState, inst: ProblemInstance, cfg: SolverConfig) -> np.ndarray:
    """Closed-form linearized ``x`` step:

    ``x_i' = [-grad f_i(x_i) + c x_i - lam_i - sum_l mu_li + rho y_i + rho sum_l z_li]
    / (c + rho + rho |Omega_i|)``.
    """
    c, rho = cfg.c, cfg.rho
    denom = c + rho + rho * inst.network.degrees.astype(float)
    rhs = (
        -inst.grad_f(state.x)
        + c * state.x
        - state.lam
        - neighbor_sums(inst, state.mu)
        + rho * state.y
        + rho * neighbor_sums(inst, state.z)
    )
    return rhs / denom[:, None]


def w_update(
    state: SolverState, inst: ProblemInstance, cfg: SolverConfig, x_next: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form linearized ``(y, z)`` step, using the freshly broadcast ``x_next``."""
    c, rho = cfg.c, cfg.rho
    gy, gz = inst.grad_g(state.y, state.z)
    y_next = (-gy + c * state.y + state.lam + rho * x_next) / (c + rho)
    z_next = (-gz + c * state.z + state.mu + rho * x_next[inst.network.link_dst]) / (c + rho)
    return y_next, z_next


def dual_update(state: SolverState, inst: ProblemInstance, cfg: SolverConfig, x_next, w_next):
    """Multiplier ascent ``lam += rho (x - y)``, ``mu_ij += rho (x_j - z_ij)``."""
    y_next, z_next = w_next
    rho = cfg.rho
    lam_next = state.lam + rho * (x_next - y_next)
    mu_next = state.mu + rho * (x_next[inst.network.link_dst] - z_next)
    return lam_next, mu_next


def iterate(state: SolverState, inst: ProblemInstance, cfg: SolverConfig) -> SolverState:
    x_next = x_update(state, inst, cfg)
    y_next, z_next = w_update(state, inst, cfg, x_next)
    lam_next, mu_next = dual_update(state, inst, cfg, x_next, (y_next, z_next))
    return SolverState(x_next, y_next, z_next, lam_next, mu_next, state.k + 1)


def run_rounds(
    step: Callable[[SolverState], SolverState],
    state: SolverState,
    max_iters: int,
    divergence_guard: float,
    callback: Optional[Callable[[SolverState], Optional[str]]] = None,
) -> RunResult:
    """Drive ``step`` for up to ``max_iters`` rounds.

    ``callback`` sees ``u^0`` and every later iterate; returning a status
    string ends the run with that status. The run is flagged ``diverged`` as
    soon as an iterate is non-finite or its norm exceeds ``divergence_guard``
    times the scale of the first iterate; the last finite state is kept.
    """
    if callback is not None:
        status = callback(state)
        if status is not None:
            return RunResult(state, status, 0)
    scale = None
    for it in range(1, max_iters + 1):
        new = step(state)
        norm = float(np.linalg.norm(new.stacked()))
        if scale is None:
            scale = max(1.0, norm) if math.isfinite(norm) else 1.0
        if not new.is_finite() or norm > divergence_guard * scale:
            return RunResult(state, "diverged", it - 1)
        state = new
        if callback is not None:
            status = callback(state)
            if status is not None:
                return RunResult(state, status, it)
    return RunResult(state, "budget-exhausted", max_iters)


def run(
    inst: ProblemInstance,
    cfg: SolverConfig,
    callback=None,
    state: Optional[SolverState] = None,
) -> RunResult:
    state = init_state(inst) if state is None else state
    return run_rounds(lambda s: iterate(s, inst, cfg), state, cfg.max_iters, cfg.divergence_guard, callback)

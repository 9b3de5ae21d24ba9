"""Distributed ADMM baseline with per-node subproblems solved iteratively.

The round structure matches :mod:`netadmm.dladmm`: x-subproblems, then the
joint ``(y_i, {z_ij})`` subproblems, then the shared multiplier update.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .dladmm import RunResult, SolverState, dual_update, init_state, run_rounds
from .problem import ProblemInstance

__all__ = [
    "InnerSolverConfig",
    "InnerResult",
    "InnerSolverError",
    "DadmmConfig",
    "armijo_descent",
    "x_subproblem",
    "yz_subproblem",
    "iterate",
    "run",
]


class InnerSolverError(RuntimeError):
    """Inner solver hit its iteration cap; carries the best iterate found."""

    def __init__(self, message, best, residual):
        super().__init__(message)
        self.best = best
        self.residual = residual


@dataclass(frozen=True)
class InnerSolverConfig:
    grad_tol: float = 1e-10
    max_inner_iters: int = 10_000
    method: str = "gd"  # "gd" or "exact_quadratic"

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.method not in ("gd", "exact_quadratic"):
            raise ValueError(f"unknown inner method {self.method!r}")


@dataclass(frozen=True)
class DadmmConfig:
    rho: float
    max_iters: int = 400
    divergence_guard: float = 1e6
    inner: InnerSolverConfig = InnerSolverConfig()

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")


class InnerResult(NamedTuple):
    point: np.ndarray
    iterations: int
    grad_norm: float


def armijo_descent(
    fun,
    grad,
    x0,
    grad_tol,
    max_iters,
    step0=1.0,
    shrink=0.5,
    slope=1e-4,
    max_backtracks=60,
) -> InnerResult:
    """Gradient descent with Armijo backtracking until ``||grad|| <= grad_tol``.

    The first trial step is ``step0``; later ones start from the
    Barzilai-Borwein step ``s^T s / s^T y`` capped at ``step0``, because
    restarting at a fixed step can settle on steps near ``2 / L`` that barely
    contract. Once the predicted decrease falls below the resolution of
    ``fun`` a step is accepted when it reduces the gradient norm instead,
    since function values can no longer certify progress there.
    """
    x = np.array(x0, dtype=float)
    g = grad(x)
    gnorm = float(np.linalg.norm(g))
    fx = fun(x)
    best, best_norm = x.copy(), gnorm
    trial = step0
    it = 0
    while gnorm > grad_tol:
        if it >= max_iters:
            raise InnerSolverError(
                f"inner solver stopped at gradient norm {best_norm:.3e} after {max_iters} iterations",
                best,
                best_norm,
            )
        gg = gnorm * gnorm
        resolution = 64 * np.finfo(float).eps * max(1.0, abs(fx))
        t = trial
        for _ in range(max_backtracks):
            x_new = x - t * g
            f_new = fun(x_new)
            if t * gg < resolution:
                # function values are noise at this scale
                g_new = grad(x_new)
                if np.linalg.norm(g_new) < gnorm:
                    break
            elif f_new <= fx - slope * t * gg:
                g_new = grad(x_new)
                break
            t *= shrink
        else:
            raise InnerSolverError("line search failed to find an acceptable step", best, best_norm)
        sk, yk = x_new - x, g_new - g
        sy = float(sk @ yk)
        trial = min(step0, float(sk @ sk) / sy) if sy > 0 else step0
        x, g, fx = x_new, g_new, f_new
        gnorm = float(np.linalg.norm(g))
        if gnorm < best_norm:
            best, best_norm = x.copy(), gnorm
        it += 1
    return InnerResult(x, it, gnorm)


def _newton_quadratic(grad, hess, x0) -> InnerResult:
    x0 = np.asarray(x0, dtype=float)
    x = x0 - np.linalg.solve(hess, grad(x0))
    return InnerResult(x, 1, float(np.linalg.norm(grad(x))))


def _x_local_terms(i, state, inst, rho):
    """Linear coefficient and proximal anchors of node ``i``'s x-subproblem."""
    incoming = inst.network.in_links(i)
    lin = state.lam[i] + state.mu[incoming].sum(axis=0)
    anchors = np.vstack([state.y[i][None, :], state.z[incoming]])
    return lin, anchors


def x_subproblem(
    i: int,
    state: SolverState,
    inst: ProblemInstance,
    cfg: DadmmConfig,
    inner: Optional[InnerSolverConfig] = None,
    x0=None,
) -> InnerResult:
    """Minimize node ``i``'s x-subproblem

    ``f_i(x) + (lam_i + sum_l mu_li)^T x + rho/2 ||x - y_i||^2 + rho/2 sum_l ||x - z_li||^2``

    warm-started at ``x0`` (default: the current ``x_i``).
    """
    inner = cfg.inner if inner is None else inner
    rho = cfg.rho
    f_i = inst.node_costs[i]
    lin, anchors = _x_local_terms(i, state, inst, rho)

    def fun(x):
        d = x[None, :] - anchors
        return f_i.eval(x) + lin @ x + 0.5 * rho * float(np.sum(d * d))

    def grad(x):
        return f_i.grad(x) + lin + rho * (len(anchors) * x - anchors.sum(axis=0))

    start = state.x[i] if x0 is None else x0
    if inner.method == "exact_quadratic":
        H = f_i.hessian(inst.p)
        if H is None:
            raise ValueError(f"node {i} cost has no constant Hessian; exact_quadratic needs quadratic costs")
        if np.linalg.norm(grad(start)) <= inner.grad_tol:
            return InnerResult(np.array(start, dtype=float), 0, float(np.linalg.norm(grad(start))))
        return _newton_quadratic(grad, H + rho * len(anchors) * np.eye(inst.p), start)
    return armijo_descent(fun, grad, start, inner.grad_tol, inner.max_inner_iters)


def yz_subproblem(
    i: int,
    state: SolverState,
    inst: ProblemInstance,
    cfg: DadmmConfig,
    x_next: np.ndarray,
    inner: Optional[InnerSolverConfig] = None,
) -> tuple[np.ndarray, np.ndarray, InnerResult]:
    """Jointly minimize over ``y_i`` and the outgoing ``z_ij``

    ``sum_j g_ij(y_i, z_ij) - lam_i^T y_i - sum_j mu_ij^T z_ij
    + rho/2 ||y_i - x_i'||^2 + rho/2 sum_j ||z_ij - x_j'||^2``.

    Returns ``(y_i, z_out, info)`` with ``z_out`` ordered like
    ``inst.network.out_links(i)``.
    """
    inner = cfg.inner if inner is None else inner
    rho, p = cfg.rho, inst.p
    out = inst.network.out_links(i)
    d = len(out)
    oracles = [inst.link_costs[k] for k in out]
    targets_z = x_next[inst.network.link_dst[out]]
    lam_i, mu_out = state.lam[i], state.mu[out]

    def split(v):
        v = v.reshape(d + 1, p)
        return v[0], v[1:]

    def fun(v):
        y, z = split(v)
        val = sum(float(o.eval(y, z[k])) for k, o in enumerate(oracles))
        val += -lam_i @ y - float(np.sum(mu_out * z))
        val += 0.5 * rho * (float(np.sum((y - x_next[i]) ** 2)) + float(np.sum((z - targets_z) ** 2)))
        return val

    def grad(v):
        y, z = split(v)
        gy = -lam_i + rho * (y - x_next[i])
        gz = -mu_out + rho * (z - targets_z)
        for k, o in enumerate(oracles):
            a, b = o.grad(y, z[k])
            gy = gy + a
            gz[k] += b
        return np.concatenate([gy, gz.ravel()])

    start = np.concatenate([state.y[i], state.z[out].ravel()])
    if inner.method == "exact_quadratic":
        if np.linalg.norm(grad(start)) <= inner.grad_tol:
            res = InnerResult(start, 0, float(np.linalg.norm(grad(start))))
        else:
            H = rho * np.eye((d + 1) * p)
            for k, o in enumerate(oracles):
                Hk = o.hessian(p)
                if Hk is None:
                    raise ValueError("link cost has no constant Hessian; exact_quadratic needs quadratic costs")
                zk = slice((k + 1) * p, (k + 2) * p)
                H[:p, :p] += Hk[:p, :p]
                H[:p, zk] += Hk[:p, p:]
                H[zk, :p] += Hk[p:, :p]
                H[zk, zk] += Hk[p:, p:]
            res = _newton_quadratic(grad, H, start)
    else:
        res = armijo_descent(fun, grad, start, inner.grad_tol, inner.max_inner_iters)
    y, z = split(res.point)
    return y.copy(), z.copy(), res


def iterate(state: SolverState, inst: ProblemInstance, cfg: DadmmConfig, inner=None, stats=None) -> SolverState:
    """One synchronous DADMM round.

    ``stats``, when given, is a list that receives the :class:`InnerResult`
    of every subproblem solved in this round.
    """
    inner = cfg.inner if inner is None else inner
    x_next = np.empty_like(state.x)
    for i in range(inst.n):
        res = x_subproblem(i, state, inst, cfg, inner)
        x_next[i] = res.point
        if stats is not None:
            stats.append(res)
    y_next = np.empty_like(state.y)
    z_next = np.empty_like(state.z)
    for i in range(inst.n):
        y_i, z_out, res = yz_subproblem(i, state, inst, cfg, x_next, inner)
        y_next[i] = y_i
        z_next[inst.network.out_links(i)] = z_out
        if stats is not None:
            stats.append(res)
    lam_next, mu_next = dual_update(state, inst, cfg, x_next, (y_next, z_next))
    return SolverState(x_next, y_next, z_next, lam_next, mu_next, state.k + 1)


def run(inst: ProblemInstance, cfg: DadmmConfig, callback=None, state=None) -> RunResult:
    state = init_state(inst) if state is None else state
    return run_rounds(lambda s: iterate(s, inst, cfg), state, cfg.max_iters, cfg.divergence_guard, callback)

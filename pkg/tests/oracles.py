"""Independent dense re-implementations used as test oracles."""

import numpy as np


def stacked_admm_oracle(inst, rho, iters):
    """Generic two-block ADMM on min f(x) + g(w) s.t. Bx = w, coded with dense matrices.

    Needs quadratic node and link costs; returns the stacked ``(x, w, alpha)``
    after each of ``iters`` rounds.
    """
    n, m, p = inst.n, inst.m, inst.p
    B = inst.constraint_matrices().dense_B()
    Q = np.zeros((n * p, n * p))
    bq = np.zeros(n * p)
    for i, o in enumerate(inst.node_costs):
        Q[i * p : (i + 1) * p, i * p : (i + 1) * p] = o.Q
        bq[i * p : (i + 1) * p] = o.b
    dim_w = (n + m) * p
    Hg = np.zeros((dim_w, dim_w))
    hg = np.zeros(dim_w)
    for k, ((i, _), o) in enumerate(zip(inst.network.directed_links, inst.link_costs)):
        idx = np.r_[i * p : (i + 1) * p, (n + k) * p : (n + k + 1) * p]
        Hg[np.ix_(idx, idx)] += o.H
        hg[idx] += o.h
    x, w, a = np.zeros(n * p), np.zeros(dim_w), np.zeros(dim_w)
    out = []
    for _ in range(iters):
        x = np.linalg.solve(Q + rho * B.T @ B, -bq - B.T @ a + rho * B.T @ w)
        w = np.linalg.solve(Hg + rho * np.eye(dim_w), -hg + a + rho * B @ x)
        a = a + rho * (B @ x - w)
        out.append(np.concatenate([x, w, a]))
    return out


def linearized_foc_residual(inst, cfg, s, s1):
    """Largest violation of the stacked first-order conditions of one linearized round ``s -> s1``."""
    B = inst.constraint_matrices().dense_B()
    x, x1 = s.x.ravel(), s1.x.ravel()
    w, w1, a, a1 = s.w, s1.w, s.alpha, s1.alpha
    gf = inst.grad_f(s.x).ravel()
    gy, gz = inst.grad_g(s.y, s.z)
    gg = np.concatenate([gy.ravel(), gz.ravel()])
    c, rho = cfg.c, cfg.rho
    r_x = gf + c * (x1 - x) + B.T @ a + rho * (B.T @ B @ x1 - B.T @ w)
    r_w = gg + c * (w1 - w) - a + rho * (w1 - B @ x1)
    r_a = a1 - a - rho * (B @ x1 - w1)
    return max(np.abs(r).max() for r in (r_x, r_w, r_a))

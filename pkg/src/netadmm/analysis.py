"""Convergence conditions, the linear-rate constant and per-run certification.

Everything here is a pure function of the network constants ``(L, M, K,
tau, Gamma)`` and the algorithm parameters ``(c, rho)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .problem import NetworkConstants

__all__ = [
    "MU_GRID",
    "BracketError",
    "RateCertificate",
    "CertificationReport",
    "check_theorem1",
    "condition_t2",
    "rate_lhs",
    "rate_rhs",
    "solve_beta",
    "compute_delta",
    "rate_certificate",
    "certify_run",
]

MU_GRID = (1.1, 1.25, 1.5, 2.0, 3.0, 5.0, 10.0)


class BracketError(RuntimeError):
    """The rate equation does not change sign over its bracket."""


def check_theorem1(consts: NetworkConstants, c: float, rho: float) -> bool:
    """Sufficient condition ``c > M/2 + rho`` for convergence (strict)."""
    return bool(c > consts.M / 2 + rho)


def condition_t2(consts: NetworkConstants, c: float, rho: float) -> bool:
    """Sufficient condition ``c > max{L^2/(2 tau), rho + M^2/(2 tau)}`` for a linear rate."""
    tau = consts.tau
    if not tau > 0:
        return False
    return bool(c > max(consts.L**2 / (2 * tau), rho + consts.M**2 / (2 * tau)))


def _lhs_denominator(consts, c, rho, mu):
    return (c + rho) / 2 + 3 * rho * mu / (mu - 1) + 2 * consts.M**2 * mu / rho


def rate_lhs(beta, consts: NetworkConstants, c, rho, mu):
    return (consts.tau - beta / 2) / _lhs_denominator(consts, c, rho, mu)


def rate_rhs(beta, consts: NetworkConstants, c, rho, mu):
    M2 = consts.M**2
    num = (c - rho) / 2 - M2 / (2 * beta)
    return num / (3 * c * c * mu / (rho * (mu - 1)) + 2 * M2 * mu / rho)


def _check_args(consts, c, rho, mu):
    if not mu > 1:
        raise ValueError(f"mu must exceed 1, got {mu}")
    if not (c > 0 and rho > 0):
        raise ValueError("c and rho must be positive")
    if not condition_t2(consts, c, rho):
        raise ValueError(
            f"linear-rate condition fails for c={c}, rho={rho} (L={consts.L}, M={consts.M}, tau={consts.tau})"
        )


def solve_beta(consts: NetworkConstants, c: float, rho: float, mu: float = 2.0, tol: float = 0.0) -> float:
    """Root of ``rate_lhs(beta) = rate_rhs(beta)`` on ``(M^2/(c - rho), 2 tau)``.

    The left side decreases to zero at ``2 tau`` and the right side rises
    from zero at ``M^2/(c - rho)``, so plain bisection is guaranteed to work.
    Bisection stops once the bracket is narrower than ``tol`` or cannot be
    split any further in floating point.

    Raises
    ------
    ValueError
        If the linear-rate condition fails or ``mu <= 1``.
    BracketError
        If the difference does not change sign over the bracket.
    """
    _check_args(consts, c, rho, mu)
    lo = consts.M**2 / (c - rho)
    hi = 2 * consts.tau

    def h(b):
        return rate_lhs(b, consts, c, rho, mu) - rate_rhs(b, consts, c, rho, mu)

    # the formulas are singular at beta = 0 when M = 0
    h_lo = h(lo) if lo > 0 else math.inf
    h_hi = h(hi)
    if not (h_lo > 0 and h_hi < 0):
        raise BracketError(f"rate equation keeps its sign on [{lo}, {hi}]: h = {h_lo}, {h_hi}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if h(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lo if abs(h(lo)) <= abs(h(hi)) else hi


@dataclass(frozen=True)
class RateCertificate:
    """Outcome of the rate analysis for one ``(c, rho)`` pair.

    ``beta``, ``delta`` and ``contraction_factor`` belong to the requested
    ``mu``; the ``best_*`` fields come from scanning :data:`MU_GRID`. All
    rate fields are ``None`` when the linear-rate condition fails.
    """

    condition_t1: bool
    condition_t2: bool
    mu: float
    beta: Optional[float] = None
    delta: Optional[float] = None
    contraction_factor: Optional[float] = None
    delta_terms: Optional[tuple[float, float, float]] = None
    best_mu: Optional[float] = None
    best_beta: Optional[float] = None
    best_delta: Optional[float] = None

    @property
    def certified_delta(self) -> Optional[float]:
        """Strongest available rate constant."""
        return self.best_delta if self.best_delta is not None else self.delta

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["delta_terms"] is not None:
            d["delta_terms"] = list(d["delta_terms"])
        return d


def _delta_terms(consts, c, rho, mu, beta, Gamma):
    tau, L = consts.tau, consts.L
    first = (tau - L * L / (2 * c)) / (c / 2 + 3 * rho * mu * Gamma**2 / (mu - 1))
    second = (tau - beta / 2) / _lhs_denominator(consts, c, rho, mu)
    return first, second, 0.25


def compute_delta(
    consts: NetworkConstants,
    c: float,
    rho: float,
    mu: float = 2.0,
    Gamma: Optional[float] = None,
) -> RateCertificate:
    """Rate constant ``delta`` at ``mu`` plus the best value over :data:`MU_GRID`.

    ``Gamma`` defaults to ``consts.Gamma``. Raises ``ValueError`` when the
    linear-rate condition fails.
    """
    _check_args(consts, c, rho, mu)
    Gamma = consts.Gamma if Gamma is None else Gamma
    beta = solve_beta(consts, c, rho, mu)
    terms = _delta_terms(consts, c, rho, mu, beta, Gamma)
    delta = min(terms)
    best = (mu, beta, delta)
    for m in MU_GRID:
        b = solve_beta(consts, c, rho, m)
        d = min(_delta_terms(consts, c, rho, m, b, Gamma))
        if d > best[2]:
            best = (m, b, d)
    return RateCertificate(
        condition_t1=check_theorem1(consts, c, rho),
        condition_t2=True,
        mu=mu,
        beta=beta,
        delta=delta,
        contraction_factor=1.0 / (1.0 + delta),
        delta_terms=terms,
        best_mu=best[0],
        best_beta=best[1],
        best_delta=best[2],
    )


def rate_certificate(consts: NetworkConstants, c: float, rho: float, mu: float = 2.0) -> RateCertificate:
    """Like :func:`compute_delta` but reports a failed condition instead of raising."""
    if condition_t2(consts, c, rho):
        return compute_delta(consts, c, rho, mu)
    return RateCertificate(condition_t1=check_theorem1(consts, c, rho), condition_t2=False, mu=mu)


@dataclass(frozen=True)
class CertificationReport:
    condition_t1: bool
    condition_t2: bool
    label: str  # "certified" or "empirical-only"
    steps: int
    descent_fraction: Optional[float]
    descent_exempt: bool
    contraction_fraction: Optional[float]
    delta: Optional[float]
    empirical_factor: Optional[float]
    slack: float

    def to_dict(self) -> dict:
        return asdict(self)


def certify_run(
    lambda_dists: Sequence[float],
    certificate: RateCertificate,
    slack: float = 1e-9,
    burn_in: int = 5,
) -> CertificationReport:
    """Check a trace of ``||u^k - u*||_Lambda`` against the descent and rate bounds.

    Both inequalities are tested on squared distances with additive slack
    ``slack * ||u^0 - u*||_Lambda^2``. A step from zero to zero counts as
    satisfied. Runs that violate ``c > M/2 + rho`` are exempt from the descent
    check; runs without a rate certificate are labelled ``empirical-only``.
    The empirical factor is the largest squared-distance ratio after
    ``burn_in`` iterations.
    """
    d2 = np.asarray(lambda_dists, dtype=float) ** 2
    finite = np.isfinite(d2)
    if not finite.all():
        d2 = d2[: int(np.argmin(finite))]
    steps = max(d2.size - 1, 0)
    tol = slack * (d2[0] if d2.size else 0.0)
    prev, nxt = d2[:-1], d2[1:]

    descent = None
    if certificate.condition_t1 and steps:
        descent = float(np.mean(nxt <= prev + tol))

    delta = certificate.certified_delta
    contraction = None
    if certificate.condition_t2 and delta is not None and steps:
        contraction = float(np.mean(nxt <= prev / (1.0 + delta) + tol))

    factor = None
    if d2.size > burn_in + 1:
        p, q = prev[burn_in:], nxt[burn_in:]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(p > 0, q / np.where(p > 0, p, 1.0), np.where(q > 0, np.inf, 0.0))
        factor = float(ratios.max())

    return CertificationReport(
        condition_t1=certificate.condition_t1,
        condition_t2=certificate.condition_t2,
        label="certified" if contraction is not None else "empirical-only",
        steps=steps,
        descent_fraction=descent,
        descent_exempt=not certificate.condition_t1,
        contraction_fraction=contraction,
        delta=delta,
        empirical_factor=factor,
        slack=slack,
    )

"""Volterra integral inequalities: resolvent solver, series constant, and a
counterexample to a bound that circulates in the literature.

For nonnegative f, g, h with conjugate exponents 1/p + 1/q = 1, a bounded u
satisfying

    u(t) <= f(t) + int_0^t g(t, s) h(s) u(s) ds

obeys u(t) <= E * sup_{s<=t} f(s), where

    E = sum_{n>=0} (n!)^(-1/q) * [sup_{s<=t} ||g(s,.)||_{L^p(0,s)}]^n
                                * ||h||_{L^q(0,t)}^n,

a convergent series thanks to the factorial gain of the iterated kernels.
The alternative bound

    u(t) <= f(t) + int_0^t f(s) g(t-s) exp( int_s^t g(t-r) dr ) ds

fails for decreasing kernels: with u = 1 + t, f = 1, g = exp(-t), the left
side satisfies the inequality with equality while the right side equals
exp(1 - exp(-t)) < 1 + t for every t > 0.  refute_flawed_inequality checks
this gap on a grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class SeriesDiverged(RuntimeError):
    """Series terms grew for many consecutive orders (should be impossible)."""


class BoundViolated(RuntimeError):
    """The proven bound failed at a node: an implementation bug signal."""


@dataclass
class VolterraProblem:
    """u(t) = f(t) + int_0^t g(t,s) h(s) u(s) ds on (0, T).

    The kernel is g(t,s) = (t-s)^(-beta) * g_smooth(t,s) with beta in [0,1);
    pass beta = 0 for regular kernels.  Exponents p, q are conjugate and the
    singular power must satisfy beta * p < 1 so ||g(t,.)||_{L^p} is finite.
    """

    f: callable
    g_smooth: callable  # smooth factor g0(t, s)
    h: callable
    horizon: float
    steps: int
    p: float = 2.0
    q: float = 2.0
    beta: float = 0.0

    def __post_init__(self):
        if abs(1.0 / self.p + 1.0 / self.q - 1.0) > 1e-12:
            raise ValueError("p and q must be conjugate")
        if not (1.0 < self.p < math.inf and 1.0 < self.q < math.inf):
            raise ValueError("exponents must lie in (1, inf)")
        if not (0.0 <= self.beta < 1.0):
            raise ValueError("singularity power must lie in [0, 1)")
        if self.beta * self.p >= 1.0:
            raise ValueError("need beta * p < 1 for an L^p kernel")

    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


def _power_moments(tau_lo: np.ndarray, tau_hi: np.ndarray, beta: float):
    """int tau^-beta dtau and int tau^(1-beta) dtau over [tau_lo, tau_hi]."""
    e0, e1 = 1.0 - beta, 2.0 - beta
    m0 = (tau_hi**e0 - tau_lo**e0) / e0
    m1 = (tau_hi**e1 - tau_lo**e1) / e1
    return m0, m1


def solve_volterra_equality(problem: VolterraProblem) -> np.ndarray:
    """Time-step u(t) = f(t) + int_0^t g h u ds with product trapezoidal
    quadrature: on each cell the smooth part of the integrand is linearly
    interpolated and integrated exactly against the (t-s)^-beta factor, so
    the endpoint singularity costs no accuracy.  Returns u at the nodes.

    This u is the extremal case of the integral inequality (equality), the
    natural stress test for the series bound.
    """
    t = problem.nodes()
    m = problem.steps
    dt = problem.horizon / m
    beta = problem.beta
    u = np.empty(m + 1)
    u[0] = problem.f(t[0])
    h_vals = problem.h(t)
    for k in range(1, m + 1):
        tk = t[k]
        s = t[: k + 1]
        phi_known = problem.g_smooth(tk, s) * h_vals[: k + 1]  # smooth factor
        tau_hi = tk - s[:-1]
        tau_lo = tk - s[1:]
        m0, m1 = _power_moments(tau_lo, tau_hi, beta)
        if not np.all(np.isfinite(m0)):
            raise ValueError("kernel singularity too strong for quadrature")
        # linear interpolation on cell [s_j, s_j+1]:
        #   phi(s) = phi_j (tau - tau_lo)/dt + phi_{j+1} (tau_hi - tau)/dt
        # wait:     tau = tk - s decreases as s increases; express in tau:
        #   phi(tau) = phi_{j+1} + (phi_j - phi_{j+1}) (tau - tau_lo)/dt
        w_right = (m0 * tau_hi - m1) / dt  # weight on phi_j   (left in s)
        w_left = (m1 - m0 * tau_lo) / dt  # weight on phi_{j+1} (right in s)
        acc = float(np.sum(w_right * phi_known[:-1] * u[:-1][: k]))
        acc += float(np.sum(w_left[:-1] * phi_known[1:k] * u[1:k]))
        c_impl = w_left[-1] * phi_known[k]
        denom = 1.0 - c_impl
        if denom <= 0:
            raise ValueError("implicit step not solvable; refine the grid")
        u[k] = (problem.f(tk) + acc) / denom
    return u


def kernel_lp_sup(problem: VolterraProblem, t: float, n_quad: int = 4096) -> float:
    """sup_{s <= t} ||g(s, .)||_{L^p(0, s)} by product quadrature."""
    p, beta = problem.p, problem.beta
    best = 0.0
    s_grid = np.linspace(0.0, t, 33)[1:]
    for s in s_grid:
        r = np.linspace(0.0, s, n_quad + 1)
        smooth_p = problem.g_smooth(s, r) ** p
        tau_hi = s - r[:-1]
        tau_lo = s - r[1:]
        e0 = 1.0 - beta * p
        m0 = (tau_hi**e0 - tau_lo**e0) / e0
        avg = 0.5 * (smooth_p[:-1] + smooth_p[1:])
        best = max(best, float(np.sum(m0 * avg)) ** (1.0 / p))
    return best


def h_lq_norm(problem: VolterraProblem, t: float, n_quad: int = 4096) -> float:
    r = np.linspace(0.0, t, n_quad + 1)
    vals = problem.h(r) ** problem.q
    return float(np.trapezoid(vals, r)) ** (1.0 / problem.q)


def gronwall_constant(
    g_norm: float,
    h_norm: float,
    q: float,
    truncation: int = 400,
    tol: float = 1e-12,
) -> tuple[float, float]:
    """Partial sum of  sum_n (n!)^(-1/q) (g_norm h_norm)^n  plus a remainder
    bound from the term ratio x/(n+1)^(1/q), valid once the ratio is < 1."""
    x = g_norm * h_norm
    total, term = 1.0, 1.0
    grow_streak = 0
    n = 0
    while n < truncation:
        n += 1
        new_term = term * x / n ** (1.0 / q)
        if new_term > term:
            grow_streak += 1
            if grow_streak >= 10:
                raise SeriesDiverged("terms grew for 10 consecutive orders")
        else:
            grow_streak = 0
        term = new_term
        total += term
        if term < tol:
            break
    ratio = x / (n + 1) ** (1.0 / q)
    remainder = term * ratio / (1.0 - ratio) if ratio < 1.0 else math.inf
    return total, remainder


@dataclass
class GronwallReport:
    nodes: np.ndarray
    u: np.ndarray
    bound: np.ndarray
    margins: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(self.margins >= 0.0))


def verify_gronwall_bound(
    problem: VolterraProblem,
    slack: float = 1e-8,
    g_norm: float | None = None,
    h_norm: float | None = None,
) -> GronwallReport:
    """Check u(t) <= E(t) sup_{s<=t} f(s) at every node for the extremal u.

    Norm inputs may be supplied analytically or left to quadrature.  Raises
    BoundViolated with the offending node if the margin goes negative
    beyond the slack.
    """
    t = problem.nodes()
    u = solve_volterra_equality(problem)
    f_sup = np.maximum.accumulate(problem.f(t))
    bound = np.empty_like(u)
    bound[0] = f_sup[0]
    for k in range(1, len(t)):
        gn = kernel_lp_sup(problem, t[k]) if g_norm is None else g_norm
        hn = h_lq_norm(problem, t[k]) if h_norm is None else h_norm
        e_const, _ = gronwall_constant(gn, hn, problem.q)
        bound[k] = e_const * f_sup[k]
    margins = bound - u + slack
    report = GronwallReport(t, u, bound, margins)
    if not report.passed:
        k_bad = int(np.argmin(margins))
        raise BoundViolated(
            f"bound fails at t = {t[k_bad]:.6g}: u = {u[k_bad]:.6g} > "
            f"bound = {bound[k_bad]:.6g}"
        )
    return report


@dataclass
class RefutationReport:
    nodes: np.ndarray
    lhs: np.ndarray  # the extremal solution 1 + t
    rhs: np.ndarray  # exp(1 - exp(-t))
    min_gap_after: float  # strict margin over t >= 0.1

    @property
    def passed(self) -> bool:
        return bool(np.all(self.lhs[self.nodes > 0] > self.rhs[self.nodes > 0]))


def refute_flawed_inequality(
    horizon: float = 5.0, steps: int = 1000
) -> RefutationReport:
    """Evaluate both sides of the faulty bound for u = 1 + t, f = 1,
    g = exp(-t): the claimed majorant equals exp(1 - exp(-t)), which lies
    strictly below the true solution for every t > 0."""
    t = np.linspace(0.0, horizon, steps + 1)
    lhs = 1.0 + t
    rhs = np.exp(1.0 - np.exp(-t))
    tail = t >= 0.1
    min_gap = float((lhs[tail] - rhs[tail]).min())
    return RefutationReport(t, lhs, rhs, min_gap)

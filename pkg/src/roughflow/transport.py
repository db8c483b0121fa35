"""Representation-formula solvers for advected scalars and measures.

The advected scalar is  u_t(x) = u_in(X_t^{-1}(x)), evaluated per sample
path by running the reversed-time flow from each evaluation point; the
advected measure is the particle pushforward  mu_t = (X_t)_# mu_in, which
moves particle positions and keeps weights.  Both are exact consequences of
the flow, so the verification work lives in the dual pairing (the integral
of u against mu is conserved along paths) and in discretized weak-form
identities integrated against smooth bumps.

Weak forms are checked in Itô form.  The Stratonovich noise terms convert
with one-half quadratic-variation corrections,

    scalar:   ... - int (int theta du) dW - 1/2 int int grad(theta).du dt,
    measure:  ... + int (int grad(theta) dmu) dW + 1/2 int int Lap(theta) dmu dt,

derived by applying each equation to the derivatives of the test function;
the residual tests below confirm these are the constants that balance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .brownian import BrownianDriver
from .grids import Torus
from .flows import FlowEnsemble, _SingleSampleDriver


# ---------------------------------------------------------------------------
# initial data


@dataclass
class BVInitialData:
    """Locally bounded initial scalar with optional jump-set geometry.

    kind 'smooth' carries closed-form point evaluation and gradient; the
    indicator kinds carry a discretization of their jump set (points and
    perimeter weights) used by the total-variation bound.
    """

    kind: str
    torus: Torus
    evaluate: callable  # (..., d) -> (...,)
    gradient: callable | None = None
    jump_points: np.ndarray | None = None  # (J, d)
    jump_weights: np.ndarray | None = None  # (J,)
    bounds: tuple[float, float] = (0.0, 1.0)

    def perimeter(self) -> float:
        if self.jump_weights is None:
            raise ValueError("no jump set recorded")
        return float(np.sum(self.jump_weights))


def smooth_data(torus: Torus, fn, grad_fn, bounds=None) -> BVInitialData:
    if bounds is None:
        probe = fn(torus.flat_coords())
        bounds = (float(probe.min()), float(probe.max()))
    return BVInitialData("smooth", torus, fn, grad_fn, bounds=bounds)


def box_indicator(
    torus: Torus, lo, hi, boundary_points_per_edge: int = 256
) -> BVInitialData:
    """Indicator of the axis box prod [lo_i, hi_i), reduced mod L."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    d = torus.dimension
    if np.any(hi <= lo) or np.any(hi - lo >= torus.length):
        raise ValueError("box must have positive side lengths below L")

    def inside(x):
        w = np.mod(np.asarray(x, dtype=float) - lo, torus.length)
        return np.all(w < (hi - lo), axis=-1).astype(float)

    if d == 1:
        jump_points = np.array([[lo[0]], [hi[0]]])
        jump_weights = np.array([1.0, 1.0])
    else:
        n = boundary_points_per_edge
        segs = []
        wts = []
        for axis in range(2):
            other = 1 - axis
            ts = (np.arange(n) + 0.5) / n * (hi[other] - lo[other]) + lo[other]
            seg_w = (hi[other] - lo[other]) / n
            for side_val in (lo[axis], hi[axis]):
                pts = np.empty((n, 2))
                pts[:, axis] = side_val
                pts[:, other] = ts
                segs.append(pts)
                wts.append(np.full(n, seg_w))
        jump_points = np.concatenate(segs)
        jump_weights = np.concatenate(wts)
    return BVInitialData(
        "indicator-of-box",
        torus,
        inside,
        None,
        jump_points,
        jump_weights,
        bounds=(0.0, 1.0),
    )


def linear_combination(parts: list[tuple[float, BVInitialData]]) -> BVInitialData:
    """Pointwise combination sum_k c_k u_k (piecewise-constant data etc.)."""
    torus = parts[0][1].torus

    def ev(x):
        return sum(c * u.evaluate(x) for c, u in parts)

    lo = sum(min(c * u.bounds[0], c * u.bounds[1]) for c, u in parts)
    hi = sum(max(c * u.bounds[0], c * u.bounds[1]) for c, u in parts)
    grad = None
    if all(u.gradient is not None for _, u in parts):
        def grad(x):  # noqa: F811
            return sum(c * u.gradient(x) for c, u in parts)

    return BVInitialData("piecewise-constant", torus, ev, grad, bounds=(lo, hi))


@dataclass
class ParticleMeasure:
    """Weighted particle cloud standing in for a signed measure."""

    positions: np.ndarray  # (n, d)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.positions.shape[0],):
            raise ValueError("one weight per particle")

    @property
    def total_variation(self) -> float:
        return float(np.sum(np.abs(self.weights)))

    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def integrate(self, fn) -> float:
        return float(np.sum(self.weights * fn(self.positions)))


@dataclass
class PushedMeasure:
    """Per-sample pushforward: positions gain a sample axis."""

    positions: np.ndarray  # (n, S, d)
    weights: np.ndarray  # (n,)

    @property
    def n_samples(self) -> int:
        return self.positions.shape[1]

    def integrate(self, fn) -> np.ndarray:
        """int f dmu per sample; returns (S,)."""
        vals = fn(self.positions)  # (n, S)
        return np.einsum("n,ns->s", self.weights, vals)

    def sample(self, s: int) -> ParticleMeasure:
        return ParticleMeasure(self.positions[:, s, :], self.weights.copy())


class BumpTestFunction:
    """C-infinity bump exp(1 - 1/(1 - |x-c|^2/r^2)) with closed-form
    gradient and Laplacian; support must fit strictly inside the torus."""

    def __init__(self, torus: Torus, center, radius: float):
        if radius <= 0 or radius >= torus.length / 2:
            raise ValueError("bump support must sit inside the fundamental domain")
        self.torus = torus
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = radius

    def _parts(self, x):
        w = self.torus.displacement(np.asarray(x, dtype=float), self.center)
        s = np.sum(w * w, axis=-1) / self.radius**2
        inside = s < 1.0
        phi = np.zeros(s.shape)
        phi[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
        return w, s, inside, phi

    def value(self, x):
        return self._parts(x)[3]

    def gradient(self, x):
        w, s, inside, phi = self._parts(x)
        out = np.zeros(w.shape)
        factor = np.zeros(s.shape)
        factor[inside] = -phi[inside] / (1.0 - s[inside]) ** 2
        out = factor[..., None] * (2.0 * w / self.radius**2)
        return out

    def laplacian(self, x):
        w, s, inside, phi = self._parts(x)
        d = self.torus.dimension
        out = np.zeros(s.shape)
        om = 1.0 - s[inside]
        phi_p = -phi[inside] / om**2
        phi_pp = phi[inside] * (1.0 / om**4 - 2.0 / om**3)
        grad_s_sq = 4.0 * np.sum(w * w, axis=-1)[inside] / self.radius**4
        out[inside] = phi_pp * grad_s_sq + phi_p * (2.0 * d / self.radius**2)
        return out


# ---------------------------------------------------------------------------
# solvers


def solve_transport(
    u_in: BVInitialData,
    make_backward,
    driver: BrownianDriver,
    eval_points: np.ndarray,
    t_index: int,
) -> np.ndarray:
    """u_t at the evaluation points, per sample path; shape (P, S).

    make_backward(driver, s_idx, t_idx, pts) -> FlowEnsemble must integrate
    the reversed-time equation on the same driver as any paired forward run.
    """
    ens = make_backward(driver, 0, t_index, eval_points)
    return u_in.evaluate(ens.positions)


def solve_continuity(
    mu_in: ParticleMeasure,
    make_forward,
    driver: BrownianDriver,
    t_index: int,
) -> PushedMeasure:
    """Push the particle cloud through the forward flow; weights unchanged."""
    ens = make_forward(driver, 0, t_index, mu_in.positions)
    return PushedMeasure(ens.positions, mu_in.weights.copy())


def verify_duality(
    u_in: BVInitialData,
    mu_in: ParticleMeasure,
    make_forward,
    make_backward,
    driver: BrownianDriver,
    t_indices,
) -> np.ndarray:
    """Pairing drift |int u_t dmu_t - int u_in dmu_in| per (time, sample).

    int u_t dmu_t = sum_i w_i u_in(X_t^{-1}(X_t(x_i))): the forward push of
    each particle is pulled back along the same sample path, so the drift
    measures how far the discrete backward flow is from inverting the
    forward one.  Returns (len(t_indices), S) absolute drifts.
    """
    ref = float(np.sum(mu_in.weights * u_in.evaluate(mu_in.positions)))
    out = np.empty((len(t_indices), driver.n_paths))
    for j, t_idx in enumerate(t_indices):
        pushed = solve_continuity(mu_in, make_forward, driver, t_idx)
        for s in range(driver.n_paths):
            sub = _SingleSampleDriver(driver, s)
            back = make_backward(sub, 0, t_idx, pushed.positions[:, s, :])
            vals = u_in.evaluate(back.positions[:, 0, :])
            out[j, s] = abs(float(np.sum(mu_in.weights * vals)) - ref)
    return out


# ---------------------------------------------------------------------------
# weak forms


def _ito_sums(series: np.ndarray, increments: np.ndarray, dt: float):
    """Left-point sums: returns (det_integral, stoch_integral) cumulative
    over nodes.  series has shape (K+1, S, ...); increments (K, S, d)."""
    det = np.zeros_like(series)
    det[1:] = np.cumsum(series[:-1] * dt, axis=0)
    return det


def verify_weak_form_transport(
    u_in: BVInitialData,
    drift,
    driver: BrownianDriver,
    theta: BumpTestFunction,
    quad_torus: Torus,
) -> np.ndarray:
    """Per-path residual of the Itô-form scalar identity, sup over nodes.

    All x-integrals are transported to the initial grid by the change of
    variables y = X_t(x):  int theta(x) u_t(x) dx =
    int theta(X_t) det(grad X_t) u_in dx, and derivatives of u_t pull back
    through the inverse Jacobian.  Requires smooth initial data.
    """
    if u_in.gradient is None:
        raise ValueError("weak-form residuals need smooth initial data")
    from .flows import integrate_forward

    ens = integrate_forward(
        drift, None, driver, 0, driver.steps, quad_torus.flat_coords(),
        jacobian=True, store_path=True,
    )
    pos = ens.path  # (K+1, P, S, d)
    jac = ens.jacobian_path  # (K+1, P, S, d, d)
    h_d = quad_torus.spacing**quad_torus.dimension
    x0 = quad_torus.flat_coords()
    u0 = u_in.evaluate(x0)  # (P,)
    g0 = u_in.gradient(x0)  # (P, d)
    det = np.linalg.det(jac)  # (K+1, P, S)
    inv_t = np.swapaxes(np.linalg.inv(jac), -1, -2)  # J^{-T}
    grad_u = np.einsum("kpsij,pj->kpsi", inv_t, g0)  # (K+1,P,S,d)
    th = theta.value(pos)  # (K+1, P, S)
    gth = theta.gradient(pos)  # (K+1, P, S, d)
    dt = driver.dt
    n_nodes = pos.shape[0]

    m = np.einsum("kps,kps,p->ks", th, det, u0) * h_d
    b_vals = np.stack(
        [drift.value(k * dt, pos[k]) for k in range(n_nodes)], axis=0
    ) if drift is not None else np.zeros_like(pos)
    a_term = np.einsum("kps,kps,kpsi,kpsi->ks", th, det, b_vals, grad_u) * h_d
    b_term = np.einsum("kps,kps,kpsi->ksi", th, det, grad_u) * h_d
    c_term = np.einsum("kpsi,kps,kpsi->ks", gth, det, grad_u) * h_d

    det_int = np.zeros_like(m)
    det_int[1:] = np.cumsum((a_term + 0.5 * c_term)[:-1] * dt, axis=0)
    stoch = np.zeros_like(m)
    stoch[1:] = np.cumsum(
        np.einsum("ksi,ksi->ks", b_term[:-1], driver.increments), axis=0
    )
    residual = m - m[0] + det_int + stoch
    return np.abs(residual).max(axis=0)


def verify_weak_form_continuity(
    mu_in: ParticleMeasure,
    drift,
    driver: BrownianDriver,
    theta: BumpTestFunction,
) -> np.ndarray:
    """Per-path residual of the Itô-form measure identity, sup over nodes."""
    from .flows import integrate_forward

    ens = integrate_forward(
        drift, None, driver, 0, driver.steps, mu_in.positions,
        jacobian=False, store_path=True,
    )
    pos = ens.path  # (K+1, n, S, d)
    w = mu_in.weights
    dt = driver.dt
    n_nodes = pos.shape[0]
    th = theta.value(pos)
    gth = theta.gradient(pos)
    lth = theta.laplacian(pos)
    m = np.einsum("n,kns->ks", w, th)
    b_vals = np.stack(
        [drift.value(k * dt, pos[k]) for k in range(n_nodes)], axis=0
    ) if drift is not None else np.zeros_like(pos)
    d_term = np.einsum("n,knsi,knsi->ks", w, b_vals, gth)
    e_term = np.einsum("n,knsi->ksi", w, gth)
    f_term = np.einsum("n,kns->ks", w, lth)

    det_int = np.zeros_like(m)
    det_int[1:] = np.cumsum((d_term + 0.5 * f_term)[:-1] * dt, axis=0)
    stoch = np.zeros_like(m)
    stoch[1:] = np.cumsum(
        np.einsum("ksi,ksi->ks", e_term[:-1], driver.increments), axis=0
    )
    residual = m - m[0] - det_int - stoch
    return np.abs(residual).max(axis=0)


def weak_form_order(residual_fn, driver: BrownianDriver, n_levels: int = 3):
    """Fit the decay order of E[residual^2]^(1/2) under dyadic refinement."""
    rms, dts = [], []
    for lev in range(n_levels):
        drv = driver if lev == 0 else driver.refine(lev)
        res = residual_fn(drv)
        rms.append(float(np.sqrt(np.mean(res**2))))
        dts.append(drv.dt)
    slope = float(np.polyfit(np.log(dts), np.log(np.maximum(rms, 1e-300)), 1)[0])
    return slope, np.array(rms), np.array(dts)


# ---------------------------------------------------------------------------
# total-variation bound for indicator data


def bv_mass_bound(
    u_in: BVInitialData,
    drift,
    driver: BrownianDriver,
    theta: BumpTestFunction,
    t_indices=None,
) -> np.ndarray:
    """sup over times of the transported perimeter integral, per sample.

    For indicator initial data the gradient measure lives on the jump set;
    its pushforward against |theta| is bounded by

        sum_jumps weight * |theta(X_t(p))| det(grad X_t(p)) |col_i of J^{-1}|

    maximized over the coordinate i.  Finiteness is the assertion; for the
    driftless case the bound collapses to the translated perimeter.
    """
    if u_in.jump_points is None:
        raise ValueError("mass bound needs jump-set geometry")
    from .flows import integrate_forward

    ens = integrate_forward(
        drift, None, driver, 0, driver.steps, u_in.jump_points,
        jacobian=True, store_path=True,
    )
    pos, jac = ens.path, ens.jacobian_path
    if t_indices is None:
        t_indices = range(pos.shape[0])
    w = u_in.jump_weights
    best = np.zeros(pos.shape[2])
    for k in t_indices:
        th = np.abs(theta.value(pos[k]))  # (J, S)
        det = np.linalg.det(jac[k])
        inv = np.linalg.inv(jac[k])  # (J, S, d, d)
        col_norms = np.sqrt(np.sum(inv**2, axis=-2))  # (J, S, d) per column i
        vals = np.einsum("j,js,js,jsi->si", w, th, det, col_norms)
        best = np.maximum(best, vals.max(axis=-1))
    return best

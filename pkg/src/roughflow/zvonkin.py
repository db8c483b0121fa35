"""Drift-regularizing change of variables g_t(x) = x + v_t(x).

The map's displacement v solves, componentwise, an auxiliary parabolic
problem with kappa = 1/2 whose damping lam is raised until
||v||_{L^inf_t C^1_x} <= eta.  With eta <= 1/(2d) the Jacobian I + grad(v)
is strictly diagonally dominant, hence invertible, and Newton inversion of
g converges quadratically.

Forward direction: v solves the terminal-value system

    d_t v^i + b.grad(v^i) + 1/2 Lap(v^i) = lam v^i - b^i,   v_T = 0,

handled by the substitution t -> T - t, which turns it into the solver's
initial-value form with drift -b and source +b, both time-reversed.  Along
any solution X of  dX = b dt + dW  one then has the pathwise identity
d[v_t(X_t)] = (lam v - b)(X_t) dt + grad(v)(X_t) dW, so Y = g(X) solves the
transformed system with coefficients

    drift  = lam * v o g^{-1},      diffusion  = I + grad(v) o g^{-1}.

Backward direction: for the reversed equation
X_s = x - int_s^t b dr - (W_t - W_s), the backward Itô correction enters
with the opposite sign, and the dissipative auxiliary problem is the
initial-value system

    d_t v^i + b.grad(v^i) + lam v^i = 1/2 Lap(v^i) - b^i,   v_0 = 0,

(no time reversal).  The mirrored identity then reads

    g_s(X_s) = g_t(x) + lam int_s^t v_r(X_r) dr
               - int_s^t (I + grad v_r)(X_r) backward-dW_r,

so the transformed backward drift carries a minus sign:

    drift = -lam * v o g^{-1},      diffusion = I + grad(v) o g^{-1}.

Both identities are exercised pathwise by the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grids import (
    GridField,
    TimeIndexedField,
    Torus,
    estimate_zygmund_seminorm,
    max_gradient_entry,
)
from .pde import PdeSolution, tune_lambda
from .spectral import FourierInterpolant


class NewtonDivergence(RuntimeError):
    """Newton inversion of the map failed; margin certification was wrong."""


def _negate(f: TimeIndexedField) -> TimeIndexedField:
    return TimeIndexedField(f.torus, f.timegrid, -f.values, f.q, f.alpha)


@dataclass
class ZvonkinMap:
    direction: str  # "forward" | "backward"
    lam: float
    solution: PdeSolution  # displacement v in original time orientation
    eta: float
    margin: float  # sup |d_j v^i| over space-time
    sup_v: float  # sup |v^i|
    tuning_curve: list = field(default_factory=list)
    _interp_cache: dict = field(default_factory=dict, repr=False)

    @property
    def v(self) -> TimeIndexedField:
        return self.solution.v

    @property
    def torus(self) -> Torus:
        return self.v.torus

    @property
    def n_slices(self) -> int:
        return self.v.n_slices

    @property
    def certified(self) -> bool:
        return self.margin <= self.eta

    def displacement(self, k: int) -> FourierInterpolant:
        """Band-limited interpolant of v at time node k."""
        if k not in self._interp_cache:
            self._interp_cache[k] = FourierInterpolant(self.v.slice(k))
        return self._interp_cache[k]

    def forward_point(self, k: int, x: np.ndarray) -> np.ndarray:
        """g at time node k: x + v_k(x), for points of shape (..., d)."""
        return np.asarray(x, dtype=float) + self.displacement(k).value(x)

    def jacobian(self, k: int, x: np.ndarray) -> np.ndarray:
        """grad g = I + grad v at points; shape (..., d, d)."""
        d = self.torus.dimension
        return np.eye(d) + self.displacement(k).gradient(x)

    def transformed_drift_sign(self) -> float:
        return 1.0 if self.direction == "forward" else -1.0


def build_map(
    b: TimeIndexedField,
    direction: str = "forward",
    eta: float | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> ZvonkinMap:
    """Tune the damping and build a certified change of variables.

    eta defaults to 1/(2d): strict diagonal dominance of I + grad(v) needs
    every entry below 1/d, and the factor-two margin absorbs interpolation
    error at off-grid points.
    """
    d = b.torus.dimension
    if b.components != d:
        raise ValueError("drift must be a vector field")
    if eta is None:
        eta = 1.0 / (2 * d)
    if not (0 < eta <= 1.0 / (2 * d)):
        raise ValueError(f"eta must lie in (0, {1.0/(2*d)}]")
    if direction == "forward":
        drift = _negate(b.reversed_time())
        source = b.reversed_time()
    elif direction == "backward":
        drift = b
        source = _negate(b)
    else:
        raise ValueError("direction must be 'forward' or 'backward'")
    lam, sol, curve = tune_lambda(
        drift, source, eta, kappa=0.5, tol=tol, max_iter=max_iter
    )
    if direction == "forward":
        # solver worked in reversed time; flip the displacement back
        sol = PdeSolution(
            sol.problem,
            sol.v.reversed_time(),
            sol.gradient.reversed_time(),
            sol.iterations,
            sol.residual,
        )
    margin = max_gradient_entry(sol.v)
    sup_v = float(np.abs(sol.v.values).max())
    return ZvonkinMap(direction, lam, sol, eta, margin, sup_v, curve)


def map_from_displacement(
    v: TimeIndexedField, lam: float, direction: str = "forward", eta: float = 0.5
) -> ZvonkinMap:
    """Wrap a prescribed displacement field as a map (testing hook)."""
    sol = PdeSolution(None, v, v.map_slices(lambda a: a), 0, 0.0)
    return ZvonkinMap(
        direction, lam, sol, eta, max_gradient_entry(v), float(np.abs(v.values).max())
    )


def invert_map(
    zmap: ZvonkinMap,
    k: int,
    y: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> np.ndarray:
    """Solve g_k(x) = y by Newton iteration from x0 = y.

    Quadratic convergence is guaranteed by the dominance margin; hitting the
    iteration cap means the certification was violated and raises.
    """
    if not zmap.certified:
        raise NewtonDivergence(
            f"map not certified: margin {zmap.margin:.3g} > eta {zmap.eta:.3g}"
        )
    interp = zmap.displacement(k)
    x = np.array(y, dtype=float, copy=True)
    flat = x.reshape(-1, zmap.torus.dimension)
    target = np.asarray(y, dtype=float).reshape(-1, zmap.torus.dimension)
    d = zmap.torus.dimension
    active = np.arange(flat.shape[0])
    for _ in range(max_iter):
        res = flat[active] + interp.value(flat[active]) - target[active]
        err = np.sqrt(np.sum(res**2, axis=-1))
        live = err > tol
        active = active[live]
        if active.size == 0:
            return x
        res = res[live]
        jac = np.eye(d) + interp.gradient(flat[active])
        flat[active] -= np.linalg.solve(jac, res[..., None])[..., 0]
    raise NewtonDivergence(
        f"{active.size} points unresolved after {max_iter} Newton steps"
    )


@dataclass
class TransformedCoefficients:
    """Transformed drift and diffusion sampled back onto the grid."""

    drift: TimeIndexedField  # d components
    diffusion: TimeIndexedField  # d*d components, row-major
    eta: float

    def max_identity_distance(self) -> float:
        d = self.drift.torus.dimension
        eye = np.eye(d).reshape(-1)
        dev = self.diffusion.values - eye
        return float(np.abs(dev).max())


def transform_coefficients(zmap: ZvonkinMap) -> TransformedCoefficients:
    """Evaluate the transformed coefficients at the grid nodes.

    drift = sign * lam * v o g^{-1} (sign -1 for the backward map) and
    diffusion = I + grad(v) o g^{-1}; the composition keeps every diffusion
    entry within the certified margin of the identity.
    """
    torus = zmap.torus
    d = torus.dimension
    pts = torus.flat_coords()
    m = zmap.n_slices
    sign = zmap.transformed_drift_sign()
    drift_vals = np.empty((m,) + torus.shape + (d,))
    diff_vals = np.empty((m,) + torus.shape + (d * d,))
    eye = np.eye(d).reshape(-1)
    for k in range(m):
        x = invert_map(zmap, k, pts)
        interp = zmap.displacement(k)
        drift_vals[k] = (sign * zmap.lam * interp.value(x)).reshape(
            torus.shape + (d,)
        )
        grad = interp.gradient(x).reshape(-1, d * d)
        diff_vals[k] = (eye + grad).reshape(torus.shape + (d * d,))
    v = zmap.v
    return TransformedCoefficients(
        TimeIndexedField(torus, v.timegrid, drift_vals, v.q, v.alpha),
        TimeIndexedField(torus, v.timegrid, diff_vals, v.q, v.alpha),
        zmap.eta,
    )


def coefficient_regularity(coeffs: TransformedCoefficients, alpha: float) -> dict:
    """Smoothness certificate for the transformed coefficients.

    Reports the largest first-order Zygmund seminorm across time slices:
    finiteness of the drift entry is the one-derivative-better regularity
    the transformation buys.
    """
    def worst(fld: TimeIndexedField) -> float:
        return max(
            estimate_zygmund_seminorm(fld.slice(k), 1, alpha)
            for k in range(fld.n_slices)
        )

    return {
        "drift_C1a_seminorm": worst(coeffs.drift),
        "diffusion_C1a_seminorm": worst(coeffs.diffusion),
        "max_identity_distance": coeffs.max_identity_distance(),
    }


def dominance_margin(zmap: ZvonkinMap) -> float:
    """min over nodes of |1 + d_i v^i| - sum_{j != i} |d_j v^i|.

    Positive dominance certifies that grad(g) is nonsingular everywhere.
    """
    d = zmap.torus.dimension
    best = math.inf
    for k in range(zmap.n_slices):
        grad = zmap.solution.gradient.values[k].reshape(-1, d, d)
        for i in range(d):
            diag = np.abs(1.0 + grad[:, i, i])
            off = sum(np.abs(grad[:, i, j]) for j in range(d) if j != i)
            best = min(best, float((diag - off).min()))
    return best

"""Synthetic rough drifts: lacunary cosine series with a time singularity.

Component i of the generated drift is

    b^i_t(x) = A (t/T)^(-theta) sum_{j=0}^{J} 2^(-j*alpha)
                                 cos(2^j k0 <e_j, x> + theta_j),

with k0 = 2*pi/L, axis directions e_j and phases theta_j drawn from the
seed, independently per component.  Spatially the sum is the classical
function that is alpha-Hölder and in no better class; the time factor has
exponent theta in [0, 1/q), so the drift is q-integrable in time while its
sup over time diverges as the grid resolves t = 0 (the factor is evaluated
at max(t, dt/2), placing the first node's sample at the first cell
midpoint).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grids import (
    GridField,
    TimeGrid,
    TimeIndexedField,
    Torus,
    estimate_holder_seminorm,
    lq_time_norm,
)


@dataclass(frozen=True)
class DriftSpec:
    alpha: float = 0.5
    q: float = 2.0
    levels: int = 5  # J: modes 2^0 .. 2^J
    theta: float | None = None  # defaults to 0.9/q
    amplitude: float = 1.0
    seed: int = 2024

    def __post_init__(self):
        if not (0 < self.alpha < 1):
            raise ValueError("alpha must lie in (0, 1)")
        if self.q < 2:
            raise ValueError("q must be >= 2")
        th = self.time_exponent
        if not (0 <= th < 1.0 / self.q):
            raise ValueError("time exponent must lie in [0, 1/q)")

    @property
    def time_exponent(self) -> float:
        return 0.9 / self.q if self.theta is None else self.theta


def _spatial_profile(spec: DriftSpec, torus: Torus, component: int):
    """Mode table for one component: (wavevectors (J+1, d), phases, weights)."""
    rng = np.random.default_rng((spec.seed, component))
    d = torus.dimension
    base = 2 * math.pi / torus.length
    j_axis = rng.integers(0, d, size=spec.levels + 1)
    phases = rng.uniform(0, 2 * math.pi, size=spec.levels + 1)
    kvecs = np.zeros((spec.levels + 1, d))
    for j in range(spec.levels + 1):
        kvecs[j, j_axis[j]] = 2**j * base
    weights = 2.0 ** (-np.arange(spec.levels + 1) * spec.alpha) * spec.amplitude
    return kvecs, phases, weights


def _profile_values(kvecs, phases, weights, points) -> np.ndarray:
    args = points @ kvecs.T + phases
    return np.cos(args) @ weights


def _profile_gradient(kvecs, phases, weights, points) -> np.ndarray:
    args = points @ kvecs.T + phases
    return -(np.sin(args) * weights) @ kvecs


def _time_factor(spec: DriftSpec, timegrid: TimeGrid) -> np.ndarray:
    t = np.maximum(timegrid.nodes(), timegrid.dt / 2)
    return (t / timegrid.horizon) ** (-spec.time_exponent)


def generate_drift(spec: DriftSpec, torus: Torus, timegrid: TimeGrid) -> TimeIndexedField:
    """Sample the drift on the grid; deterministic per seed."""
    if 2**spec.levels > torus.points // 4:
        raise ValueError(
            f"{spec.levels} octaves need at least N = {2 ** (spec.levels + 2)}"
        )
    d = torus.dimension
    pts = torus.flat_coords()
    profile = np.empty((torus.n_points, d))
    for i in range(d):
        kv, ph, wt = _spatial_profile(spec, torus, i)
        profile[:, i] = _profile_values(kv, ph, wt, pts)
    tf = _time_factor(spec, timegrid)
    vals = tf[:, None, None] * profile[None, :, :]
    vals = vals.reshape((timegrid.steps + 1,) + torus.shape + (d,))
    return TimeIndexedField(torus, timegrid, vals, spec.q, spec.alpha)


class RoughDriftEvaluator:
    """Closed-form evaluator of the generated drift for flow integration.

    Matches generate_drift exactly at grid times and points (same mode
    table, same midpoint-regularized time factor).
    """

    def __init__(self, spec: DriftSpec, torus: Torus, timegrid: TimeGrid):
        self.spec = spec
        self.timegrid = timegrid
        d = torus.dimension
        self.tables = [_spatial_profile(spec, torus, i) for i in range(d)]
        self.dimension = d

    def _factor(self, t: float) -> float:
        tt = max(t, self.timegrid.dt / 2)
        return (tt / self.timegrid.horizon) ** (-self.spec.time_exponent)

    def value(self, t, x):
        out = np.empty_like(x)
        for i, (kv, ph, wt) in enumerate(self.tables):
            out[..., i] = _profile_values(kv, ph, wt, x)
        return self._factor(t) * out

    def gradient(self, t, x):
        d = self.dimension
        out = np.empty(x.shape[:-1] + (d, d))
        for i, (kv, ph, wt) in enumerate(self.tables):
            out[..., i, :] = _profile_gradient(kv, ph, wt, x)
        return self._factor(t) * out


def certificate(field: TimeIndexedField) -> dict:
    """Measured norm metadata shipped with a generated drift."""
    return {
        "q": field.q,
        "alpha": field.alpha,
        "lq_c0a_norm": lq_time_norm(field, "C0a"),
        "sup_slice_sup": float(np.abs(field.values).max()),
    }


def roughness_probe(
    spec: DriftSpec, base_points: int, alpha_probe: float, length: float = 2 * math.pi
) -> dict:
    """Two-resolution growth of the Hölder-seminorm estimate at alpha_probe.

    The drift is regenerated at N and 2N with the octave count refilled to
    the resolvable maximum; for a field of true class alpha the estimate at
    alpha_probe grows like N^(alpha_probe - alpha) when alpha_probe exceeds
    alpha and stabilizes otherwise.  The ratio is the probe outcome.
    """
    estimates = []
    for n in (base_points, 2 * base_points):
        torus = Torus(1, length, n)
        levels = int(math.log2(n // 4))
        probe_spec = DriftSpec(
            spec.alpha, spec.q, levels, spec.time_exponent, spec.amplitude, spec.seed
        )
        kv, ph, wt = _spatial_profile(probe_spec, torus, 0)
        vals = _profile_values(kv, ph, wt, torus.flat_coords())
        f = GridField(torus, vals.reshape(torus.shape))
        estimates.append(estimate_holder_seminorm(f, alpha_probe))
    ratio = estimates[1] / estimates[0]
    return {
        "alpha_probe": alpha_probe,
        "estimates": estimates,
        "growth_ratio": ratio,
        "expected_ratio": 2.0 ** max(alpha_probe - spec.alpha, 0.0),
    }


def mollify_drift(field: TimeIndexedField, eps: float) -> TimeIndexedField:
    """Space-time mollification at scale eps.

    Space: Gaussian Fourier multiplier exp(-(eps|k|)^2/2) (a unit-mass
    positive kernel, so slice seminorms cannot increase).  Time: discrete
    convolution with a compact bump over ceil(eps/dt) slices, with the field
    extended by zero outside [0, T]; for eps <= dt the temporal part is the
    identity.
    """
    if eps <= 0:
        raise ValueError("mollification scale must be positive")
    from .spectral import apply_multiplier, squared_wavenumbers

    torus, tg = field.torus, field.timegrid
    mult = np.exp(-0.5 * (eps**2) * squared_wavenumbers(torus))
    vals = np.stack(
        [
            apply_multiplier(field.values[k], torus, mult)
            for k in range(field.n_slices)
        ]
    )
    radius = int(math.floor(eps / (2 * tg.dt)))
    if radius > 0:
        u = np.arange(-radius, radius + 1) / (radius + 1)
        w = np.exp(1.0 - 1.0 / (1.0 - u**2))
        w /= w.sum()
        padded = np.concatenate(
            [np.zeros_like(vals[:radius]), vals, np.zeros_like(vals[:radius])]
        )
        sm = np.zeros_like(vals)
        for m, wm in enumerate(w):
            sm += wm * padded[m : m + vals.shape[0]]
        vals = sm
    return TimeIndexedField(torus, tg, vals, field.q, field.alpha)

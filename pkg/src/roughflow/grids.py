"""Periodic grids, sampled fields, and Hölder/Zygmund norm estimators.

Fields live on a uniform grid over the torus [0, L)^d with d in {1, 2} and
N (a power of two) points per axis.  Component counts are 1 (scalar),
d (vector), or d*d (matrix, row-major: component i*d + j holds entry (i, j)).

Norms follow the usual Hölder-space conventions,

    ||f||_{C^{k,a}} = sum_{j<=k} max_{|nu|=j} ||d_nu f||_inf
                      + max_{|nu|=k} [d_nu f]_{C^{0,a}},

with all distances measured in the torus (shortest wrap-around) metric.
The Zygmund estimator uses iterated differences of first derivatives and is
norm-equivalent to the Hölder one for non-integer smoothness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Above this many grid points, seminorm estimation switches from all pairs
# to a seeded random subsample of pairs.
_ALL_PAIRS_LIMIT = 4096
_SUBSAMPLE_PAIRS = 1_000_000
_SUBSAMPLE_SEED = 0x5EED


@dataclass(frozen=True)
class Torus:
    """Uniform periodic grid on [0, L)^d."""

    dimension: int
    length: float = 2.0 * math.pi
    points: int = 256

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if self.length <= 0:
            raise ValueError("side length must be positive")
        n = self.points
        if n < 2 or (n & (n - 1)) != 0:
            raise ValueError(f"points per axis must be a power of two >= 2, got {n}")

    @property
    def spacing(self) -> float:
        return self.length / self.points

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.dimension

    @property
    def n_points(self) -> int:
        return self.points ** self.dimension

    def axis(self) -> np.ndarray:
        return np.arange(self.points) * self.spacing

    def coords(self) -> np.ndarray:
        """Grid coordinates, shape (N,)*d + (d,)."""
        ax = self.axis()
        if self.dimension == 1:
            return ax[:, None]
        xx, yy = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([xx, yy], axis=-1)

    def flat_coords(self) -> np.ndarray:
        """All grid points as an (N^d, d) array."""
        return self.coords().reshape(-1, self.dimension)

    def wrap(self, x: np.ndarray) -> np.ndarray:
        return np.mod(x, self.length)

    def displacement(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Shortest signed displacement x - y on the torus."""
        delta = np.mod(np.asarray(x) - np.asarray(y) + 0.5 * self.length, self.length)
        return delta - 0.5 * self.length

    def distance(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        d = self.displacement(x, y)
        return np.sqrt(np.sum(d * d, axis=-1))

    @property
    def diameter(self) -> float:
        """Maximal torus distance between two points."""
        return 0.5 * self.length * math.sqrt(self.dimension)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_M = T."""

    horizon: float
    steps: int

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.steps < 1:
            raise ValueError("need at least one step")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def midpoints(self) -> np.ndarray:
        return (np.arange(self.steps) + 0.5) * self.dt


@dataclass
class GridField:
    """A scalar/vector/matrix field sampled on a Torus at one time slice.

    values has shape torus.shape + (components,).
    """

    torus: Torus
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[: self.torus.dimension] != self.torus.shape:
            raise ValueError(
                f"values shape {v.shape} does not match grid {self.torus.shape}"
            )
        if v.ndim == self.torus.dimension:
            v = v[..., None]
        if v.ndim != self.torus.dimension + 1:
            raise ValueError("values must have one trailing component axis")
        d = self.torus.dimension
        if v.shape[-1] not in (1, d, d * d):
            raise ValueError(f"component count must be 1, {d} or {d * d}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        self.values = v

    @property
    def components(self) -> int:
        return self.values.shape[-1]

    def copy(self) -> "GridField":
        return GridField(self.torus, self.values.copy())

    def __add__(self, other: "GridField") -> "GridField":
        return GridField(self.torus, self.values + other.values)

    def __sub__(self, other: "GridField") -> "GridField":
        return GridField(self.torus, self.values - other.values)

    def __mul__(self, c: float) -> "GridField":
        return GridField(self.torus, self.values * c)

    __rmul__ = __mul__

    def sup_norm(self) -> float:
        """sup_x |f(x)| with the Euclidean norm across components."""
        return float(np.sqrt(np.sum(self.values**2, axis=-1)).max())

    def max_entry(self) -> float:
        """sup over grid and components of |f^i(x)|."""
        return float(np.abs(self.values).max())


def constant_field(torus: Torus, value, components: int = 1) -> GridField:
    vals = np.broadcast_to(
        np.asarray(value, dtype=float), torus.shape + (components,)
    ).copy()
    return GridField(torus, vals)


@dataclass
class TimeIndexedField:
    """A field per node of a TimeGrid, with L^q-in-time norm metadata.

    values has shape (M + 1,) + torus.shape + (components,).  The exponents
    (q, alpha) record which L^q_t C^{0,alpha}_x space the field is measured
    in; q >= 2 and 0 < alpha < 1.
    """

    torus: Torus
    timegrid: TimeGrid
    values: np.ndarray
    q: float = 2.0
    alpha: float = 0.5

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        d = self.torus.dimension
        if v.ndim == 1 + d:
            v = v[..., None]
        expected = (self.timegrid.steps + 1,) + self.torus.shape
        if v.shape[:-1] != expected:
            raise ValueError(f"values shape {v.shape}, expected {expected} + (comp,)")
        if v.shape[-1] not in (1, d, d * d):
            raise ValueError("bad component count")
        if not (self.q >= 2):
            raise ValueError("q must be >= 2")
        if not (0 < self.alpha < 1):
            raise ValueError("alpha must lie in (0, 1)")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        self.values = v

    @property
    def components(self) -> int:
        return self.values.shape[-1]

    @property
    def n_slices(self) -> int:
        return self.values.shape[0]

    def slice(self, k: int) -> GridField:
        return GridField(self.torus, self.values[k])

    def reversed_time(self) -> "TimeIndexedField":
        return TimeIndexedField(
            self.torus, self.timegrid, self.values[::-1].copy(), self.q, self.alpha
        )

    def map_slices(self, fn) -> "TimeIndexedField":
        out = np.stack([fn(self.values[k]) for k in range(self.n_slices)])
        return TimeIndexedField(self.torus, self.timegrid, out, self.q, self.alpha)


@dataclass
class HolderReport:
    """Estimated pieces of a C^{k,alpha} norm."""

    alpha: float
    order: int
    sup_norm: float
    derivative_sups: list = field(default_factory=list)  # orders 1..k, max entry
    seminorm: float = 0.0  # [d^k f]_{C^{0,alpha}}
    zygmund_seminorm: float = 0.0

    @property
    def norm(self) -> float:
        return self.sup_norm + sum(self.derivative_sups) + self.seminorm


def _pair_shifts(n: int, dim: int) -> np.ndarray:
    """Index shifts covering every unordered grid pair exactly once."""
    if dim == 1:
        return np.arange(1, n // 2 + 1)[:, None]
    sx, sy = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    shifts = np.stack([sx.ravel(), sy.ravel()], axis=-1)
    keep = []
    for s in shifts:
        i, j = int(s[0]), int(s[1])
        if i == 0 and j == 0:
            continue
        # (i, j) and (-i, -j) mod n generate the same pair set
        ri, rj = (-i) % n, (-j) % n
        if (i, j) <= (ri, rj):
            keep.append((i, j))
    return np.array(keep)


def _shift_distance(shift: np.ndarray, torus: Torus) -> float:
    n = torus.points
    red = np.minimum(shift % n, (-shift) % n) * torus.spacing
    return float(np.sqrt(np.sum(red**2)))


def estimate_holder_seminorm(f: GridField, alpha: float) -> float:
    """sup over grid pairs of |f(x) - f(y)| / dist(x, y)^alpha.

    Exact over all pairs when the grid has at most 4096 points; beyond that,
    a deterministic random subsample of 1e6 pairs is used, drawn with
    log-uniform separations so the small-distance pairs that typically attain
    the supremum stay represented.
    """
    if not (0 < alpha < 1):
        raise ValueError("alpha must lie in (0, 1)")
    torus = f.torus
    vals = f.values
    n = torus.points
    if torus.n_points <= _ALL_PAIRS_LIMIT:
        best = 0.0
        for shift in _pair_shifts(n, torus.dimension):
            dist = _shift_distance(shift, torus)
            if dist == 0.0:
                continue
            rolled = np.roll(vals, tuple(-shift), axis=tuple(range(torus.dimension)))
            diff = np.sqrt(np.sum((rolled - vals) ** 2, axis=-1)).max()
            best = max(best, float(diff) / dist**alpha)
        return best

    # Random pair subsample: each probed shift pairs every base point with its
    # translate, so n_shifts probes cover n_shifts * N^d pairs.  Shift
    # magnitudes are drawn log-uniformly; small separations usually attain
    # the supremum and would be lost under uniform pair sampling.
    rng = np.random.default_rng(_SUBSAMPLE_SEED)
    d = torus.dimension
    best = 0.0
    n_shifts = max(64, _SUBSAMPLE_PAIRS // torus.n_points)
    log_max = math.log(n // 2)
    mags = np.exp(rng.uniform(0.0, log_max, size=n_shifts))
    for m in mags:
        if d == 1:
            shift = np.array([max(1, int(round(m)))])
        else:
            theta = rng.uniform(0, 2 * math.pi)
            shift = np.array(
                [int(round(m * math.cos(theta))), int(round(m * math.sin(theta)))]
            )
            if not shift.any():
                shift[0] = 1
        dist = _shift_distance(shift, torus)
        rolled = np.roll(vals, tuple(-shift), axis=tuple(range(d)))
        diff = np.sqrt(np.sum((rolled - vals) ** 2, axis=-1)).max()
        best = max(best, float(diff) / dist**alpha)
    return best


def _centered_derivative(vals: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(vals, -1, axis=axis) - np.roll(vals, 1, axis=axis)) / (2 * h)


def estimate_zygmund_seminorm(f: GridField, k: int, alpha: float) -> float:
    """Iterated-difference seminorm of the first derivatives.

    With m = 1, measures  max_nu sup_h ||D_h^k [d_nu f]||_inf / |h|^{k+alpha-1}
    over axis-aligned grid shifts h, where D_h is the forward difference
    operator and d_nu is a centered finite-difference first derivative.
    Equivalent to the C^{k,alpha} top seminorm for non-integer k + alpha.
    Shifts range up to half the period, the torus analogue of the usual
    |h| <= 1 cap; this keeps the estimator consistent with the pairwise
    Hölder seminorm, whose supremum may sit at separations beyond 1.
    """
    if k not in (1, 2):
        raise ValueError(f"supported difference orders are 1 and 2, got {k}")
    if not (0 < alpha < 1):
        raise ValueError("alpha must lie in (0, 1)")
    torus = f.torus
    h0 = torus.spacing
    exponent = k + alpha - 1
    best = 0.0
    max_steps = torus.points // 2
    derivs = [
        _centered_derivative(f.values, ax, h0) for ax in range(torus.dimension)
    ]
    for ax in range(torus.dimension):
        for g in derivs:
            for j in range(1, max_steps + 1):
                h = j * h0
                diff = g
                for _ in range(k):
                    diff = np.roll(diff, -j, axis=ax) - diff
                val = float(np.abs(diff).max()) / h**exponent
                best = max(best, val)
    return best


def holder_report(f: GridField, k: int, alpha: float) -> HolderReport:
    """Estimate the pieces of ||f||_{C^{k,alpha}} on the grid."""
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2")
    from .spectral import spectral_gradient_array

    sup = f.sup_norm()
    deriv_sups = []
    top = f.values
    for order in range(1, k + 1):
        top = spectral_gradient_array(top, f.torus)
        deriv_sups.append(float(np.abs(top).max()))
    semi = estimate_holder_seminorm(GridField(f.torus, top), alpha)
    zyg = estimate_zygmund_seminorm(f, min(max(k, 1), 2), alpha) if k >= 1 else 0.0
    return HolderReport(
        alpha=alpha,
        order=k,
        sup_norm=sup,
        derivative_sups=deriv_sups,
        seminorm=semi,
        zygmund_seminorm=zyg,
    )


_NORM_ORDERS = {"C0a": 0, "C1a": 1, "C2a": 2}


def slice_holder_norm(f: GridField, norm_kind: str, alpha: float) -> float:
    """C^{k,alpha} norm of one slice, k given by norm_kind in {C0a, C1a, C2a}."""
    k = _NORM_ORDERS[norm_kind]
    return holder_report(f, k, alpha).norm


def lq_time_norm(field: TimeIndexedField, norm_kind: str = "C0a") -> float:
    """|| t -> ||f_t||_{C^{k,alpha}} ||_{L^q(0,T)} by trapezoidal quadrature."""
    if norm_kind not in _NORM_ORDERS:
        raise ValueError(f"unknown norm kind {norm_kind!r}")
    q = field.q
    norms = np.array(
        [
            slice_holder_norm(field.slice(j), norm_kind, field.alpha)
            for j in range(field.n_slices)
        ]
    )
    if not np.all(np.isfinite(norms)):
        raise ValueError("non-finite slice norm")
    integral = np.trapezoid(norms**q, dx=field.timegrid.dt)
    return float(integral ** (1.0 / q))


def linf_time_c1_norm(field: TimeIndexedField) -> float:
    """sup_t ( max-entry of f_t plus max-entry of its first derivatives ).

    This is the max-entry flavor of the L^inf_t C^1_x norm: using entrywise
    suprema makes the diagonal-dominance margin of I + grad(v) explicit.
    """
    from .spectral import spectral_gradient_array

    best = 0.0
    for j in range(field.n_slices):
        vals = field.values[j]
        grad = spectral_gradient_array(vals, field.torus)
        best = max(best, float(np.abs(vals).max()) + float(np.abs(grad).max()))
    return best


def max_gradient_entry(field: TimeIndexedField) -> float:
    """sup over time, space and entries of |d_j f^i|."""
    from .spectral import spectral_gradient_array

    best = 0.0
    for j in range(field.n_slices):
        grad = spectral_gradient_array(field.values[j], field.torus)
        best = max(best, float(np.abs(grad).max()))
    return best

"""FFT helpers on the torus: derivatives, multipliers, trig interpolation.

All transforms act on the leading d spatial axes of a values array shaped
torus.shape + (components,).  Wavenumbers are the physical 2*pi*j/L.
"""

from __future__ import annotations

import math

import numpy as np

from .grids import GridField, Torus


def wavenumbers(torus: Torus) -> list[np.ndarray]:
    """Per-axis physical wavenumbers in FFT order."""
    n, length = torus.points, torus.length
    k = 2.0 * math.pi * np.fft.fftfreq(n, d=1.0 / n) / length
    return [k.copy() for _ in range(torus.dimension)]


def squared_wavenumbers(torus: Torus) -> np.ndarray:
    """|k|^2 on the FFT grid, shape torus.shape."""
    ks = wavenumbers(torus)
    if torus.dimension == 1:
        return ks[0] ** 2
    kx, ky = np.meshgrid(ks[0], ks[1], indexing="ij")
    return kx**2 + ky**2


def fft_field(values: np.ndarray, torus: Torus) -> np.ndarray:
    return np.fft.fftn(values, axes=tuple(range(torus.dimension)))


def ifft_field(coeffs: np.ndarray, torus: Torus) -> np.ndarray:
    return np.real(np.fft.ifftn(coeffs, axes=tuple(range(torus.dimension))))


def apply_multiplier(values: np.ndarray, torus: Torus, mult: np.ndarray) -> np.ndarray:
    """Apply a Fourier multiplier mult(k) (shape torus.shape) componentwise."""
    coeffs = fft_field(values, torus)
    return ifft_field(coeffs * mult[..., None], torus)


def spectral_derivative_array(
    values: np.ndarray, torus: Torus, axis: int
) -> np.ndarray:
    """First derivative along a spatial axis via the ik multiplier."""
    ks = wavenumbers(torus)[axis]
    shape = [1] * torus.dimension
    shape[axis] = torus.points
    mult = (1j * ks).reshape(shape)
    coeffs = fft_field(values, torus)
    return ifft_field(coeffs * mult[..., None], torus)


def spectral_gradient_array(values: np.ndarray, torus: Torus) -> np.ndarray:
    """Gradient, component axis expanded: result[..., i*d + j] = d_j f^i."""
    d = torus.dimension
    parts = [spectral_derivative_array(values, torus, ax) for ax in range(d)]
    ncomp = values.shape[-1]
    out = np.empty(values.shape[:-1] + (ncomp * d,))
    for i in range(ncomp):
        for j in range(d):
            out[..., i * d + j] = parts[j][..., i]
    return out


def spectral_laplacian_array(values: np.ndarray, torus: Torus) -> np.ndarray:
    k2 = squared_wavenumbers(torus)
    return apply_multiplier(values, torus, -k2)


def gradient_field(f: GridField) -> GridField:
    return GridField(f.torus, spectral_gradient_array(f.values, f.torus))


class FourierInterpolant:
    """Trigonometric interpolant of a grid field, exact on band-limited data.

    Evaluation, gradient and Hessian at arbitrary points are mode sums; modes
    with negligible coefficients are pruned so sparse fields (finite cosine
    series) evaluate in O(#active modes) per point.
    """

    def __init__(self, f: GridField, prune_tol: float = 1e-14):
        torus = f.torus
        d = torus.dimension
        self.torus = torus
        self.ncomp = f.components
        coeffs = fft_field(f.values, torus) / torus.n_points
        ks = wavenumbers(torus)
        if d == 1:
            kvecs = ks[0][:, None]
        else:
            kx, ky = np.meshgrid(ks[0], ks[1], indexing="ij")
            kvecs = np.stack([kx.ravel(), ky.ravel()], axis=-1)
        flat = coeffs.reshape(-1, self.ncomp)
        scale = np.abs(flat).max() if flat.size else 0.0
        keep = np.abs(flat).max(axis=1) > prune_tol * max(scale, 1e-300)
        self.kvecs = kvecs[keep]  # (K, d)
        self.coeffs = flat[keep]  # (K, ncomp)

    def _phases(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.exp(1j * (pts @ self.kvecs.T))  # (..., K)

    def value(self, points: np.ndarray) -> np.ndarray:
        """Field values at points of shape (..., d); returns (..., ncomp)."""
        return np.real(self._phases(points) @ self.coeffs)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """d_j f^i at points; returns (..., ncomp, d)."""
        ph = self._phases(points)
        out = np.empty(ph.shape[:-1] + (self.ncomp, self.torus.dimension))
        for j in range(self.torus.dimension):
            cj = self.coeffs * (1j * self.kvecs[:, j])[:, None]
            out[..., :, j] = np.real(ph @ cj)
        return out

    def hessian(self, points: np.ndarray) -> np.ndarray:
        """d_j d_m f^i at points; returns (..., ncomp, d, d)."""
        d = self.torus.dimension
        ph = self._phases(points)
        out = np.empty(ph.shape[:-1] + (self.ncomp, d, d))
        for j in range(d):
            for m in range(j, d):
                cjm = self.coeffs * (-self.kvecs[:, j] * self.kvecs[:, m])[:, None]
                val = np.real(ph @ cjm)
                out[..., :, j, m] = val
                out[..., :, m, j] = val
        return out

"""Cubic-spline materialisation of fields on Cartesian grids."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .integrals import ScalarField


class GridInterpolant:
    """Tensor-product cubic B-spline through values on a regular grid.

    values: shape (n,)*d or (n,)*d + (k,). Queries outside the box return 0.
    """

    def __init__(self, lo: np.ndarray, hi: np.ndarray, values: np.ndarray):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.dim = self.lo.size
        self.n = values.shape[0]
        self.step = (self.hi - self.lo) / (self.n - 1)
        self.vector = values.ndim == self.dim + 1
        comps = [values[..., j] for j in range(values.shape[-1])] if self.vector else [values]
        self._coeffs = [ndimage.spline_filter(c, order=3, mode="nearest") for c in comps]

    @staticmethod
    def nodes(lo, hi, n: int) -> np.ndarray:
        axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        coords = ((x - self.lo) / self.step).T
        inside = np.all((x >= self.lo) & (x <= self.hi), axis=1)
        out = np.stack([ndimage.map_coordinates(c, coords, order=3, prefilter=False, mode="nearest")
                        for c in self._coeffs], axis=1)
        out[~inside] = 0.0
        return out if self.vector else out[:, 0]


def box_around(center: np.ndarray, radius: float, n: int, margin_cells: int = 2):
    """Bounding box of a ball enlarged by a few grid cells."""
    step = 2.0 * radius / (n - 1 - 2 * margin_cells)
    pad = radius + margin_cells * step
    return center - pad, center + pad


def materialize(f: ScalarField, n: int) -> ScalarField:
    """Grid copy of a compactly supported field (values outside its ball are zero)."""
    lo, hi = box_around(f.center, f.radius, n)
    pts = GridInterpolant.nodes(lo, hi, n)
    vals = np.zeros(pts.shape[0])
    m = np.linalg.norm(pts - f.center, axis=1) < f.radius
    vals[m] = f.value(pts[m])
    interp = GridInterpolant(lo, hi, vals.reshape((n,) * f.dim))

    def value(x):
        out = interp(x)
        out[np.linalg.norm(x - f.center, axis=1) >= f.radius] = 0.0
        return out

    return ScalarField(value, None, f.dim, f.radius, center=f.center, name=f"grid({f.name})")

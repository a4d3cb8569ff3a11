"""Uniformly sampled functions on a (t, x) box."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInputError, ShapeError


@dataclass
class GridField:
    """Samples ``values[j, i_1, ..., i_n]`` at ``origin + index * spacing``.

    Axis 0 is time.  ``support_margin`` (cells) claims that the outermost
    ``support_margin`` layers on every axis are zero; it is checked.
    """

    values: np.ndarray
    origin: np.ndarray
    spacing: np.ndarray
    support_margin: Optional[int] = None

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if not (np.issubdtype(self.values.dtype, np.floating)
                or np.issubdtype(self.values.dtype, np.complexfloating)):
            self.values = self.values.astype(float)
        d = self.values.ndim
        if d < 3:
            raise ShapeError("a grid field needs one time axis and at least two space axes")
        self.origin = np.broadcast_to(np.asarray(self.origin, float), (d,)).copy()
        self.spacing = np.broadcast_to(np.asarray(self.spacing, float), (d,)).copy()
        if np.any(self.spacing <= 0) or not np.all(np.isfinite(self.spacing)):
            raise InvalidInputError("grid spacings must be positive and finite")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("grid values must be finite")
        if self.support_margin:
            if not self.margin_is_zero(self.support_margin):
                raise InvalidInputError(
                    f"support margin of {self.support_margin} cells is not zero")

    @property
    def n(self) -> int:
        return self.values.ndim - 1

    @property
    def dims(self) -> tuple:
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis(self, k: int) -> np.ndarray:
        return self.origin[k] + self.spacing[k] * np.arange(self.dims[k])

    @property
    def times(self) -> np.ndarray:
        return self.axis(0)

    def mesh(self, sparse: bool = True):
        return np.meshgrid(*[self.axis(k) for k in range(self.n + 1)],
                           indexing="ij", sparse=sparse)

    def spatial_points(self) -> np.ndarray:
        """Spatial nodes flattened to shape ``(prod(dims[1:]), n)``."""
        g = np.meshgrid(*[self.axis(k) for k in range(1, self.n + 1)], indexing="ij")
        return np.stack([a.ravel() for a in g], axis=-1)

    def like(self, values, support_margin=None) -> "GridField":
        values = np.asarray(values)
        if values.shape != self.dims:
            raise ShapeError(f"shape {values.shape} does not match grid {self.dims}")
        return GridField(values, self.origin, self.spacing, support_margin)

    def margin_is_zero(self, m: int) -> bool:
        v = self.values
        for k in range(v.ndim):
            lo = np.take(v, range(0, min(m, v.shape[k])), axis=k)
            hi = np.take(v, range(max(v.shape[k] - m, 0), v.shape[k]), axis=k)
            if np.any(lo != 0) or np.any(hi != 0):
                return False
        return True

    def same_grid(self, other: "GridField", rtol: float = 1e-12) -> bool:
        return (self.dims == other.dims
                and np.allclose(self.origin, other.origin, rtol=0,
                                atol=rtol * np.max(np.abs(self.spacing)))
                and np.allclose(self.spacing, other.spacing, rtol=rtol, atol=0))

    def volume_weights(self, metric=None) -> np.ndarray:
        """Cell volumes of ``dVol_g = sqrt(det h) dt dx`` (broadcastable to dims)."""
        if metric is None or metric.kind == "minkowski":
            return np.full((1,) * self.values.ndim, self.cell_volume)
        t = self.times
        x = self.spatial_points()
        rows = []
        for tj in t:
            rows.append(np.sqrt(np.linalg.det(metric.h(np.full(len(x), tj), x))))
        w = np.stack(rows).reshape(self.dims)
        return w * self.cell_volume

    def inner(self, other: "GridField", metric=None) -> complex:
        """Grid inner product ``sum V f conj(g)`` with metric volume weights."""
        if not self.same_grid(other):
            raise ShapeError("fields live on different grids")
        V = self.volume_weights(metric)
        s = np.sum(V * self.values * np.conj(other.values))
        return s

    def norm(self, metric=None) -> float:
        return float(np.sqrt(np.real(self.inner(self, metric))))

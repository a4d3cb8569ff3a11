"""Discrete light ray transform, its adjoints and the composed normal operator.

Rays are seeded on the slice ``t = 0`` at base points ``z`` of a uniform
grid and h-unit directions ``theta``; the ray ``gamma_{z, theta}`` is the
projection of the null bicharacteristic through ``(0, z)`` with covector
``(1, h theta)``.  A ray datum is ``Lf(z, theta) = sum_i f(gamma(s_i)) ds``.

The light-ray manifold carries the Liouville measure
``dVol_h(z) dtheta_h``; with Euclidean unit directions ``omega`` and
``theta = omega / |omega|_h`` one has
``dtheta_h = sqrt(det h) / |omega|_h^n domega`` and ``dVol_h = sqrt(det h) dz``,
so the measure reads ``det h / |omega|_h^n  domega dz``, which is what the
quadrature weights implement.  The grid inner product uses ``dVol_g = sqrt(det h) dt dx``.

Two sampling schemes are used:

* node sampling (default for Minkowski and static metrics): ``ds = dt`` and
  the samples sit exactly on the time nodes of the field grid, so only
  spatial interpolation is needed.  On Minkowski with a base grid aligned to
  the field grid, all rays of one direction share a fractional shift per
  slice and the transform is applied with separable shift stencils.
* general sampling: ray points at ``s_min + i ds`` with full space-time
  interpolation, assembled as a sparse matrix per batch of directions.

In both schemes the discrete adjoint is ``V^{-1} A^T W`` with ``A`` the
interpolation-quadrature matrix, ``W`` the ray weights and ``V`` the grid
cell volumes, so it is an exact transpose.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import _stencil
from .errors import InvalidInputError, ShapeError
from .fields import GridField
from .spacetime_geometry import GLOBALLY_HYPERBOLIC, MINKOWSKI, SpacetimeMetric, hamilton_rhs

LINEAR = "linear"
CUBIC = "cubic"
_TAPS = {LINEAR: 2, CUBIC: 4}


# ---------------------------------------------------------------------------
# direction quadrature
# ---------------------------------------------------------------------------

def sphere_rule(n: int, count: int, rule: Optional[str] = None):
    """Unit directions ``(m, n)`` and weights ``(m,)`` on ``S^{n-1}``.

    Rules: ``"uniform"`` (n = 2, equispaced angles), ``"fibonacci"`` (n = 3,
    equal weights), ``"gauss"`` (n = 3, Gauss-Legendre in the polar cosine
    times uniform azimuth; ``count`` is rounded to ``2 p^2``).
    """
    if count < 2:
        raise InvalidInputError("direction_count must be at least 2")
    if rule is None:
        rule = "uniform" if n == 2 else "fibonacci"
    if n == 2:
        if rule != "uniform":
            raise InvalidInputError("only the uniform rule exists for n = 2")
        phi = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(phi), np.sin(phi)], axis=1), np.full(count, 2 * np.pi / count)
    if n != 3:
        raise InvalidInputError("direction rules are implemented for n = 2, 3")
    if rule == "fibonacci":
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        phi = np.pi * (1 + 5 ** 0.5) * i
        r = np.sqrt(1 - z * z)
        dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        return dirs, np.full(count, 4 * np.pi / count)
    if rule == "gauss":
        p = max(1, int(round(np.sqrt(count / 2))))
        x, w = np.polynomial.legendre.leggauss(p)
        phi = np.pi * np.arange(2 * p) / p
        Z, P = np.meshgrid(x, phi, indexing="ij")
        r = np.sqrt(1 - Z * Z)
        dirs = np.stack([r * np.cos(P), r * np.sin(P), Z], axis=-1).reshape(-1, 3)
        wts = (w[:, None] * np.full(2 * p, np.pi / p)[None, :]).ravel()
        return dirs, wts
    raise InvalidInputError(f"unknown sphere rule {rule!r}")


def _trapezoid(m: int) -> np.ndarray:
    w = np.ones(m)
    if m > 1:
        w[0] = w[-1] = 0.5
    return w


# ---------------------------------------------------------------------------
# ray family and data
# ---------------------------------------------------------------------------

@dataclass
class RayFamily:
    """Base points ``z`` on ``t = 0`` times directions, with quadrature weights.

    ``s_range`` bounds the affine parameter; for Minkowski and static metrics
    it coincides with the time window covered by each ray.  ``ds = None``
    selects node sampling.
    """

    metric: SpacetimeMetric
    z_origin: np.ndarray
    z_spacing: np.ndarray
    z_dims: tuple
    omega: np.ndarray
    dir_weights: np.ndarray
    s_range: tuple
    ds: Optional[float] = None
    interp: str = LINEAR
    rule: str = "uniform"
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.metric.n

    @property
    def m(self) -> int:
        return len(self.dir_weights)

    @property
    def shape(self) -> tuple:
        return (self.m,) + tuple(self.z_dims)

    @property
    def degenerate(self) -> bool:
        return self.s_range[1] <= self.s_range[0]

    @property
    def taps(self) -> int:
        return _TAPS[self.interp]

    def z_axis(self, k: int) -> np.ndarray:
        return self.z_origin[k] + self.z_spacing[k] * np.arange(self.z_dims[k])

    def z_points(self) -> np.ndarray:
        g = np.meshgrid(*[self.z_axis(k) for k in range(self.n)], indexing="ij")
        return np.stack([a.ravel() for a in g], axis=-1)

    def _h0(self):
        if "h0" not in self._cache:
            z = self.z_points()
            self._cache["h0"] = self.metric.h(np.zeros(len(z)), z)
        return self._cache["h0"]

    def theta(self, k: int) -> np.ndarray:
        """h(0, z)-unit directions of direction index ``k``, shape ``(Z, n)``."""
        om = self.omega[k]
        if self.metric.kind == MINKOWSKI:
            return np.broadcast_to(om, (int(np.prod(self.z_dims)), self.n))
        h0 = self._h0()
        nrm = np.sqrt(np.einsum("a,zab,b->z", om, h0, om))
        return om[None, :] / nrm[:, None]

    def weights(self, k: Optional[int] = None) -> np.ndarray:
        """Liouville quadrature weights, shape ``z_dims`` (or ``(m,) + z_dims``)."""
        if k is None:
            return np.stack([self.weights(j) for j in range(self.m)])
        trap = np.ones(())
        for d in self.z_dims:
            trap = np.multiply.outer(trap, _trapezoid(d))
        base = trap * np.prod(self.z_spacing) * self.dir_weights[k]
        if self.metric.kind == MINKOWSKI:
            return base
        h0 = self._h0()
        om = self.omega[k]
        nrm = np.sqrt(np.einsum("a,zab,b->z", om, h0, om))
        jac = np.linalg.det(h0) / nrm ** self.n
        return base * jac.reshape(self.z_dims)


@dataclass
class RayData:
    """Values ``Lf`` of shape ``(m,) + z_dims`` with per-ray truncation flags."""

    family: RayFamily
    values: np.ndarray
    truncated: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.family.shape:
            raise ShapeError(f"ray data shape {self.values.shape} does not match "
                             f"family {self.family.shape}")
        if self.truncated is None:
            self.truncated = np.zeros(self.values.shape, bool)

    def inner(self, other: "RayData") -> complex:
        if other.family is not self.family and other.values.shape != self.values.shape:
            raise ShapeError("ray data belong to different families")
        # one direction at a time keeps the temporaries at a single base grid
        return sum(np.sum(self.family.weights(k) * self.values[k] * np.conj(other.values[k]))
                   for k in range(self.family.m))

    def norm(self) -> float:
        return float(np.sqrt(np.real(self.inner(self))))


def max_coordinate_speed(metric: SpacetimeMetric, grid: GridField) -> float:
    """Upper estimate of ``|dx/dt|`` of light rays over the grid (sampled)."""
    if metric.kind == MINKOWSKI:
        return 1.0
    x = grid.spatial_points()
    ts = grid.times if metric.kind == GLOBALLY_HYPERBOLIC else [0.0]
    lam = np.inf
    for t in ts:
        ev = np.linalg.eigvalsh(metric.h(np.full(len(x), t), x))
        lam = min(lam, float(ev.min()))
    return 1.05 / np.sqrt(lam)


def build_ray_family(metric: SpacetimeMetric, base_grid, direction_count: int,
                     s_range, ds: Optional[float] = None, rule: Optional[str] = None,
                     interp: str = LINEAR) -> RayFamily:
    """Ray family over ``base_grid = (origin, spacing, dims)`` on ``t = 0``.

    Raises if ``direction_count < 2``; a zero-length ``s_range`` produces a
    degenerate family (flagged with a warning).
    """
    if direction_count < 2:
        raise InvalidInputError("direction_count must be at least 2")
    if interp not in _TAPS:
        raise InvalidInputError(f"interp must be one of {sorted(_TAPS)}")
    origin, spacing, dims = base_grid
    n = metric.n
    origin = np.broadcast_to(np.asarray(origin, float), (n,)).copy()
    spacing = np.broadcast_to(np.asarray(spacing, float), (n,)).copy()
    dims = tuple(int(d) for d in np.broadcast_to(dims, (n,)))
    if np.any(spacing <= 0) or min(dims) < 1:
        raise InvalidInputError("base grid needs positive spacings and dims")
    ends = origin + spacing * (np.array(dims) - 1)
    metric.check(0.0, origin)
    metric.check(0.0, ends)
    if ds is not None and ds <= 0:
        raise InvalidInputError("ds must be positive")
    s_range = (float(s_range[0]), float(s_range[1]))
    if s_range[1] < s_range[0]:
        raise InvalidInputError("s_range must be increasing")
    if s_range[1] == s_range[0]:
        warnings.warn("ray family with zero-length s_range", RuntimeWarning, stacklevel=2)
    rule = rule if rule is not None else ("uniform" if n == 2 else "fibonacci")
    omega, w = sphere_rule(n, direction_count, rule)
    return RayFamily(metric, origin, spacing, dims, omega, w, s_range, ds, interp, rule)


def family_for_grid(metric: SpacetimeMetric, grid: GridField, direction_count: int,
                    rule: Optional[str] = None, interp: str = LINEAR,
                    ds: Optional[float] = None, margin: Optional[int] = None) -> RayFamily:
    """Ray family aligned with the spatial grid of ``grid`` covering all rays that meet it.

    The base grid extends past the field grid by ``max|t| * c_max`` plus the
    stencil width, where ``c_max`` bounds the coordinate speed of light.
    """
    n = grid.n
    t = grid.times
    tmax = float(np.max(np.abs(t)))
    dx = grid.spacing[1:]
    if margin is None:
        c = max_coordinate_speed(metric, grid)
        margin = int(np.ceil(np.max(tmax * c / dx))) + _TAPS[interp]
    origin = grid.origin[1:] - margin * dx
    dims = tuple(int(d) + 2 * margin for d in grid.dims[1:])
    return build_ray_family(metric, (origin, dx, dims), direction_count,
                            (float(t[0]), float(t[-1])), ds, rule, interp)


# ---------------------------------------------------------------------------
# shift-stencil path (Minkowski, aligned grids)
# ---------------------------------------------------------------------------

def _aligned(rays: RayFamily, grid: GridField) -> Optional[np.ndarray]:
    """Integer offset of the base grid in field-grid cells, or None."""
    if rays.metric.kind != MINKOWSKI or rays.ds is not None:
        return None
    dx = grid.spacing[1:]
    if not np.allclose(rays.z_spacing, dx, rtol=1e-12, atol=0):
        return None
    K = (rays.z_origin - grid.origin[1:]) / dx
    Ki = np.round(K)
    if np.max(np.abs(K - Ki)) > 1e-9:
        return None
    return Ki.astype(np.int64)


def _node_slices(rays: RayFamily, grid: GridField) -> np.ndarray:
    t = grid.times
    tol = 1e-9 * grid.spacing[0]
    return np.nonzero((t >= rays.s_range[0] - tol) & (t <= rays.s_range[1] + tol))[0]


def _slice_params(theta, times, js, K, dx, taps, box_lo):
    """Per-slice integer offsets, stencil weights and scales for one direction."""
    c = (K + box_lo)[None, :] + times[js][:, None] * theta[None, :] / dx[None, :]
    m = np.floor(c)
    W, a0 = _stencil.lagrange_weights(c - m, taps)          # (J, n, taps)
    off = (m.astype(np.int64) + a0)
    return np.ascontiguousarray(off), np.ascontiguousarray(W)


def _shift_box(theta, times, js, K, dx, zdims, src_dims, taps):
    """Range of base indices whose rays meet the source grid on slices ``js``."""
    d = times[js][:, None] * theta[None, :] / dx[None, :] + K[None, :]
    lo = np.floor(-d.max(axis=0)).astype(np.int64) - taps
    hi = np.ceil(np.asarray(src_dims) - 1 - d.min(axis=0)).astype(np.int64) + taps
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, np.asarray(zdims) - 1)
    return lo, hi


def _gather(n):
    return _stencil.shift_gather_2d if n == 2 else _stencil.shift_gather_3d


def _scatter(n):
    return _stencil.shift_scatter_2d if n == 2 else _stencil.shift_scatter_3d


def _fast_forward_dir(f, k, rays, grid, K, js):
    n = rays.n
    theta = rays.omega[k]
    dx = grid.spacing[1:]
    if len(js) == 0:
        return None
    lo, hi = _shift_box(theta, grid.times, js, K, dx, rays.z_dims, f.shape[1:], rays.taps)
    if np.any(hi < lo):
        return None
    u = np.zeros(tuple(hi - lo + 1))
    off, W = _slice_params(theta, grid.times, js, K, dx, rays.taps, lo)
    scale = np.full(len(js), grid.spacing[0])
    _gather(n)(f, js.astype(np.int64), off, W, scale, u)
    return lo, u


def _fast_adjoint_dir(u, lo, k, rays, grid, K, g):
    n = rays.n
    theta = rays.omega[k]
    dx = grid.spacing[1:]
    js = _node_slices(rays, grid)
    off, W = _slice_params(theta, grid.times, js, K, dx, rays.taps, lo)
    scale = np.full(len(js), grid.spacing[0])
    _scatter(n)(np.ascontiguousarray(u), js.astype(np.int64), off, W, scale, g)


def _nonzero_slices(v: np.ndarray) -> np.ndarray:
    flat = v.reshape(v.shape[0], -1)
    return np.nonzero(np.any(flat != 0, axis=1))[0]


# ---------------------------------------------------------------------------
# general path: traced rays and sparse matrices
# ---------------------------------------------------------------------------

def _trace_rays(metric: SpacetimeMetric, z, theta, s_nodes):
    """Positions ``(t, x)`` of rays at parameters ``s_nodes`` (must contain 0's bracket).

    RK4 in the affine parameter with one step per node gap and 4 substeps;
    returns ``(S, R, n + 1)``.
    """
    n = metric.n
    R = len(z)
    if metric.kind == MINKOWSKI:
        t = np.broadcast_to(s_nodes[:, None], (len(s_nodes), R))
        x = z[None] + s_nodes[:, None, None] * theta[None]
        return np.concatenate([t[..., None], x], axis=-1)
    h0 = metric.h(np.zeros(R), z)
    xi = np.einsum("rab,rb->ra", h0, theta)
    y0 = np.concatenate([np.zeros((R, 1)), z, np.ones((R, 1)), xi], axis=1)
    out = np.empty((len(s_nodes), R, n + 1))
    i0 = int(np.searchsorted(s_nodes, 0.0))

    def rhs(y):
        return hamilton_rhs(metric, y)

    href = float(np.min(np.diff(s_nodes))) if len(s_nodes) > 1 else 1.0
    for idx in (range(i0, len(s_nodes)), range(i0 - 1, -1, -1)):
        y = y0.copy()
        s = 0.0
        for i in idx:
            target = s_nodes[i]
            gap = target - s
            if gap != 0.0:
                # four RK4 substeps per sample gap
                sub = max(1, int(np.ceil(4 * abs(gap) / href - 1e-9)))
                hstep = gap / sub
                for _ in range(sub):
                    k1 = rhs(y)
                    k2 = rhs(y + 0.5 * hstep * k1)
                    k3 = rhs(y + 0.5 * hstep * k2)
                    k4 = rhs(y + hstep * k3)
                    y = y + (hstep / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
                s = target
            out[i] = y[:, :n + 1]
    return out


def _s_nodes(rays: RayFamily, grid: GridField):
    """Sample parameters and the flag telling whether each sits on a time node."""
    if rays.ds is None:
        if rays.metric.kind == GLOBALLY_HYPERBOLIC:
            ds = 0.5 * float(min(grid.spacing.min(), grid.spacing[0]))
            s0, s1 = rays.s_range
            cnt = int(np.floor((s1 - s0) / ds + 1e-9)) + 1
            return s0 + ds * np.arange(cnt), ds, False
        js = _node_slices(rays, grid)
        return grid.times[js], grid.spacing[0], True
    s0, s1 = rays.s_range
    cnt = int(np.floor((s1 - s0) / rays.ds + 1e-9)) + 1
    return s0 + rays.ds * np.arange(cnt), rays.ds, False


def _ray_matrix(rays: RayFamily, grid: GridField, ks) -> sp.csr_matrix:
    """Interpolation-quadrature matrix for the directions ``ks`` (rows: (k, z))."""
    cache = rays._cache.setdefault("matrices", {})
    key = (tuple(ks), grid.dims, tuple(grid.origin), tuple(grid.spacing))
    if key in cache:
        return cache[key]
    n = rays.n
    z = rays.z_points()
    Z = len(z)
    theta = np.concatenate([rays.theta(k) for k in ks])
    zz = np.tile(z, (len(ks), 1))
    s, ds, on_nodes = _s_nodes(rays, grid)
    rows_all, cols_all, vals_all = [], [], []
    if len(s):
        pts = _trace_rays(rays.metric, zz, theta, np.asarray(s, float))   # (S, R, n+1)
        S, R = pts.shape[:2]
        taps = rays.taps
        if on_nodes:
            js = _node_slices(rays, grid)
            coords = (pts[..., 1:] - grid.origin[1:]) / grid.spacing[1:]
            dims = np.array(grid.dims[1:], np.int64)
            nsp = int(np.prod(dims))
            K = taps ** n
            for i in range(S):
                cols = np.empty((R, K), np.int64)
                vals = np.empty((R, K))
                valid = np.empty((R, K), np.bool_)
                _stencil.point_stencil(np.ascontiguousarray(coords[i]), dims, taps, cols, vals, valid)
                r, c = np.nonzero(valid)
                rows_all.append(r)
                cols_all.append(cols[r, c] + js[i] * nsp)
                vals_all.append(vals[r, c] * ds)
        else:
            coords = (pts - grid.origin) / grid.spacing
            dims = np.array(grid.dims, np.int64)
            K = taps ** (n + 1)
            for i in range(S):
                cols = np.empty((R, K), np.int64)
                vals = np.empty((R, K))
                valid = np.empty((R, K), np.bool_)
                _stencil.point_stencil(np.ascontiguousarray(coords[i]), dims, taps, cols, vals, valid)
                r, c = np.nonzero(valid)
                rows_all.append(r)
                cols_all.append(cols[r, c])
                vals_all.append(vals[r, c] * ds)
    if rows_all:
        rows = np.concatenate(rows_all)
        cols = np.concatenate(cols_all)
        vals = np.concatenate(vals_all)
    else:
        rows = cols = np.zeros(0, np.int64)
        vals = np.zeros(0)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(ks) * Z, int(np.prod(grid.dims))))
    A.sum_duplicates()
    if rays._cache.get("cache_matrices", True):
        cache[key] = A
    return A


def _batches(rays: RayFamily, grid: GridField, budget: int = 4_000_000):
    Z = int(np.prod(rays.z_dims))
    s, _, on_nodes = _s_nodes(rays, grid)
    per_dir = max(1, Z * max(len(s), 1) * rays.taps ** (rays.n + (0 if on_nodes else 1)))
    b = max(1, budget // per_dir)
    return [list(range(i, min(i + b, rays.m))) for i in range(0, rays.m, b)]


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def _check_metric(metric, rays):
    if metric is not rays.metric and (metric.kind != rays.metric.kind or metric.n != rays.metric.n):
        raise ShapeError("ray family was built for a different metric")
    if metric.n + 1 != len(rays.z_dims) + 1:
        raise ShapeError("dimension mismatch between metric and rays")


def _truncation_flags(metric, f: GridField, rays: RayFamily) -> np.ndarray:
    """Rays crossing a nonzero boundary cell of ``f`` or leaving it before its support ends."""
    v = np.abs(f.values)
    flags = np.zeros(rays.shape, bool)
    t = f.times
    nz = _nonzero_slices(v)
    if len(nz) and (t[nz[0]] < rays.s_range[0] - 1e-9 * f.spacing[0]
                    or t[nz[-1]] > rays.s_range[1] + 1e-9 * f.spacing[0]):
        flags[:] = True
    boundary = np.zeros_like(v)
    for k in range(1, v.ndim):
        idx = [slice(None)] * v.ndim
        for e in (0, -1):
            idx[k] = e
            boundary[tuple(idx)] = v[tuple(idx)]
    if np.any(boundary):
        b = _forward_values(metric, f.like(boundary), rays)
        flags |= b > 0
    return flags


def _forward_values(metric, f: GridField, rays: RayFamily) -> np.ndarray:
    out = np.zeros(rays.shape, dtype=np.result_type(f.values, float))
    K = _aligned(rays, f)
    vals = f.values
    if K is not None and rays.n in (2, 3):
        js = _nonzero_slices(vals)
        js = np.intersect1d(js, _node_slices(rays, f))
        if np.iscomplexobj(vals):
            re = _forward_values(metric, f.like(vals.real.copy()), rays)
            im = _forward_values(metric, f.like(vals.imag.copy()), rays)
            return re + 1j * im
        src = np.ascontiguousarray(vals, float)
        for k in range(rays.m):
            r = _fast_forward_dir(src, k, rays, f, K, js)
            if r is None:
                continue
            lo, u = r
            sl = tuple(slice(lo[i], lo[i] + u.shape[i]) for i in range(rays.n))
            out[(k,) + sl] = u
        return out
    flat = vals.ravel()
    Z = int(np.prod(rays.z_dims))
    for ks in _batches(rays, f):
        A = _ray_matrix(rays, f, ks)
        out[ks[0]:ks[-1] + 1] = (A @ flat).reshape((len(ks),) + tuple(rays.z_dims))
    return out


def _check_coverage(f: GridField, rays: RayFamily):
    nz = _nonzero_slices(f.values)
    if not len(nz):
        return
    tmax = float(np.max(np.abs(f.times[nz])))
    sp_nz = np.nonzero(np.any(f.values != 0, axis=0))
    lo = np.array([f.axis(k + 1)[sp_nz[k].min()] for k in range(f.n)])
    hi = np.array([f.axis(k + 1)[sp_nz[k].max()] for k in range(f.n)])
    zlo = rays.z_origin
    zhi = rays.z_origin + rays.z_spacing * (np.array(rays.z_dims) - 1)
    if np.any(zlo > lo - tmax) or np.any(zhi < hi + tmax):
        warnings.warn("base grid does not cover the support of f widened by the time window",
                      RuntimeWarning, stacklevel=3)


def forward(metric: SpacetimeMetric, f: GridField, rays: RayFamily,
            flag_truncation: bool = True) -> RayData:
    """Discrete light ray transform ``Lf`` on the ray family."""
    _check_metric(metric, rays)
    if f.n != rays.n:
        raise ShapeError("field and ray family have different dimensions")
    if rays.degenerate:
        return RayData(rays, np.zeros(rays.shape), np.ones(rays.shape, bool))
    if metric.kind == MINKOWSKI:
        _check_coverage(f, rays)
    vals = _forward_values(metric, f, rays)
    flags = _truncation_flags(metric, f, rays) if flag_truncation else None
    return RayData(rays, vals, flags)


def _adjoint_discrete(metric, u: RayData, out: GridField, weighted: bool = True) -> np.ndarray:
    rays = u.family
    v = u.values * rays.weights() if weighted else u.values
    dtype = np.result_type(v, float)
    if np.iscomplexobj(v):
        re = _adjoint_discrete(metric, RayData(rays, v.real.copy()), out, weighted=False)
        im = _adjoint_discrete(metric, RayData(rays, v.imag.copy()), out, weighted=False)
        return re + 1j * im
    g = np.zeros(out.dims, dtype)
    K = _aligned(rays, out)
    if K is not None and rays.n in (2, 3):
        lo = np.zeros(rays.n, np.int64)
        for k in range(rays.m):
            if not np.any(v[k]):
                continue
            _fast_adjoint_dir(v[k], lo, k, rays, out, K, g)
    else:
        flat = np.zeros(int(np.prod(out.dims)))
        for ks in _batches(rays, out):
            A = _ray_matrix(rays, out, ks)
            flat += A.T @ v[ks[0]:ks[-1] + 1].ravel()
        g = flat.reshape(out.dims)
    return g


def adjoint(metric: SpacetimeMetric, u: RayData, out_grid: GridField,
            mode: str = "discrete") -> GridField:
    """Backprojection ``L^t u`` onto ``out_grid``.

    ``mode="discrete"`` is the exact transpose of :func:`forward` with respect
    to the ray weights and the grid volume weights.  ``mode="analytic"``
    evaluates ``sum_k w_k u(z_k(t, y), theta_k)`` with ``z_k`` the base
    point of the ray through ``(t, y)`` in direction ``theta_k``, interpolated
    in ``z`` (and in the angle for curved static metrics, n = 2).
    """
    rays = u.family
    _check_metric(metric, rays)
    if out_grid.n != rays.n:
        raise ShapeError("output grid and ray family have different dimensions")
    if mode == "discrete":
        g = _adjoint_discrete(metric, u, out_grid)
        g = g / out_grid.volume_weights(metric)
        return out_grid.like(g)
    if mode == "analytic":
        return out_grid.like(_adjoint_analytic(metric, u, out_grid))
    raise InvalidInputError("mode must be 'analytic' or 'discrete'")


def _interp_z(rays: RayFamily, data: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Interpolate ``data`` (z-grid) at points ``(P, n)``; zero outside."""
    coords = (pts - rays.z_origin) / rays.z_spacing
    dims = np.array(rays.z_dims, np.int64)
    taps = rays.taps
    K = taps ** rays.n
    P = len(pts)
    cols = np.empty((P, K), np.int64)
    vals = np.empty((P, K))
    valid = np.empty((P, K), np.bool_)
    _stencil.point_stencil(np.ascontiguousarray(coords), dims, taps, cols, vals, valid)
    flat = data.ravel()
    return np.sum(np.where(valid, vals * flat[cols], 0.0), axis=1)


def _adjoint_analytic(metric, u: RayData, out: GridField) -> np.ndarray:
    rays = u.family
    n = rays.n
    y = out.spatial_points()
    t = out.times
    g = np.zeros(out.dims, np.result_type(u.values, float))
    if metric.kind == MINKOWSKI:
        for j, tj in enumerate(t):
            acc = np.zeros(len(y), g.dtype)
            if rays.s_range[0] - 1e-12 <= tj <= rays.s_range[1] + 1e-12:
                for k in range(rays.m):
                    acc += rays.dir_weights[k] * _interp_z(rays, u.values[k], y - tj * rays.omega[k])
            g[j] = acc.reshape(out.dims[1:])
        return g
    if metric.kind == GLOBALLY_HYPERBOLIC:
        raise InvalidInputError("analytic adjoint needs a Minkowski or static metric")
    if n != 2 or rays.rule != "uniform":
        raise InvalidInputError("analytic adjoint on curved static metrics is implemented "
                                "for n = 2 with the uniform direction rule")
    m = rays.m
    hy = metric.h(np.zeros(len(y)), y)
    dety = np.sqrt(np.linalg.det(hy))
    for j, tj in enumerate(t):
        if not (rays.s_range[0] - 1e-12 <= tj <= rays.s_range[1] + 1e-12):
            continue
        acc = np.zeros(len(y), g.dtype)
        for k in range(m):
            om = rays.omega[k]
            nrm = np.sqrt(np.einsum("a,pab,b->p", om, hy, om))
            th = om[None, :] / nrm[:, None]
            w = rays.dir_weights[k] * dety / nrm ** n
            # backtrace the ray through (tj, y) to t = 0
            pts, cov = _backtrace(metric, y, th, tj, out.spacing[0])
            # Euclidean direction at the base point and its angle
            hz = metric.h(np.zeros(len(pts)), pts)
            vel = np.linalg.solve(hz, cov[..., None])[..., 0]
            ang = np.mod(np.arctan2(vel[:, 1], vel[:, 0]), 2 * np.pi) / (2 * np.pi / m)
            k0 = np.floor(ang).astype(int)
            a = ang - k0
            v0 = _interp_z_multi(rays, u.values, k0 % m, pts)
            v1 = _interp_z_multi(rays, u.values, (k0 + 1) % m, pts)
            acc += w * ((1 - a) * v0 + a * v1)
        g[j] = acc.reshape(out.dims[1:])
    return g


def _interp_z_multi(rays, values, ks, pts):
    out = np.zeros(len(pts), values.dtype)
    for k in np.unique(ks):
        sel = ks == k
        out[sel] = _interp_z(rays, values[k], pts[sel])
    return out


def _backtrace(metric, y, theta, t, dt):
    """Follow the static ray through ``(t, y)`` with velocity ``theta`` back to ``t = 0``."""
    n = metric.n
    R = len(y)
    h = metric.h(np.zeros(R), y)
    xi = np.einsum("rab,rb->ra", h, theta)
    Y = np.concatenate([np.full((R, 1), t), y, np.ones((R, 1)), xi], axis=1)
    if t == 0:
        return y.copy(), xi
    steps = max(1, int(np.ceil(4 * abs(t) / dt)))
    hs = -t / steps
    for _ in range(steps):
        k1 = hamilton_rhs(metric, Y, 0.0)
        k2 = hamilton_rhs(metric, Y + 0.5 * hs * k1, 0.0)
        k3 = hamilton_rhs(metric, Y + 0.5 * hs * k2, 0.0)
        k4 = hamilton_rhs(metric, Y + hs * k3, 0.0)
        Y = Y + (hs / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return Y[:, 1:n + 1], Y[:, n + 2:]


def normal_compose(metric: SpacetimeMetric, f: GridField, rays: RayFamily,
                   mode: str = "discrete") -> GridField:
    """``N f = L^t L f`` on the grid of ``f``.

    The discrete mode streams over directions (or direction batches), so the
    full ray data are never stored; it equals ``adjoint(forward(f))``.
    """
    _check_metric(metric, rays)
    if mode == "analytic":
        return adjoint(metric, forward(metric, f, rays, flag_truncation=False), f, "analytic")
    if mode != "discrete":
        raise InvalidInputError("mode must be 'analytic' or 'discrete'")
    if np.iscomplexobj(f.values):
        re = normal_compose(metric, f.like(f.values.real.copy()), rays, mode)
        im = normal_compose(metric, f.like(f.values.imag.copy()), rays, mode)
        return f.like(re.values + 1j * im.values)
    if rays.degenerate:
        return f.like(np.zeros(f.dims))
    g = np.zeros(f.dims)
    K = _aligned(rays, f)
    if K is not None and rays.n in (2, 3):
        _check_coverage(f, rays)
        src = np.ascontiguousarray(f.values, float)
        js = np.intersect1d(_nonzero_slices(src), _node_slices(rays, f))
        for k in range(rays.m):
            r = _fast_forward_dir(src, k, rays, f, K, js)
            if r is None:
                continue
            lo, u = r
            wk = rays.weights(k)
            sl = tuple(slice(lo[i], lo[i] + u.shape[i]) for i in range(rays.n))
            u *= wk[sl]
            _fast_adjoint_dir(u, lo, k, rays, f, K, g)
    else:
        flat = f.values.ravel()
        acc = np.zeros(flat.shape)
        for ks in _batches(rays, f):
            A = _ray_matrix(rays, f, ks)
            w = np.concatenate([rays.weights(k).ravel() for k in ks])
            acc += A.T @ (w * (A @ flat))
        g = acc.reshape(f.dims)
    return f.like(g / f.volume_weights(metric))

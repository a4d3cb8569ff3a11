"""Normal operator realizations: Fourier multiplier, light-cone kernel quadrature.

On Minkowski space the normal operator acts on the Fourier side by

    k(tau, xi) = C_n (|xi|^2 - tau^2)_+^{(n-3)/2} / |xi|^{n-2},
    C_n = 2 pi |S^{n-2}|,

with the unitary-free convention ``f(t, x) = int fhat e^{i (t tau + x xi)}``.
In physical space the same operator is the light-cone kernel

    N f(t, y) = int [f(t + d, x) + f(t - d, x)] J(x, y) d^{1-n} dVol_h(x),
    d = dist_h(x, y),

which reduces on flat space to ``2 cos(tau |x - y|) / |x - y|^{n-1}`` after a
Fourier transform in time.  The time delta is mollified by a normalized
hat; the ``d^{1-n}`` singularity at ``x = y`` is integrated exactly through
a lattice (Epstein zeta) correction of the centre weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import fft as sfft
from scipy.special import beta as beta_fn, betainc, gamma, roots_jacobi

from .errors import (InvalidInputError, PaddingError, SingularJacobianError,
                     NoSolutionError)
from .fields import GridField
from .spacetime_geometry import MINKOWSKI, STATIC, SpacetimeMetric, inverse_exp

# ---------------------------------------------------------------------------
# constants and the symbol
# ---------------------------------------------------------------------------


def sphere_area(m: int) -> float:
    """Area ``|S^m|`` of the unit m-sphere (``|S^0| = 2``)."""
    return float(2 * np.pi ** ((m + 1) / 2) / gamma((m + 1) / 2))


def normal_constant(n: int) -> float:
    """``C_n = 2 pi |S^{n-2}|``."""
    if n < 2:
        raise InvalidInputError("n must be >= 2")
    return 2 * np.pi * sphere_area(n - 2)


def multiplier_k(n: int, tau, xi):
    """Normal-operator symbol at ``(tau, xi)``; ``xi`` has trailing axis ``n``.

    Exactly zero on the closed time-like and light-like set ``tau^2 >= |xi|^2``.
    """
    tau = np.asarray(tau, float)
    xi = np.asarray(xi, float)
    if xi.shape[-1] != n:
        raise InvalidInputError(f"xi must have trailing dimension {n}")
    r2 = np.sum(xi * xi, axis=-1)
    if np.any((r2 == 0) & (tau == 0)):
        raise InvalidInputError("zero covector")
    return _k_radial(n, tau, np.sqrt(r2))


def _k_radial(n, tau, r):
    p = (n - 3) / 2
    Cn = normal_constant(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = r * r - tau * tau
        val = np.where(d > 0, Cn * np.abs(d) ** p / np.where(r > 0, r, 1.0) ** (n - 2), 0.0)
    out = np.where(r > 0, val, 0.0)
    return out if out.ndim else float(out)


def smooth_step(x):
    """C-infinity step: 0 for ``x <= 0``, 1 for ``x >= 1``."""
    x = np.clip(np.asarray(x, float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


def _cone_power_primitive(r, s, p):
    """``int_{-r}^{s} (r^2 - u^2)^p du`` for ``s`` clipped to ``[-r, r]``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.clip((np.clip(s, -r, r) / np.where(r > 0, r, 1.0) + 1.0) / 2.0, 0.0, 1.0)
        val = (2 * r) ** (2 * p + 1) * beta_fn(p + 1, p + 1) * betainc(p + 1, p + 1, u)
    return np.where(r > 0, val, 0.0)


def cone_power(tau, r, p, eps):
    """``(r^2 - tau^2)_+^p``, averaged over ``[tau - eps, tau + eps]`` near the cone.

    Averaging is applied where the window meets the cone ``|tau| = r``; the
    integrable singularity for ``p < 0`` keeps its mass.
    """
    tau = np.asarray(tau, float)
    r = np.asarray(r, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = r * r - tau * tau
        pt = np.where(d > 0, np.abs(d) ** p, 0.0)
    if eps <= 0:
        return pt
    tau, r, pt = np.broadcast_arrays(tau, r, pt)
    near = np.abs(np.abs(tau) - r) < eps
    if not np.any(near):
        return pt
    out = pt.copy()
    tn, rn = tau[near], r[near]
    out[near] = (_cone_power_primitive(rn, tn + eps, p)
                 - _cone_power_primitive(rn, tn - eps, p)) / (2 * eps)
    return out


@dataclass
class MultiplierSymbol:
    """Radial symbol ``m(tau, |xi|)`` with cone averaging and a low-frequency cutoff.

    ``kind`` is ``"k"`` (normal operator), ``"q"`` (parametrix),
    ``"h"`` (space-like indicator), ``"one"`` or ``"custom"`` (then
    ``evaluator(tau, r)`` is used).  ``eps_cone`` is the half-width of the
    averaging window in frequency units (``None``: half a frequency cell);
    ``rho`` is the cutoff radius in frequency units (``None``: two
    frequency bins); the cutoff factor rises smoothly from 0 at ``rho / 2``
    to 1 at ``rho``.  ``eps_scale`` widens the averaging window.
    """

    n: int
    kind: str = "k"
    eps_cone: Optional[float] = None
    rho: Optional[float] = None
    c_norm: float = 1.0
    evaluator: Optional[Callable] = None
    eps_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("k", "q", "h", "one", "custom"):
            raise InvalidInputError(f"unknown symbol kind {self.kind!r}")
        if self.kind == "custom" and self.evaluator is None:
            raise InvalidInputError("custom symbol needs an evaluator")

    def resolved(self, dtau: float, dxi: float):
        eps = 0.5 * dtau if self.eps_cone is None else float(self.eps_cone)
        eps *= self.eps_scale
        rho = 2.0 * dxi if self.rho is None else float(self.rho)
        return eps, rho

    def cutoff(self, r, rho):
        if rho <= 0:
            return np.ones_like(np.asarray(r, float))
        return smooth_step((np.asarray(r, float) - 0.5 * rho) / (0.5 * rho))

    def __call__(self, tau, r, dtau: float = 0.0, dxi: float = 0.0):
        """Evaluate on frequency arrays (``r = |xi|``) given the cell sizes."""
        n = self.n
        eps, rho = self.resolved(dtau, dxi)
        tau = np.asarray(tau, float)
        r = np.asarray(r, float)
        if self.kind == "one":
            return np.ones(np.broadcast(tau, r).shape)
        if self.kind == "custom":
            return self.evaluator(tau, r)
        if self.kind == "h":
            return cone_power(tau, r, 0.0, eps)
        cut = self.cutoff(r, rho)
        safe = np.where(r > 0, r, 1.0)
        if self.kind == "k":
            prof = cone_power(tau, r, (n - 3) / 2, eps)
            return np.where(r > 0, normal_constant(n) * prof / safe ** (n - 2), 0.0) * cut
        # parametrix: c (|xi|^2 - tau^2)^{(3-n)/2} |xi|^{n-2} on the space-like side
        prof = cone_power(tau, r, (3 - n) / 2, eps)
        return np.where(r > 0, self.c_norm * prof * safe ** (n - 2), 0.0) * cut


# ---------------------------------------------------------------------------
# FFT application
# ---------------------------------------------------------------------------

@dataclass
class SpectralField:
    """Fourier coefficients of a zero-padded grid field.

    ``padding[k]`` cells were appended on axis ``k``; ``real_time`` marks a
    half-spectrum along time (real input).
    """

    coeffs: np.ndarray
    shape: tuple
    padding: tuple
    spacing: np.ndarray
    real_time: bool

    @classmethod
    def from_field(cls, f: GridField, padding: Sequence[int]) -> "SpectralField":
        padding = tuple(int(p) for p in padding)
        shape = tuple(d + p for d, p in zip(f.dims, padding))
        if np.iscomplexobj(f.values):
            c = sfft.fftn(f.values, s=shape)
            return cls(c, shape, padding, f.spacing.copy(), False)
        c = sfft.rfft(f.values, n=shape[0], axis=0)
        c = sfft.fftn(c, s=shape[1:], axes=tuple(range(1, f.values.ndim)))
        return cls(c, shape, padding, f.spacing.copy(), True)

    def to_values(self) -> np.ndarray:
        ax = tuple(range(1, len(self.shape)))
        if self.real_time:
            c = sfft.ifftn(self.coeffs, axes=ax)
            return sfft.irfft(c, n=self.shape[0], axis=0)
        return sfft.ifftn(self.coeffs)

    def frequencies(self, k: int) -> np.ndarray:
        if k == 0 and self.real_time:
            return 2 * np.pi * sfft.rfftfreq(self.shape[0], self.spacing[0])
        return 2 * np.pi * sfft.fftfreq(self.shape[k], self.spacing[k])


def time_window_cells(f: GridField) -> np.ndarray:
    """Light-cone reach of the grid's time window, in cells of each axis."""
    T = (f.dims[0] - 1) * f.spacing[0]
    return np.ceil(T / f.spacing - 1e-9).astype(int) + 1


def default_padding(f: GridField, factor: int = 2) -> tuple:
    """Twice the time-window radius: the minimum stops causal wraparound, the
    extra margin damps the aliased tail of the periodized cone kernel."""
    return tuple(int(factor * v) for v in time_window_cells(f))


def _check_padding(f: GridField, padding):
    if padding is None:
        return default_padding(f)
    padding = tuple(int(p) for p in np.broadcast_to(padding, (f.values.ndim,)))
    need = time_window_cells(f)
    short = [k for k in range(f.values.ndim) if padding[k] < need[k]]
    if short:
        raise PaddingError(f"padding {padding} below the time-window radius {tuple(need)} "
                           f"on axes {short}; the light-cone kernel would wrap around")
    return padding


def apply_multiplier(f: GridField, m: MultiplierSymbol, padding=None) -> GridField:
    """Multiply the zero-padded spectrum of ``f`` by ``m`` and crop back.

    The transform runs one temporal frequency at a time, so memory stays at
    one padded spatial slice plus the half-spectrum in time.
    """
    if m.n != f.n:
        raise InvalidInputError("symbol and field dimensions differ")
    padding = _check_padding(f, padding)
    shape = tuple(d + p for d, p in zip(f.dims, padding))
    n = f.n
    real = not np.iscomplexobj(f.values)
    if real:
        Ft = sfft.rfft(f.values, n=shape[0], axis=0)
        tau = 2 * np.pi * sfft.rfftfreq(shape[0], f.spacing[0])
    else:
        Ft = sfft.fft(f.values, n=shape[0], axis=0)
        tau = 2 * np.pi * sfft.fftfreq(shape[0], f.spacing[0])
    dtau = 2 * np.pi / (shape[0] * f.spacing[0])
    fr = [2 * np.pi * sfft.fftfreq(shape[k], f.spacing[k]) for k in range(1, n + 1)]
    dxi = min(2 * np.pi / (shape[k] * f.spacing[k]) for k in range(1, n + 1))
    g = np.meshgrid(*fr, indexing="ij", sparse=True)
    r = np.sqrt(sum(a * a for a in g))
    crop = tuple(slice(0, d) for d in f.dims[1:])
    out = np.zeros(Ft.shape[:1] + tuple(f.dims[1:]), complex)
    ax = tuple(range(n))
    for j in range(len(tau)):
        if not np.any(Ft[j]):
            continue
        sym = m(tau[j], r, dtau, dxi)
        if not np.any(sym):
            continue
        G = sfft.ifftn(sfft.fftn(Ft[j], s=shape[1:], axes=ax) * sym, axes=ax)
        out[j] = G[crop]
    if real:
        vals = sfft.irfft(out, n=shape[0], axis=0)[:f.dims[0]]
    else:
        vals = sfft.ifft(out, axis=0)[:f.dims[0]]
    return f.like(vals)


# ---------------------------------------------------------------------------
# Fourier-slice profile
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _jacobi_rule(p: float, count: int):
    x, w = roots_jacobi(count, p, p)
    return (1 + x) / 2, w * 2.0 ** (-2 * p - 1)


def a_profile(n: int, sigma, r, mode: str = "quadrature", nodes: int = 64):
    """``A(sigma, r) = int_{-2r}^{0} e^{i sigma s} k(s + r, r) ds``.

    ``quadrature`` uses an ``nodes``-point Gauss-Jacobi rule matched to the
    endpoint exponents of ``2^{n-2} C_n int_0^1 e^{-2 i sigma r u} (u (1-u))^{(n-3)/2} du``;
    ``closed_n3`` evaluates ``C_3 (1 - e^{-2 i sigma r}) / (i sigma r)``.
    """
    sigma = np.asarray(sigma, float)
    r = np.asarray(r, float)
    if np.any(r <= 0):
        raise InvalidInputError("r must be positive")
    Cn = normal_constant(n)
    if mode == "closed_n3":
        if n != 3:
            raise InvalidInputError("closed_n3 requires n = 3")
        x = sigma * r
        with np.errstate(divide="ignore", invalid="ignore"):
            val = Cn * (1 - np.exp(-2j * x)) / (1j * np.where(x != 0, x, 1.0))
        out = np.where(x != 0, val, 2 * Cn)
        return out if out.ndim else complex(out)
    if mode != "quadrature":
        raise InvalidInputError("mode must be 'quadrature' or 'closed_n3'")
    u, w = _jacobi_rule((n - 3) / 2, nodes)
    ph = np.exp(-2j * np.multiply.outer(sigma * r, u))
    out = 2.0 ** (n - 2) * Cn * (ph @ w)
    return out if out.ndim else complex(out)


# ---------------------------------------------------------------------------
# singular kernel quadrature
# ---------------------------------------------------------------------------

def _punctured_gauss_sum(n: int, s: float) -> float:
    m = int(np.ceil(9 * s))
    ax = np.arange(-m, m + 1, dtype=float)
    r2 = np.zeros(())
    for _ in range(n):
        r2 = np.add.outer(r2, ax * ax)
    with np.errstate(divide="ignore"):
        term = np.where(r2 > 0, np.exp(-r2 / (2 * s * s)) / r2 ** ((n - 1) / 2), 0.0)
    return float(term.sum())


@lru_cache(maxsize=None)
def lattice_correction(n: int) -> float:
    """Centre weight ``c_n`` with ``int g |x|^{1-n} dx ~ sum' g(j) |j|^{1-n} + c_n g(0)``.

    Unit lattice, smooth ``g``.  Calibrated on Gaussians of widths 4, 6, 8
    and Richardson-extrapolated in ``s^{-2}``; the limit equals
    ``-Z_n(n - 1)`` for the Epstein zeta of the cubic lattice.
    """
    ss = np.array([4.0, 6.0, 8.0])
    exact = sphere_area(n - 1) * ss * np.sqrt(np.pi / 2)
    cs = exact - np.array([_punctured_gauss_sum(n, s) for s in ss])
    V = np.vstack([np.ones(3), ss ** -2, ss ** -4]).T
    return float(np.linalg.solve(V, cs)[0])


def _hat_factor(tau, delta_width):
    if not delta_width:
        return np.ones_like(tau)
    a = delta_width / 2
    return np.sinc(tau * a / (2 * np.pi)) ** 2


def _is_flat(metric: SpacetimeMetric) -> bool:
    if metric.kind == MINKOWSKI:
        return True
    return metric.name == "flat-static"


def kernel_apply_static(metric: SpacetimeMetric, f: GridField, delta_width: Optional[float] = None,
                        pair_cache: Optional[dict] = None) -> GridField:
    """Light-cone kernel quadrature for Minkowski and static metrics.

    ``delta_width`` is the total width of the hat mollifying the time delta
    (default ``2 dt``; 0 evaluates the delta spectrally).  Flat metrics use
    FFT convolution in space; curved static metrics use dense pairwise
    distances and Jacobians obtained by shooting, which restricts them to
    small grids.  ``pair_cache`` may be a dict reused between calls on the
    same grid and metric.
    """
    if metric.kind not in (MINKOWSKI, STATIC):
        raise InvalidInputError("kernel quadrature needs a Minkowski or static metric")
    if f.n != metric.n:
        raise InvalidInputError("field and metric dimensions differ")
    dt = f.spacing[0]
    if delta_width is None:
        delta_width = 2 * dt
    if delta_width and delta_width < dt * (1 - 1e-12):
        raise InvalidInputError("delta_width must be at least one time step")
    if np.iscomplexobj(f.values):
        re = kernel_apply_static(metric, f.like(f.values.real.copy()), delta_width, pair_cache)
        im = kernel_apply_static(metric, f.like(f.values.imag.copy()), delta_width, pair_cache)
        return f.like(re.values + 1j * im.values)
    if _is_flat(metric):
        return f.like(_kernel_flat(f, delta_width))
    return f.like(_kernel_curved(metric, f, delta_width, pair_cache))


def _kernel_flat(f: GridField, delta_width) -> np.ndarray:
    n = f.n
    Nt = f.dims[0]
    Ns = f.dims[1:]
    dt = f.spacing[0]
    dx = f.spacing[1:]
    if not np.allclose(dx, dx[0], rtol=1e-12):
        raise InvalidInputError("flat kernel quadrature needs equal spatial spacings")
    h = float(dx[0])
    P = sfft.next_fast_len(2 * Nt)
    F = sfft.rfft(f.values, n=P, axis=0)
    tau = 2 * np.pi * sfft.rfftfreq(P, dt)
    F *= _hat_factor(tau, delta_width)[(...,) + (None,) * n]
    Sp = [sfft.next_fast_len(2 * m) for m in Ns]
    offs = []
    for s in Sp:
        o = np.arange(s)
        offs.append(np.where(o < s // 2 + 1, o, o - s) * h)
    g = np.meshgrid(*offs, indexing="ij", sparse=True)
    r = np.sqrt(sum(a * a for a in g))
    rmax = (Nt - 1) * dt * (1 + 1e-12)
    with np.errstate(divide="ignore"):
        base = np.where((r > 0) & (r <= rmax), h ** n / np.where(r > 0, r, 1.0) ** (n - 1), 0.0)
    centre = 2 * lattice_correction(n) * h
    crop = tuple(slice(0, s) for s in Ns)
    ax = tuple(range(n))
    out = np.zeros((len(tau),) + tuple(Ns), complex)
    for j in range(len(tau)):
        if not np.any(F[j]):
            continue
        K = 2 * np.cos(tau[j] * r) * base
        K[(0,) * n] = centre
        G = sfft.ifftn(sfft.fftn(F[j], s=Sp, axes=ax) * sfft.fftn(K), axes=ax)
        out[j] = G[crop]
    return sfft.irfft(out, n=P, axis=0)[:Nt]


def pair_geometry(metric: SpacetimeMetric, points: np.ndarray, n_steps: int = 24,
                  tol: float = 1e-10):
    """Distances and kernel Jacobians between all pairs of ``points`` on the slice ``t = 0``.

    Returns ``(d, J)`` with shape ``(P, P)``; both are symmetric for a
    Riemannian metric, so only ``i < j`` pairs are shot.
    """
    P = len(points)
    iu, ju = np.triu_indices(P, 1)
    d = np.zeros((P, P))
    J = np.ones((P, P))
    dets = np.sqrt(np.linalg.det(metric.h(np.zeros(P), points)))
    chunk = 20000
    for a in range(0, len(iu), chunk):
        i = iu[a:a + chunk]
        j = ju[a:a + chunk]
        y = points[i]
        x = points[j]
        try:
            w, jac, _ = inverse_exp(metric, 0.0, y, x, True, n_steps, tol)
        except NoSolutionError as e:
            raise SingularJacobianError(f"kernel pair could not be resolved: {e}")
        hy = metric.h(np.zeros(len(y)), y)
        dist = np.sqrt(np.einsum("pa,pab,pb->p", w, hy, w))
        det = np.abs(np.linalg.det(jac))
        bad = det < 1e-10 * dist ** 0
        if np.any(bad):
            b = int(np.argmax(bad))
            raise SingularJacobianError(f"conjugate pair {y[b]} -> {x[b]}")
        jj = dets[i] / (dets[j] * det)
        d[i, j] = d[j, i] = dist
        J[i, j] = J[j, i] = jj
    return d, J


def _kernel_curved(metric, f: GridField, delta_width, pair_cache) -> np.ndarray:
    n = f.n
    Nt = f.dims[0]
    dt = f.spacing[0]
    dx = f.spacing[1:]
    pts = f.spatial_points()
    P = len(pts)
    key = (tuple(f.origin[1:]), tuple(dx), tuple(f.dims[1:]))
    if pair_cache is not None and key in pair_cache:
        d, J = pair_cache[key]
    else:
        d, J = pair_geometry(metric, pts)
        if pair_cache is not None:
            pair_cache[key] = (d, J)
    sq = np.sqrt(np.linalg.det(metric.h(np.zeros(P), pts)))
    cell = float(np.prod(dx))
    with np.errstate(divide="ignore"):
        W = np.where(d > 0, J / np.where(d > 0, d, 1.0) ** (n - 1), 0.0) * (sq[None, :] * cell)
    W[d > (Nt - 1) * dt * (1 + 1e-12)] = 0.0
    # innermost cell: exact integral of the local quadratic-form singularity
    if not np.allclose(dx, dx[0], rtol=1e-12):
        raise InvalidInputError("kernel quadrature needs equal spatial spacings")
    h0 = metric.h(np.zeros(P), pts)
    ev = np.linalg.eigvalsh(h0)
    if not np.allclose(ev, ev[:, :1], rtol=1e-12):
        raise InvalidInputError("centre correction implemented for conformally flat slices")
    c = ev[:, 0]
    centre = lattice_correction(n) * float(dx[0]) * np.sqrt(c)
    Pt = sfft.next_fast_len(2 * Nt)
    F = sfft.rfft(f.values.reshape(Nt, P), n=Pt, axis=0)
    tau = 2 * np.pi * sfft.rfftfreq(Pt, dt)
    F *= _hat_factor(tau, delta_width)[:, None]
    out = np.zeros_like(F)
    for j in range(len(tau)):
        if not np.any(F[j]):
            continue
        M = 2 * np.cos(tau[j] * d) * W
        out[j] = M @ F[j] + 2 * centre * F[j]
    return sfft.irfft(out, n=Pt, axis=0)[:Nt].reshape(f.dims)


# ---------------------------------------------------------------------------
# cross validation
# ---------------------------------------------------------------------------

REALIZATIONS = ("multiplier", "kernel", "compose")


@dataclass
class CrossValidationReport:
    realizations: tuple
    discrepancy: dict
    band_edges: np.ndarray
    band_discrepancy: dict
    margin: int
    cutoff_rho: Optional[float]
    fields: dict = field(default_factory=dict, repr=False)

    def max_discrepancy(self) -> float:
        return max(self.discrepancy.values())

    def rows(self):
        for (a, b), v in self.discrepancy.items():
            bands = self.band_discrepancy[(a, b)]
            for i, bv in enumerate(bands):
                yield dict(pair=f"{a}-{b}", total=v, band_lo=self.band_edges[i],
                           band_hi=self.band_edges[i + 1], band=bv)


def _applicable(metric):
    if metric.kind == MINKOWSKI:
        return {"multiplier", "kernel", "compose"}
    if metric.kind == STATIC:
        return {"kernel", "compose"}
    return {"compose"}


def _band_discrepancy(a, b, spacing, edges):
    A = np.fft.fftn(a - b)
    B = np.fft.fftn(b)
    fr = [2 * np.pi * np.fft.fftfreq(s, d) for s, d in zip(a.shape, spacing)]
    g = np.meshgrid(*fr, indexing="ij", sparse=True)
    rr = np.sqrt(sum(x * x for x in g))
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (rr >= lo) & (rr < hi)
        den = np.sum(np.abs(B[m]) ** 2)
        out.append(float(np.sqrt(np.sum(np.abs(A[m]) ** 2) / den)) if den > 0 else np.nan)
    return out


def cross_validate(metric: SpacetimeMetric, f: GridField, realizations=REALIZATIONS,
                   rays=None, margin: Optional[int] = None, symbol: Optional[MultiplierSymbol] = None,
                   delta_width: Optional[float] = None, n_bands: int = 4,
                   keep_fields: bool = False, pair_cache=None) -> CrossValidationReport:
    """Pairwise relative L2 discrepancies among realizations of ``N f``.

    Discrepancies are measured on the interior grid, cropped by ``margin``
    cells (default: an eighth of each axis), in total and over dyadic shells
    of ``|(tau, xi)|`` ending at the Nyquist radius.
    """
    from .ray_transform import family_for_grid, normal_compose

    req = tuple(dict.fromkeys(realizations))
    if len(req) < 2:
        raise InvalidInputError("cross validation needs at least two realizations")
    bad = [r for r in req if r not in REALIZATIONS]
    if bad:
        raise InvalidInputError(f"unknown realizations {bad}")
    usable = _applicable(metric)
    missing = [r for r in req if r not in usable]
    if missing:
        raise InvalidInputError(f"realizations {missing} do not apply to a {metric.kind} metric")
    out = {}
    rho = None
    for name in req:
        if name == "multiplier":
            sym = symbol or MultiplierSymbol(f.n, "k")
            out[name] = apply_multiplier(f, sym).values
            P = np.array(default_padding(f)) + np.array(f.dims)
            rho = sym.resolved(2 * np.pi / (P[0] * f.spacing[0]),
                               min(2 * np.pi / (P[k] * f.spacing[k]) for k in range(1, f.n + 1)))[1]
        elif name == "kernel":
            out[name] = kernel_apply_static(metric, f, delta_width, pair_cache).values
        else:
            fam = rays if rays is not None else family_for_grid(metric, f, 4 * max(f.dims[1:]))
            out[name] = normal_compose(metric, f, fam).values
    if margin is None:
        margin = max(1, min(f.dims) // 8)
    crop = tuple(slice(margin, d - margin) for d in f.dims)
    nyq = np.pi / np.max(f.spacing)
    edges = nyq * 2.0 ** np.arange(-n_bands, 1)
    edges[0] = 0.0
    disc, bands = {}, {}
    for i, a in enumerate(req):
        for b in req[i + 1:]:
            va, vb = out[a][crop], out[b][crop]
            disc[(a, b)] = float(np.linalg.norm(va - vb) / max(np.linalg.norm(vb), 1e-300))
            bands[(a, b)] = _band_discrepancy(va, vb, f.spacing, edges)
    return CrossValidationReport(req, disc, edges, bands, margin, rho,
                                 out if keep_fields else {})


def measured_kernel_constant(n: int, size: int = 24, seed: int = 0) -> float:
    """Ratio of the kernel quadrature to the multiplier on a smooth space-like test field.

    The kernel form carries no explicit constant, so a ratio of 1 means the
    multiplier constant is exactly ``C_n``.
    """
    from .microlocal_probe import band_limited_field

    f = band_limited_field(n, size, band=(0.35, 0.7), seed=seed)
    a = apply_multiplier(f, MultiplierSymbol(n, "k")).values
    b = kernel_apply_static(_flat(n), f, 0.0).values
    c = size // 4
    crop = tuple(slice(c, size - c) for _ in range(n + 1))
    return float(np.sum(a[crop] * b[crop]) / np.sum(a[crop] * a[crop]))


def _flat(n):
    from .spacetime_geometry import minkowski
    return minkowski(n)

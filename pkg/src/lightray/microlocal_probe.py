"""Probes of singularities: synthesis, directional decay, symbol transport.

Conormal test distributions are built as ``u(phi(X)) a(X) w(X)`` where
``phi`` defines the carrier, ``u`` is a one-dimensional profile with
Fourier magnitude ``|eta|^{mu - (n+1)/4}``, ``a`` is the amplitude on the
carrier and ``w`` a compactly supported window.  With this normalization the
band energy of the windowed spectrum in a cone around the conormal direction
scales like ``lambda^{2 (mu - (n+1)/4) + 1}``, so the fitted slope of
``1/2 log E`` against ``log lambda`` is ``mu - (n+1)/4 + 1/2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import FitError, InvalidInputError, ResolutionError, SynthesisError
from .fields import GridField
from .normal_operator import a_profile, normal_constant, smooth_step

# ---------------------------------------------------------------------------
# test fields
# ---------------------------------------------------------------------------


def centered_grid(n: int, size, spacing=1.0, dtype=float) -> GridField:
    """Zero field on a grid centred at the origin; ``size`` is an int or per-axis dims."""
    dims = tuple(int(s) for s in np.broadcast_to(size, (n + 1,)))
    spacing = np.broadcast_to(np.asarray(spacing, float), (n + 1,))
    origin = -(np.array(dims) - 1) / 2 * spacing
    return GridField(np.zeros(dims, dtype), origin, spacing)


def bump_window(grid: GridField, radius: float, center=None) -> np.ndarray:
    """C-infinity ball window ``exp(1 - 1 / (1 - R^2))`` of Euclidean radius ``radius``."""
    center = np.zeros(grid.n + 1) if center is None else np.asarray(center, float)
    g = grid.mesh()
    R2 = sum(((a - c) / radius) ** 2 for a, c in zip(g, center))
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(R2 < 1, np.exp(1 - 1 / np.maximum(1 - R2, 1e-300)), 0.0)


def band_limited_field(n: int, size, band=(0.4, 0.8), cone: float = 0.5, seed: int = 0,
                       window: float = 0.6, spacing=1.0, causal: str = "space") -> GridField:
    """Windowed random field with spectrum in a dyadic shell and a causal cone.

    ``band`` bounds ``|xi|`` (space-like) or ``|tau|`` (time-like) in
    radians per unit length; ``cone`` is the margin ratio: ``|tau| <= cone |xi|``
    for ``causal="space"`` and ``|xi| <= cone |tau|`` for ``causal="time"``.
    The field is multiplied by a smooth bump of radius ``window`` times the
    half extent of the smallest axis.
    """
    grid = centered_grid(n, size, spacing)
    rng = np.random.default_rng(seed)
    W = np.fft.fftn(rng.standard_normal(grid.dims))
    fr = [2 * np.pi * np.fft.fftfreq(d, h) for d, h in zip(grid.dims, grid.spacing)]
    g = np.meshgrid(*fr, indexing="ij", sparse=True)
    tau = np.abs(g[0])
    xi = np.sqrt(sum(a * a for a in g[1:]))
    lam, lam2 = band
    if causal == "space":
        rad, other = xi, tau
    elif causal == "time":
        rad, other = tau, xi
    else:
        raise InvalidInputError("causal must be 'space' or 'time'")
    edge = 0.2 * lam
    shell = smooth_step((rad - lam) / edge) * smooth_step((lam2 - rad) / edge)
    wedge = smooth_step((cone * rad - other) / (0.15 * lam))
    f = np.real(np.fft.ifftn(W * shell * wedge))
    half = 0.5 * min((d - 1) * h for d, h in zip(grid.dims, grid.spacing))
    f *= bump_window(grid, window * half)
    peak = np.max(np.abs(f))
    if not peak > 0:
        raise InvalidInputError("the frequency shell holds no grid frequency; widen the band "
                                "or enlarge the grid")
    return grid.like(f / peak)


def wave_packet(grid: GridField, center, zeta, sigma: float, phase: float = 0.0) -> GridField:
    """Real Gaussian packet ``cos(zeta . (X - c) + phase) exp(-|X - c|^2 / 2 sigma^2)``."""
    center = np.asarray(center, float)
    zeta = np.asarray(zeta, float)
    if not np.any(zeta):
        raise InvalidInputError("packet covector must be nonzero")
    g = grid.mesh()
    d = [a - c for a, c in zip(g, center)]
    ph = sum(z * a for z, a in zip(zeta, d)) + phase
    env = np.exp(-0.5 * sum(a * a for a in d) / sigma**2)
    return grid.like(np.cos(ph) * env)


# ---------------------------------------------------------------------------
# conormal synthesis
# ---------------------------------------------------------------------------

HYPERPLANE = "hyperplane"
LIGHT_CONE = "light_cone"
POINT = "point"


@dataclass
class ConormalSpec:
    """Recipe for a distribution conormal to a carrier.

    carrier: ``"hyperplane"`` (``normal`` covector in ``(t, x)``, ``offset``),
    ``"light_cone"`` (``vertex``, ``future`` flag) or ``"point"`` (wave
    packet with ``center``, covector ``zeta``, ``scale``).
    ``amplitude(X)`` gives ``a`` at grid points ``X`` of shape ``(..., n+1)``
    (default 1); ``window = (center, radius)`` is a smooth ball window.
    ``profile`` selects an even (cosine) or odd (sine) profile.  Optional
    ``symbol_samples`` hold the amplitude along sampled bicharacteristics,
    shape ``(rays, samples)``, for sign checks.
    """

    carrier: str
    order: float = 0.0
    normal: Optional[np.ndarray] = None
    offset: float = 0.0
    vertex: Optional[np.ndarray] = None
    future: bool = True
    center: Optional[np.ndarray] = None
    zeta: Optional[np.ndarray] = None
    scale: float = 1.0
    amplitude: Optional[Callable] = None
    amplitude_scale: float = 1.0
    window: Optional[tuple] = None
    profile: str = "even"
    symbol_samples: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.carrier == HYPERPLANE:
            if self.normal is None or not np.any(self.normal):
                raise InvalidInputError("hyperplane normal must be nonzero")
            self.normal = np.asarray(self.normal, float)
        elif self.carrier == LIGHT_CONE:
            if self.vertex is None:
                raise InvalidInputError("light-cone carrier needs a vertex")
            self.vertex = np.asarray(self.vertex, float)
        elif self.carrier == POINT:
            if self.zeta is None or not np.any(self.zeta) or self.center is None:
                raise InvalidInputError("wave packet needs a center and a nonzero covector")
            self.zeta = np.asarray(self.zeta, float)
            self.center = np.asarray(self.center, float)
        else:
            raise InvalidInputError(f"unknown carrier {self.carrier!r}")
        if self.profile not in ("even", "odd"):
            raise InvalidInputError("profile must be 'even' or 'odd'")


def _profile_1d(phi, m, eta_lo, eta_hi, odd, step):
    """``u(phi) = int chi(eta) |eta|^m cos|sin(eta phi) deta`` on ``eta > 0``, via a fine 1-D FFT."""
    span = float(np.max(phi) - np.min(phi))
    L = max(8 * span, 64 * np.pi / eta_lo)
    M = int(2 ** np.ceil(np.log2(L / step)))
    xs = (np.arange(M) - M // 2) * step
    eta = 2 * np.pi * np.fft.rfftfreq(M, step)
    chi = smooth_step((eta - eta_lo) / eta_lo) * smooth_step((eta_hi - eta) / (0.1 * eta_hi))
    with np.errstate(divide="ignore"):
        amp = np.where(eta > 0, chi * np.abs(np.where(eta > 0, eta, 1.0)) ** m, 0.0)
    spec = amp * (-1j if odd else 1.0)
    # centre the profile at xs = 0
    spec = spec * np.exp(1j * eta * (M // 2) * step)
    u = np.fft.irfft(spec, n=M) * M * (eta[1] - eta[0]) / np.pi
    k = (phi - xs[0]) / step
    i0 = np.clip(np.floor(k).astype(int), 1, M - 3)
    a = k - i0
    w = [-a * (a - 1) * (a - 2) / 6, (a + 1) * (a - 1) * (a - 2) / 2,
         -(a + 1) * a * (a - 2) / 2, (a + 1) * a * (a - 1) / 6]
    return sum(wi * u[i0 - 1 + j] for j, wi in enumerate(w))


def synthesize(spec: ConormalSpec, grid: GridField, eta_lo: Optional[float] = None) -> GridField:
    """Sample the conormal recipe on ``grid`` (real valued, compactly supported)."""
    n = grid.n
    g = grid.mesh(sparse=False)
    X = np.stack(g, axis=-1)
    h = float(np.max(grid.spacing))
    nyq = np.pi / h
    lo = grid.origin
    hi = grid.origin + grid.spacing * (np.array(grid.dims) - 1)
    if spec.window is not None:
        wc, wr = spec.window
        wc = np.asarray(wc, float)
        if np.any(wc - wr < lo - 1e-9) or np.any(wc + wr > hi + 1e-9):
            raise SynthesisError("window is not contained in the grid")
        win = bump_window(grid, wr, wc)
    else:
        win = np.ones(grid.dims)
    amp = np.ones(grid.dims) if spec.amplitude is None else np.asarray(spec.amplitude(X), float)
    amp = amp * spec.amplitude_scale
    if not np.any(amp * win):
        return grid.like(np.zeros(grid.dims))
    m = spec.order - (n + 1) / 4
    if spec.carrier == POINT:
        d = X - spec.center
        ph = d @ spec.zeta
        env = np.exp(-0.5 * np.sum(d * d, axis=-1) / spec.scale**2)
        prof = np.sin(ph) if spec.profile == "odd" else np.cos(ph)
        return grid.like(prof * env * amp * win)
    if spec.carrier == HYPERPLANE:
        nu = spec.normal / np.linalg.norm(spec.normal)
        phi = X @ nu - spec.offset
        # highest resolvable frequency along the normal
        with np.errstate(divide="ignore"):
            eta_hi = float(np.min(np.where(np.abs(nu) > 1e-12,
                                           np.pi / (grid.spacing * np.maximum(np.abs(nu), 1e-12)),
                                           np.inf)))
    else:
        d = X[..., 1:] - spec.vertex[1:]
        rad = np.sqrt(np.sum(d * d, axis=-1))
        dt = X[..., 0] - spec.vertex[0]
        phi = (dt - rad) if spec.future else (dt + rad)
        eta_hi = nyq / np.sqrt(2)
    if eta_lo is None:
        extent = float(np.min(hi - lo))
        # the ramp completes at 2 eta_lo = 16 / extent, below the probe cutoff
        # 3 / ww = 24 / extent of the default window
        eta_lo = 8.0 / extent
    if eta_hi < 16 * eta_lo:
        raise SynthesisError("grid resolves fewer than four dyadic bands above the cutoff")
    active = (amp * win) != 0
    if not np.any(np.abs(phi[active]) < np.max(grid.spacing) * 4):
        raise SynthesisError("carrier does not meet the window")
    u = np.zeros(grid.dims)
    u[active] = _profile_1d(phi[active], m, eta_lo, eta_hi, spec.profile == "odd", h / 8)
    return grid.like(u * amp * win)


# ---------------------------------------------------------------------------
# directional decay
# ---------------------------------------------------------------------------

@dataclass
class DecayReport:
    bands: np.ndarray
    energies: np.ndarray
    slope: float
    halfwidth: float
    smooth: bool
    floor: float
    window_width: float
    half_angle: float
    point: np.ndarray = None
    direction: np.ndarray = None

    @property
    def verdict(self) -> str:
        return "numerically smooth" if self.smooth else "singular"

    def rows(self):
        for lam, e in zip(self.bands, self.energies):
            yield dict(band=lam, energy=e, slope=self.slope, halfwidth=self.halfwidth,
                       verdict=self.verdict)


def _fit_slope(x, y):
    if len(x) < 3 or np.ptp(x) == 0:
        raise FitError("degenerate regression")
    res = stats.linregress(x, y)
    dof = len(x) - 2
    half = float(stats.t.ppf(0.975, dof) * res.stderr) if dof > 0 else np.inf
    return float(res.slope), half, float(res.intercept)


def wf_decay_probe(f: GridField, point, direction, half_angle: float = np.pi / 12,
                   window_width: Optional[float] = None, n_bands: Optional[int] = None,
                   smooth_slope: float = -10.0, rel_floor: float = 1e-10,
                   top: Optional[float] = None, rho: Optional[float] = None) -> DecayReport:
    """Windowed Fourier band energies in a cone around ``direction`` at ``point``.

    The window is a Gaussian of standard deviation ``window_width`` (default
    an eighth of the smallest grid extent).  Band ``j`` collects
    ``|F(zeta)|^2`` for ``lambda_j <= |zeta| < 2 lambda_j`` inside the cone;
    the top band ends at ``top`` (default the Nyquist radius of the coarsest
    axis).  Band energies below ``rel_floor`` times the total windowed energy
    are treated as numerically zero; the verdict is smooth when the slope of
    ``1/2 log E`` is below ``smooth_slope`` or all bands vanish.  Bands start
    above ``rho`` (default ``3 / window_width``, where the window's own
    spectrum has fallen to ``e^-4.5``).
    """
    point = np.asarray(point, float)
    direction = np.asarray(direction, float)
    if not np.any(direction):
        raise InvalidInputError("probe direction must be nonzero")
    direction = direction / np.linalg.norm(direction)
    lo = f.origin
    hi = f.origin + f.spacing * (np.array(f.dims) - 1)
    if np.any(point < lo) or np.any(point > hi):
        raise InvalidInputError("probe point outside the grid")
    extent = float(np.min(hi - lo))
    ww = extent / 8 if window_width is None else float(window_width)
    g = f.mesh()
    win = np.exp(-0.5 * sum(((a - c) / ww) ** 2 for a, c in zip(g, point)))
    F = np.fft.fftn(f.values * win)
    fr = [2 * np.pi * np.fft.fftfreq(d, h) for d, h in zip(f.dims, f.spacing)]
    gg = np.meshgrid(*fr, indexing="ij", sparse=True)
    rr = np.sqrt(sum(a * a for a in gg))
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = sum(a * d for a, d in zip(gg, direction)) / np.where(rr > 0, rr, 1.0)
    cone = (cosang >= np.cos(half_angle)) & (rr > 0)
    # the window resolves frequencies above a few multiples of 1 / ww
    rho = 3.0 / ww if rho is None else float(rho)
    top = np.pi / float(np.max(f.spacing)) if top is None else float(top)
    count = int(np.floor(np.log2(top / rho))) if top > rho else 0
    if n_bands is not None:
        count = min(count, n_bands)
    if count < 4:
        raise ResolutionError("fewer than four dyadic bands above the window cutoff")
    edges = top * 2.0 ** -np.arange(count, -1, -1)
    P = np.abs(F) ** 2
    total = float(P.sum())
    E = np.array([P[cone & (rr >= a) & (rr < b)].sum() for a, b in zip(edges[:-1], edges[1:])])
    centers = np.sqrt(edges[:-1] * edges[1:])
    floor = rel_floor * max(total, 1e-300)
    if total == 0 or np.all(E <= floor):
        return DecayReport(centers, E, -np.inf, 0.0, True, floor, ww, half_angle, point, direction)
    Ec = np.maximum(E, np.finfo(float).tiny)
    slope, half, _ = _fit_slope(np.log(centers), 0.5 * np.log(Ec))
    vanish = bool(np.all(E[count // 2:] <= floor))
    return DecayReport(centers, E, slope, half, bool(slope < smooth_slope) or vanish, floor, ww,
                       half_angle, point, direction)


# ---------------------------------------------------------------------------
# transport along bicharacteristics
# ---------------------------------------------------------------------------

def transport_constant(n: int) -> float:
    """Constant ``kappa_n`` of the leading transport kernel ``kappa_n K_n``.

    Matched to the large-``sigma`` endpoint asymptotics of :func:`a_profile`
    at ``r = 1``: ``A ~ C_3 / (i sigma)`` pairs with the principal value
    ``1/u`` (Fourier magnitude ``pi``) for n = 3, and
    ``A ~ C_2 sqrt(pi / (2 sigma)) e^{-i pi/4}`` pairs with ``|u|^{-1/2}``
    (Fourier magnitude ``sqrt(2 pi / sigma)``) for n = 2.
    """
    if n == 3:
        return normal_constant(3) / np.pi
    if n == 2:
        return normal_constant(2) * np.sqrt(np.pi / 2) / np.sqrt(2 * np.pi)
    raise InvalidInputError("transport is implemented for n = 2, 3")


def transport_kernel_check(n: int, sigma: float = 400.0) -> float:
    """Relative mismatch between :func:`transport_constant` and :func:`a_profile` asymptotics."""
    # average over a period of the second endpoint's oscillation
    s = sigma + np.linspace(0, np.pi, 64, endpoint=False)
    A = a_profile(n, s, 1.0, nodes=256)
    if n == 3:
        # C_3 (1 - e^{-2 i s}) / (i s): the endpoint part is C_3 / (i s)
        lead = np.mean(A * 1j * s)
        got = abs(lead) / np.pi
    else:
        lead = np.mean(A * np.sqrt(s) * np.exp(1j * np.pi / 4))
        got = abs(lead) / np.sqrt(2 * np.pi)
    return float(abs(got - transport_constant(n)) / transport_constant(n))


@dataclass
class Transport:
    value: float
    profile: np.ndarray
    s_eval: np.ndarray
    deviation: float
    constant: float

    def __float__(self):
        return float(self.value)


def _abs_sqrt_weights(s, sp):
    """Product weights ``w_i`` with ``sum w_i a_i = int |sp - s|^{-1/2} a(s) ds`` for piecewise-linear a."""
    w = np.zeros(len(s))
    for i in range(len(s) - 1):
        a, b = s[i], s[i + 1]
        h = b - a

        def moments(lo, hi):
            # int (u) |sp - u|^{-1/2} du and int |sp - u|^{-1/2} du over [lo, hi] on one side of sp
            if hi <= sp:
                d1, d0 = sp - lo, sp - hi
                m0 = 2 * (np.sqrt(d1) - np.sqrt(d0))
                m1 = sp * m0 - (2.0 / 3.0) * (d1 ** 1.5 - d0 ** 1.5)
            else:
                d0, d1 = lo - sp, hi - sp
                m0 = 2 * (np.sqrt(d1) - np.sqrt(d0))
                m1 = sp * m0 + (2.0 / 3.0) * (d1 ** 1.5 - d0 ** 1.5)
            return m0, m1

        if a < sp < b:
            m0a, m1a = moments(a, sp)
            m0b, m1b = moments(sp, b)
            m0, m1 = m0a + m0b, m1a + m1b
        else:
            m0, m1 = moments(a, b)
        # a(u) = a_i (b - u)/h + a_{i+1} (u - a)/h
        w[i] += (b * m0 - m1) / h
        w[i + 1] += (m1 - a * m0) / h
    return w


def _pv_inverse(a, s, sp, excision):
    """PV of ``int a(s) / (sp - s) ds`` with a symmetric excision around ``sp``.

    The regularized integrand ``(a(s) - a(sp)) / (sp - s)`` is integrated by
    the trapezoid rule, with its Taylor expansion ``-a'(sp) + a''(sp) u / 2``
    (``u = sp - s``) at nodes inside the excision; the singular part
    ``a(sp) log((sp - s_0) / (s_N - sp))`` is exact.
    """
    ds = s[1] - s[0]
    d1 = np.gradient(a, ds)
    asp = np.interp(sp, s, a)
    da = np.interp(sp, s, d1)
    dda = np.interp(sp, s, np.gradient(d1, ds))
    u = sp - s
    keep = np.abs(u) > excision
    reg = np.where(keep, (a - asp) / np.where(keep, u, 1.0), -da + 0.5 * dda * u)
    val = np.trapezoid(reg, s)
    lo, hi = sp - s[0], s[-1] - sp
    if lo > 0 and hi > 0:
        val += asp * np.log(lo / hi)
    else:
        raise ResolutionError("evaluation point must lie inside the parameter grid")
    return val


def transport_alpha(metric, bichar, a, n: int, s_eval=None, excision_cells: int = 2) -> Transport:
    """``alpha(s') = kappa_n int K_n(s' - s) a(s) ds`` along one bicharacteristic.

    ``bichar`` is a :class:`Bicharacteristic` (its parameter samples are used)
    or a 1-D array of uniform parameters; ``a`` holds symbol samples on it.
    ``K_3(u) = 1/u`` (principal value, symmetric excision of
    ``excision_cells`` spacings) and ``K_2(u) = |u|^{-1/2}`` (exact product
    integration of piecewise-linear ``a``).  ``value`` is alpha at the
    middle of ``s_eval`` (default: the parameter grid); ``deviation`` is
    the relative spread of alpha across ``s_eval``.
    """
    if n not in (2, 3):
        raise InvalidInputError("transport is implemented for n = 2, 3")
    s = np.asarray(getattr(bichar, "s", bichar), float)
    a = np.asarray(a, float)
    if s.shape != a.shape:
        raise InvalidInputError("symbol samples must match the parameter grid")
    if len(s) < 4:
        raise ResolutionError("too few samples")
    ds = np.diff(s)
    if n == 3 and not np.allclose(ds, ds[0], rtol=1e-8):
        raise InvalidInputError("principal-value transport needs uniform samples")
    kappa = transport_constant(n)
    if s_eval is None:
        s_eval = s[1:-1] if n == 3 else s
    s_eval = np.atleast_1d(np.asarray(s_eval, float))
    if n == 3:
        exc = excision_cells * ds[0]
        supp = s[np.abs(a) > 0]
        if len(supp) and (supp[-1] - supp[0]) < 5 * exc:
            raise ResolutionError("sample spacing too coarse for the excision width")
        prof = np.array([_pv_inverse(a, s, sp, exc) for sp in s_eval])
    else:
        prof = np.array([_abs_sqrt_weights(s, sp) @ a for sp in s_eval])
    prof = kappa * prof
    mid = prof[len(prof) // 2]
    scale = np.max(np.abs(prof)) if np.any(prof) else 1.0
    dev = float((np.max(prof) - np.min(prof)) / scale) if np.any(prof) else 0.0
    return Transport(float(mid), prof, s_eval, dev, kappa)


# ---------------------------------------------------------------------------
# light-like cancellation
# ---------------------------------------------------------------------------

def null_generator(spec: ConormalSpec) -> np.ndarray:
    """Unit Euclidean direction in ``(t, x)`` of the null generators of a null hyperplane."""
    nu = spec.normal
    tau, xi = nu[0], nu[1:]
    if not np.isclose(tau * tau, xi @ xi, rtol=1e-10):
        raise InvalidInputError("carrier normal is not light-like")
    # the generator is the raised normal (-tau, xi), which lies in the hyperplane
    v = np.concatenate([[-tau], xi])
    v = v * np.sign(v[0]) if v[0] != 0 else v
    return v / np.linalg.norm(v)


def invisible_leading(metric, gamma: ConormalSpec, a: Callable, b: Callable, T: float,
                      s_grid: np.ndarray, reference: Optional[float] = None,
                      transverse=None) -> ConormalSpec:
    """Symbol ``beta a - alpha b`` whose leading transport cancels at the reference point.

    ``gamma`` is a null-hyperplane spec; ``a(s)`` and ``b(s)`` are amplitude
    profiles in the generator parameter ``s`` (b is used as ``b(s - T)``),
    optionally multiplied by ``transverse(X)``.  ``alpha``, ``beta`` are
    the transports of ``a`` and ``b`` evaluated at ``reference`` (default:
    midway between the supports).
    """
    n = metric.n
    if n not in (2, 3):
        raise InvalidInputError("invisible construction is implemented for n = 2, 3")
    if gamma.carrier != HYPERPLANE:
        raise InvalidInputError("carrier must be a null hyperplane")
    s = np.asarray(s_grid, float)
    av = np.asarray(a(s), float)
    bv = np.asarray(b(s - T), float)
    sa = s[np.abs(av) > 0]
    sb = s[np.abs(bv) > 0]
    if len(sa) and len(sb) and not (sa[-1] < sb[0] or sb[-1] < sa[0]):
        raise InvalidInputError("projected supports of a and b overlap")
    if reference is None:
        if len(sa) and len(sb):
            reference = 0.5 * (min(sa[-1], sb[-1]) + max(sa[0], sb[0]))
        else:
            reference = float(s[len(s) // 2])
    alpha = transport_alpha(metric, s, av, n, s_eval=[reference]).value if np.any(av) else 0.0
    beta = transport_alpha(metric, s, bv, n, s_eval=[reference]).value if np.any(bv) else 0.0
    sym = beta * av - alpha * bv
    v = null_generator(gamma)
    nu = gamma.normal / np.linalg.norm(gamma.normal)
    base = gamma.offset * nu

    def amplitude(X):
        sp = (X - base) @ v
        val = beta * np.asarray(a(sp)) - alpha * np.asarray(b(sp - T))
        if transverse is not None:
            val = val * transverse(X)
        return val

    out = ConormalSpec(HYPERPLANE, gamma.order, gamma.normal, gamma.offset,
                       amplitude=amplitude, window=gamma.window, profile=gamma.profile,
                       symbol_samples=sym[None, :],
                       meta=dict(alpha=alpha, beta=beta, reference=reference, T=T,
                                 s_grid=s, generator=v))
    return out


def sign_definite_check(spec: ConormalSpec, metric=None) -> bool:
    """True iff the sampled symbol has one sign (zeros allowed) along every sampled ray."""
    samples = spec.symbol_samples
    if samples is None:
        raise InvalidInputError("spec carries no symbol samples")
    s = np.atleast_2d(np.asarray(samples, float))
    pos = np.any(s > 0, axis=1)
    neg = np.any(s < 0, axis=1)
    return bool(not np.any(pos & neg))


def residual_transport(metric, spec: ConormalSpec, n: int) -> float:
    """Transport of the returned symbol at its reference point, relative to ``|alpha| |beta|`` scale."""
    m = spec.meta
    s = m["s_grid"]
    sym = spec.symbol_samples[0]
    val = transport_alpha(metric, s, sym, n, s_eval=[m["reference"]]).value
    scale = max(abs(m["alpha"]), abs(m["beta"]), 1e-300) ** 2
    return float(abs(val) / scale)


# ---------------------------------------------------------------------------
# Sobolev gain
# ---------------------------------------------------------------------------

@dataclass
class SobolevFit:
    gain: float
    slope: float
    residual: float
    bands: np.ndarray
    ratios: np.ndarray


def _norm_of(x, metric=None):
    from .ray_transform import RayData

    if isinstance(x, RayData):
        return x.norm()
    if isinstance(x, GridField):
        return x.norm()
    return float(np.linalg.norm(np.ravel(x)))


def sobolev_gain_fit(operator: Callable, bands: Sequence[float], probe_family: Callable) -> SobolevFit:
    """Fit ``log ||Op f_lambda|| - log ||f_lambda||`` against ``log lambda``.

    ``probe_family(lambda)`` returns a GridField; the returned gain is minus
    the fitted slope.
    """
    bands = np.asarray(bands, float)
    if len(bands) < 4:
        raise FitError("at least four bands are required")
    ratios = []
    for lam in bands:
        f = probe_family(lam)
        nf = f.norm()
        if nf == 0:
            raise FitError("probe of zero norm")
        ratios.append(_norm_of(operator(f)) / nf)
    ratios = np.array(ratios)
    if np.any(ratios <= 0):
        raise FitError("operator annihilated a probe")
    x, y = np.log(bands), np.log(ratios)
    slope, _, icpt = _fit_slope(x, y)
    resid = float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))
    return SobolevFit(-slope, slope, resid, bands, ratios)

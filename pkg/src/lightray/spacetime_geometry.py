"""Product Lorentzian metrics, causal classes, null bicharacteristics.

Metrics have the form ``g = -dt^2 + h(t, x)`` on a coordinate box.  The
spatial part is supplied through vectorized evaluators: ``h(t, x)`` returns
an array of shape ``(..., n, n)`` and ``dh(t, x)`` returns the pair
``(dh/dt, dh/dx)`` with shapes ``(..., n, n)`` and ``(..., n, n, n)``, the
latter indexed ``[..., j, a, b] = d_j h_ab``.

Phase-space convention
----------------------
A phase point stores ``(t, x, tau, xi)`` where ``tau`` is oriented so that
``dt/ds = tau`` along the flow,

    dt/ds = tau,   dx/ds = h^{-1} xi,
    dtau/ds = -1/2 v.(d_t h) v,   dxi_j/ds = 1/2 v.(d_j h) v,   v = h^{-1} xi,

which conserves ``f = 1/2 (-tau^2 + h^{-1}(xi, xi))``.  With this orientation
the Minkowski ray through ``(0, z)`` with ``(tau, xi) = (1, theta)`` is
``(s, z + s theta)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import (DomainError, IntegrationError, InvalidInputError,
                     NoSolutionError, SingularJacobianError)

MINKOWSKI = "minkowski"
STATIC = "static"
GLOBALLY_HYPERBOLIC = "globally_hyperbolic"
KINDS = (MINKOWSKI, STATIC, GLOBALLY_HYPERBOLIC)


@dataclass(frozen=True)
class SpacetimeMetric:
    """Metric ``-dt^2 + h(t, x)`` on the box ``box[k] = (lo_k, hi_k)``.

    Axis 0 of ``box`` is time, axes ``1..n`` are space.
    """

    n: int
    kind: str
    h: Callable
    dh: Callable
    box: np.ndarray
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 2:
            raise InvalidInputError("spatial dimension must be >= 2")
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown metric kind {self.kind!r}")
        box = np.asarray(self.box, dtype=float)
        if box.shape != (self.n + 1, 2) or np.any(box[:, 1] <= box[:, 0]):
            raise InvalidInputError("box must have shape (n+1, 2) with lo < hi")
        object.__setattr__(self, "box", box)

    def contains(self, t, x) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        ok = (t >= self.box[0, 0]) & (t <= self.box[0, 1])
        ok &= np.all((x >= self.box[1:, 0]) & (x <= self.box[1:, 1]), axis=-1)
        return ok

    def check(self, t, x):
        if not np.all(self.contains(t, x)):
            raise DomainError("point outside the metric domain box")

    def h_inv(self, t, x):
        return np.linalg.inv(self.h(t, x))


# ---------------------------------------------------------------------------
# built-in metrics
# ---------------------------------------------------------------------------

def _default_box(n, half=1e6):
    return np.tile([-half, half], (n + 1, 1)).astype(float)


def _conformal(n, kind, c, dc, box, name, params):
    """Metric ``h = c(t, x) I`` from a scalar factor and its gradient.

    ``dc(t, x)`` returns ``(c_t, grad_x c)``.
    """
    eye = np.eye(n)

    def h(t, x):
        return c(t, x)[..., None, None] * eye

    def dh(t, x):
        ct, cx = dc(t, x)
        return ct[..., None, None] * eye, cx[..., :, None, None] * eye

    return SpacetimeMetric(n, kind, h, dh, box, name, params)


def minkowski(n: int = 2, box=None) -> SpacetimeMetric:
    box = _default_box(n) if box is None else box

    def c(t, x):
        return np.ones(np.broadcast(np.asarray(t), np.asarray(x)[..., 0]).shape)

    def dc(t, x):
        one = c(t, x)
        return 0.0 * one, np.zeros(one.shape + (n,))

    return _conformal(n, MINKOWSKI, c, dc, box, "minkowski", {})


def _gauss_bump(x, center, width):
    d = x - center
    return np.exp(-0.5 * np.sum(d * d, axis=-1) / width**2), d / width**2


def static_bump(n: int = 2, eps: float = 0.1, width: float = 1.0,
                center=None, box=None) -> SpacetimeMetric:
    """Static metric ``h = (1 + eps exp(-|x - c|^2 / 2 w^2)) I``."""
    if not eps > -1.0:
        raise InvalidInputError("eps must exceed -1 to keep h positive")
    center = np.zeros(n) if center is None else np.asarray(center, float)
    box = _default_box(n) if box is None else box

    def c(t, x):
        b, _ = _gauss_bump(np.asarray(x), center, width)
        return 1.0 + eps * np.broadcast_to(b, np.broadcast(np.asarray(t), b).shape)

    def dc(t, x):
        b, d = _gauss_bump(np.asarray(x), center, width)
        shape = np.broadcast(np.asarray(t), b).shape
        grad = -eps * (b[..., None] * d)
        return np.zeros(shape), np.broadcast_to(grad, shape + (n,))

    params = dict(eps=eps, width=width, center=center.tolist())
    return _conformal(n, STATIC, c, dc, box, "static-bump", params)


def gh_bump(n: int = 2, eps: float = 0.1, width: float = 1.0,
            center=None, box=None) -> SpacetimeMetric:
    """Time-dependent metric ``h = (1 + eps exp(-(t^2 + |x - c|^2) / 2 w^2)) I``."""
    if not eps > -1.0:
        raise InvalidInputError("eps must exceed -1 to keep h positive")
    center = np.zeros(n) if center is None else np.asarray(center, float)
    box = _default_box(n) if box is None else box

    def parts(t, x):
        t = np.asarray(t)
        b, d = _gauss_bump(np.asarray(x), center, width)
        b = b * np.exp(-0.5 * t**2 / width**2)
        return t, b, d

    def c(t, x):
        _, b, _ = parts(t, x)
        return 1.0 + eps * b

    def dc(t, x):
        t, b, d = parts(t, x)
        ct = -eps * b * t / width**2
        return ct, -eps * b[..., None] * d

    params = dict(eps=eps, width=width, center=center.tolist())
    return _conformal(n, GLOBALLY_HYPERBOLIC, c, dc, box, "gh-bump", params)


def sphere_slice(eps: float = 0.0, width: float = 0.7, center=(0.3, 0.5),
                 box=None) -> SpacetimeMetric:
    """Round unit sphere in the stereographic chart, n = 2, static.

    ``h = 4 / (1 + |x|^2)^2 (1 + eps b(x)) I`` with ``b`` a Gaussian bump at
    ``center``; ``eps != 0`` breaks the symmetry so conjugate points become
    folds for generic directions.
    """
    n = 2
    center = np.asarray(center, float)
    box = np.array([[-1e6, 1e6], [-20.0, 20.0], [-20.0, 20.0]]) if box is None else box

    def c(t, x):
        x = np.asarray(x)
        r2 = np.sum(x * x, axis=-1)
        b, _ = _gauss_bump(x, center, width)
        out = 4.0 / (1.0 + r2) ** 2 * (1.0 + eps * b)
        return np.broadcast_to(out, np.broadcast(np.asarray(t), out).shape)

    def dc(t, x):
        x = np.asarray(x)
        r2 = np.sum(x * x, axis=-1)
        b, d = _gauss_bump(x, center, width)
        base = 4.0 / (1.0 + r2) ** 2
        dbase = -16.0 * x / (1.0 + r2)[..., None] ** 3
        grad = dbase * (1.0 + eps * b)[..., None] - base[..., None] * eps * b[..., None] * d
        shape = np.broadcast(np.asarray(t), r2).shape
        return np.zeros(shape), np.broadcast_to(grad, shape + (n,))

    params = dict(eps=eps, width=width, center=center.tolist())
    return _conformal(n, STATIC, c, dc, box, "sphere-slice", params)


def flat_static(n: int = 2, box=None) -> SpacetimeMetric:
    """Euclidean ``h`` flagged as a static metric (exercises curved code paths)."""
    m = minkowski(n, box)
    return SpacetimeMetric(n, STATIC, m.h, m.dh, m.box, "flat-static", {})


BUILTIN_METRICS = {
    "minkowski": minkowski,
    "static-bump": static_bump,
    "sphere-slice": sphere_slice,
    "gh-bump": gh_bump,
    "flat-static": flat_static,
}


def metric_from_name(name: str, n: int = 2, **params) -> SpacetimeMetric:
    try:
        factory = BUILTIN_METRICS[name]
    except KeyError:
        raise InvalidInputError(f"unknown metric {name!r}; choose from {sorted(BUILTIN_METRICS)}")
    if name == "sphere-slice":
        if n != 2:
            raise InvalidInputError("sphere-slice is two-dimensional")
        return factory(**params)
    return factory(n=n, **params)


# ---------------------------------------------------------------------------
# covectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhasePoint:
    t: float
    x: np.ndarray
    tau: float
    xi: np.ndarray

    def state(self) -> np.ndarray:
        return np.concatenate([[self.t], np.ravel(self.x), [self.tau], np.ravel(self.xi)])

    @classmethod
    def from_state(cls, y):
        y = np.asarray(y, float)
        n = (y.size - 2) // 2
        return cls(float(y[0]), y[1:n + 1].copy(), float(y[n + 1]), y[n + 2:].copy())


@dataclass(frozen=True)
class CausalClass:
    kind: str                        # "spacelike" | "timelike" | "lightlike"
    future: Optional[bool] = None    # None for space-like covectors

    def __str__(self):
        if self.future is None:
            return self.kind
        return f"{self.kind} ({'future' if self.future else 'past'})"


def lorentz_norm(metric: SpacetimeMetric, t, x, tau, xi):
    """``g(zeta, zeta) = -tau^2 + h^{-1}(xi, xi)``, vectorized."""
    xi = np.asarray(xi, float)
    h = metric.h(t, x)
    v = np.linalg.solve(h, xi[..., None])[..., 0]
    return -np.asarray(tau, float) ** 2 + np.sum(xi * v, axis=-1)


def hamiltonian(metric: SpacetimeMetric, p: PhasePoint) -> float:
    metric.check(p.t, p.x)
    return 0.5 * float(lorentz_norm(metric, p.t, p.x, p.tau, p.xi))


def classify_covector(metric: SpacetimeMetric, p: PhasePoint,
                      tol_rel: float = 1e-10) -> CausalClass:
    zeta = np.concatenate([[p.tau], np.ravel(p.xi)])
    if not np.any(zeta):
        raise InvalidInputError("zero covector has no causal class")
    metric.check(p.t, p.x)
    q = float(lorentz_norm(metric, p.t, p.x, p.tau, p.xi))
    scale = tol_rel * float(zeta @ zeta)
    if q > scale:
        return CausalClass("spacelike")
    future = bool(p.tau > 0)
    if q < -scale:
        return CausalClass("timelike", future)
    return CausalClass("lightlike", future)


# ---------------------------------------------------------------------------
# Hamilton vector field
# ---------------------------------------------------------------------------

def hamilton_rhs(metric: SpacetimeMetric, y: np.ndarray, frozen_t=None) -> np.ndarray:
    """Hamilton vector field on states ``(..., 2n + 2)``.

    With ``frozen_t`` the spatial metric is evaluated at that fixed time, which
    gives the static flow of the slice ``h(frozen_t, .)``.
    """
    n = metric.n
    t = y[..., 0]
    x = y[..., 1:n + 1]
    tau = y[..., n + 1]
    xi = y[..., n + 2:]
    te = t if frozen_t is None else np.full_like(t, frozen_t)
    h = metric.h(te, x)
    dht, dhx = metric.dh(te, x)
    v = np.linalg.solve(h, xi[..., None])[..., 0]
    out = np.empty_like(y)
    out[..., 0] = tau
    out[..., 1:n + 1] = v
    if frozen_t is None:
        out[..., n + 1] = -0.5 * np.einsum("...a,...ab,...b->...", v, dht, v)
    else:
        out[..., n + 1] = 0.0
    out[..., n + 2:] = 0.5 * np.einsum("...a,...jab,...b->...j", v, dhx, v)
    return out


def _rk4_step(rhs, y, h):
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_flow(rhs, y0: np.ndarray, length: float, n_steps: int, record: bool = False):
    """Fixed-step classical RK4 over a parameter interval of given length."""
    h = length / n_steps
    y = np.array(y0, dtype=float)
    path = [y.copy()] if record else None
    for _ in range(n_steps):
        y = _rk4_step(rhs, y, h)
        if record:
            path.append(y.copy())
    if not np.all(np.isfinite(y)):
        raise IntegrationError("non-finite state during RK4 integration")
    return (y, np.array(path)) if record else y


# ---------------------------------------------------------------------------
# bicharacteristics and light-like exponential map
# ---------------------------------------------------------------------------

@dataclass
class Bicharacteristic:
    s: np.ndarray            # parameter samples, increasing
    points: np.ndarray       # (m, 2n + 2) phase points
    order: int               # integration order
    drift: float             # max |f| along samples
    exited: bool = False     # path truncated at the domain box

    @property
    def n(self) -> int:
        return (self.points.shape[1] - 2) // 2

    def positions(self) -> np.ndarray:
        return self.points[:, : self.n + 1]


def _drift(metric, pts):
    n = metric.n
    return float(np.max(np.abs(0.5 * lorentz_norm(
        metric, pts[:, 0], pts[:, 1:n + 1], pts[:, n + 1], pts[:, n + 2:]))))


def integrate_bicharacteristic(metric: SpacetimeMetric, p0: PhasePoint, s_range=(0.0, 1.0),
                               step_tol: float = 1e-12, method: str = "dop853",
                               n_steps: Optional[int] = None, tol_h: float = 1e-9,
                               s_eval=None) -> Bicharacteristic:
    """Integrate the null bicharacteristic through ``p0`` over ``s_range``.

    ``method="dop853"`` uses the adaptive 8(5,3) Dormand-Prince pair from
    scipy with terminal events on the domain box; ``method="rk4"`` is the
    classical fixed-step scheme (``n_steps`` per unit of parameter range),
    used for convergence studies.
    """
    y0 = p0.state()
    n = metric.n
    zeta2 = p0.tau**2 + float(np.dot(p0.xi, p0.xi))
    metric.check(p0.t, p0.x)
    f0 = hamiltonian(metric, p0)
    if abs(f0) > tol_h * max(zeta2, 1e-300):
        raise InvalidInputError(f"initial covector is not light-like (f = {f0:.3e})")
    s0, s1 = float(s_range[0]), float(s_range[1])
    if s1 < s0:
        raise InvalidInputError("s_range must be increasing")

    def rhs(s, y):
        return hamilton_rhs(metric, y)

    def leave(s, y):
        lo = y[: n + 1] - metric.box[:, 0]
        hi = metric.box[:, 1] - y[: n + 1]
        return float(min(lo.min(), hi.min()))

    leave.terminal = True

    pieces, exited = [], False
    for end in (s0, s1):
        if end == 0.0:
            pieces.append((np.zeros(1), y0[None, :]))
            continue
        if method == "dop853":
            ev = None if s_eval is None else np.sort(np.asarray(s_eval, float))
            if ev is not None:
                ev = ev[(ev * np.sign(end) >= 0) & (np.abs(ev) <= abs(end))]
                ev = ev if end > 0 else ev[::-1]
            sol = solve_ivp(rhs, (0.0, end), y0, method="DOP853", rtol=step_tol,
                            atol=step_tol * 1e-2, events=leave, t_eval=ev)
            if sol.status == -1:
                raise IntegrationError(sol.message)
            exited |= sol.status == 1
            pieces.append((sol.t, sol.y.T))
        elif method == "rk4":
            m = max(1, int(round((n_steps or 256) * abs(end))))
            _, path = rk4_flow(lambda y: hamilton_rhs(metric, y), y0, end, m, record=True)
            sv = np.linspace(0.0, end, m + 1)
            inside = metric.contains(path[:, 0], path[:, 1:n + 1])
            if not np.all(inside):
                k = int(np.argmin(inside))
                exited = True
                sv, path = sv[:k], path[:k]
            pieces.append((sv, path))
        else:
            raise InvalidInputError(f"unknown method {method!r}")
    (sa, ya), (sb, yb) = pieces
    s = np.concatenate([sa[::-1], sb[1:]])
    pts = np.concatenate([ya[::-1], yb[1:]])
    order = 8 if method == "dop853" else 4
    return Bicharacteristic(s, pts, order, _drift(metric, pts), bool(exited))


def null_covector(metric: SpacetimeMetric, t, y, theta, sign: int = 1):
    """Covector ``(tau, xi) = (sign, h theta)`` of the light vector ``(sign, theta)``.

    ``theta`` is rescaled to unit length with respect to ``h(t, y)``.
    """
    h = metric.h(t, y)
    theta = np.asarray(theta, float)
    norm = np.sqrt(np.einsum("...a,...ab,...b->...", theta, h, theta))
    theta = theta / norm[..., None]
    return float(sign) * np.ones_like(norm), np.einsum("...ab,...b->...a", h, theta), theta


def exp_light(metric: SpacetimeMetric, base, sign: int, theta, sigma: float,
              step_tol: float = 1e-12):
    """``exp^g_{(t', y)}(sigma (sign, theta))`` for unit ``theta``; returns ``(t, x)``."""
    if sign not in (1, -1):
        raise InvalidInputError("sign must be +1 or -1")
    if sigma < 0:
        raise InvalidInputError("sigma must be non-negative")
    t0, y = float(base[0]), np.asarray(base[1], float)
    tau, xi, _ = null_covector(metric, t0, y, theta, sign)
    if sigma == 0:
        return t0, y.copy()
    b = integrate_bicharacteristic(metric, PhasePoint(t0, y, float(tau), xi),
                                   (0.0, sigma), step_tol=step_tol)
    if b.exited:
        raise IntegrationError("light ray left the domain box before sigma")
    end = b.points[-1]
    return float(end[0]), end[1:metric.n + 1].copy()


# ---------------------------------------------------------------------------
# batched shooting with variational equations
# ---------------------------------------------------------------------------

def _variational_rhs(metric, frozen_t, fd_eps=1e-6):
    """RHS on ``(state, D)``: state ``(B, 2n+2)``, ``D`` ``(B, 2n+2, k)``.

    The linearization is applied column by column with complex-step
    differentiation, which is exact to rounding for analytic evaluators; if
    the metric callbacks reject complex input, central differences are used.
    """
    mode = []

    def fd(y, col):
        scale = 1.0 + np.max(np.abs(y), axis=-1)
        cn = np.max(np.abs(col), axis=-1)
        cn = np.where(cn > 0, cn, 1.0)
        e = (fd_eps * scale / cn)[..., None]
        return (hamilton_rhs(metric, y + e * col, frozen_t)
                - hamilton_rhs(metric, y - e * col, frozen_t)) / (2 * e)

    def cs(y, col):
        return hamilton_rhs(metric, y + 1e-30j * col, frozen_t).imag * 1e30

    def jvp(y, col):
        if not mode:
            # complex step only if the callbacks propagate it faithfully
            ref = fd(y, col)
            try:
                with np.errstate(all="ignore"), warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    got = cs(y, col)
                ok = np.allclose(got, ref, rtol=1e-5, atol=1e-7 * (1 + np.abs(ref).max()))
            except (TypeError, ValueError):
                ok = False
            mode.append(cs if ok else fd)
        return mode[0](y, col)

    def rhs(Y):
        y, D = Y
        f = hamilton_rhs(metric, y, frozen_t)
        dD = np.empty_like(D)
        for j in range(D.shape[-1]):
            dD[..., j] = jvp(y, D[..., j])
        return (f, dD)
    return rhs


def _rk4_pair(rhs, Y, length, n_steps):
    h = length / n_steps
    y, D = Y
    for _ in range(n_steps):
        k1 = rhs((y, D))
        k2 = rhs((y + 0.5 * h * k1[0], D + 0.5 * h * k1[1]))
        k3 = rhs((y + 0.5 * h * k2[0], D + 0.5 * h * k2[1]))
        k4 = rhs((y + h * k3[0], D + h * k3[1]))
        y = y + (h / 6) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        D = D + (h / 6) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return y, D


def shoot(metric: SpacetimeMetric, t0, y, w, frozen: bool, n_steps: int = 64,
          with_jacobian: bool = True):
    """Flow the light ray leaving ``(t0, y)`` with spatial vector ``w`` for unit parameter.

    ``w`` has shape ``(B, n)``; the initial covector is
    ``(|w|_h, h w)`` so the endpoint is ``exp((|w|, w))``.  With
    ``frozen=True`` the slice ``h(t0, .)`` is used (static exponential map).
    Returns end positions ``(B, n)`` and, optionally, ``d x_end / d w``
    as ``(B, n, n)``.
    """
    n = metric.n
    w = np.atleast_2d(np.asarray(w, float))
    B = w.shape[0]
    y = np.broadcast_to(np.asarray(y, float), (B, n))
    t0a = np.full(B, float(t0))
    h0 = metric.h(t0a, y)
    xi = np.einsum("bij,bj->bi", h0, w)
    nw = np.sqrt(np.maximum(np.einsum("bi,bi->b", w, xi), 0.0))
    Y = np.concatenate([t0a[:, None], y, nw[:, None], xi], axis=1)
    ft = float(t0) if frozen else None
    if not with_jacobian:
        out = rk4_flow(lambda s: hamilton_rhs(metric, s, ft), Y, 1.0, n_steps)
        return out[:, 1:n + 1]
    D = np.zeros((B, 2 * n + 2, n))
    safe = np.where(nw > 0, nw, 1.0)
    D[:, n + 1, :] = xi / safe[:, None]
    D[:, n + 2:, :] = h0
    yend, Dend = _rk4_pair(_variational_rhs(metric, ft), (Y, D), 1.0, n_steps)
    return yend[:, 1:n + 1], Dend[:, 1:n + 1, :]


def inverse_exp(metric: SpacetimeMetric, t0, y, x, frozen: bool, n_steps: int = 64,
                tol: float = 1e-11, max_iter: int = 40, w0=None):
    """Solve ``exp_(t0, y)(w) = x`` for ``w`` by damped Newton shooting.

    Batched over ``x`` of shape ``(B, n)``.  Returns ``(w, jac, residual)``.
    """
    x = np.atleast_2d(np.asarray(x, float))
    y = np.broadcast_to(np.asarray(y, float), x.shape)
    w = (x - y).copy() if w0 is None else np.array(w0, float)
    scale = 1.0 + np.max(np.abs(x - y), axis=-1)
    res = np.full(x.shape[0], np.inf)
    J = None
    for _ in range(max_iter):
        xe, J = shoot(metric, t0, y, w, frozen, n_steps)
        r = xe - x
        res = np.linalg.norm(r, axis=-1)
        if np.all(res <= tol * scale):
            return w, J, res
        try:
            step = np.linalg.solve(J, r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise SingularJacobianError("degenerate exponential map during shooting")
        # trust region: never move more than the current chord length
        lim = np.maximum(np.linalg.norm(w, axis=-1), 1e-3 * scale)
        sn = np.linalg.norm(step, axis=-1)
        fac = np.where(sn > lim, lim / np.maximum(sn, 1e-300), 1.0)
        w = w - fac[:, None] * step
    bad = int(np.argmax(res / scale))
    raise NoSolutionError(f"shooting failed to converge: worst residual {res[bad]:.3e} "
                          f"at target {x[bad]} from {y[bad]}")


def r_function(metric: SpacetimeMetric, x, t: float, y, n_steps: int = 64,
               tol: float = 1e-11) -> float:
    """``R(x, t, y) = |w|_{h(t)}`` where the light cone from ``(t, y)`` projects to ``x``.

    For static metrics this is the Riemannian distance of the slice.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    metric.check(t, x)
    metric.check(t, y)
    if np.allclose(x, y, rtol=0, atol=0):
        return 0.0
    frozen = metric.kind != GLOBALLY_HYPERBOLIC
    w, _, _ = inverse_exp(metric, t, y, x[None, :], frozen, n_steps, tol)
    h = metric.h(t, y)
    return float(np.sqrt(w[0] @ h @ w[0]))


def kernel_jacobian(metric: SpacetimeMetric, t: float, x, y, n_steps: int = 64) -> float:
    """Polar-coordinate factor: ``sigma^{n-1} dsigma dtheta = J(x, y) dVol_h(x)``.

    Here ``x = exp_y(sigma theta)`` on the slice ``h(t, .)``; equivalently
    ``J = sqrt(det h(y)) / (sqrt(det h(x)) |det d exp_y(w)|)`` with ``J(y, y) = 1``.
    The static slice at time ``t`` is used.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.allclose(x, y, rtol=0, atol=0):
        return 1.0
    w, J, _ = inverse_exp(metric, t, y, x[None, :], True, n_steps)
    det = float(np.linalg.det(J[0]))
    if abs(det) < 1e-10:
        raise SingularJacobianError(f"conjugate pair: det d exp = {det:.3e}")
    hx = np.linalg.det(metric.h(t, x))
    hy = np.linalg.det(metric.h(t, y))
    return float(np.sqrt(hy / hx) / abs(det))


# ---------------------------------------------------------------------------
# conjugate points
# ---------------------------------------------------------------------------

@dataclass
class ConjugateRecord:
    x: np.ndarray
    theta: np.ndarray
    s: float
    kernel_dim: int
    fold: bool
    det_slope: float = 0.0     # d det / ds at s
    kernel_derivative: float = 0.0   # derivative of det along the kernel vector


class _JacobiPath:
    """Geodesic of the slice ``h(t, .)`` with the differential of ``exp`` alongside.

    ``M(s) = d exp_x(s theta)`` in coordinates; ``det M`` detects conjugate
    points.  Integrated by DOP853 with dense output.
    """

    def __init__(self, metric, x, theta, s_max, t=0.0, rtol=1e-12):
        n = metric.n
        self.metric, self.n = metric, n
        tau, xi, theta = null_covector(metric, t, np.asarray(x, float), theta)
        self.theta = theta
        h0 = metric.h(t, np.asarray(x, float))
        y0 = np.concatenate([[t], x, [1.0], xi])
        D0 = np.zeros((2 * n + 2, n))
        D0[n + 2:, :] = h0
        var = _variational_rhs(metric, t)
        m = 2 * n + 2

        def rhs(s, Y):
            y = Y[:m]
            D = Y[m:].reshape(m, n)
            f, dD = var((y[None, :], D[None, :, :]))
            return np.concatenate([f[0], dD[0].ravel()])

        def leave(s, Y):
            p = Y[1:n + 1]
            return float(min((p - metric.box[1:, 0]).min(), (metric.box[1:, 1] - p).min()))

        leave.terminal = True
        sol = solve_ivp(rhs, (0.0, s_max), np.concatenate([y0, D0.ravel()]), method="DOP853",
                        rtol=rtol, atol=rtol * 1e-2, dense_output=True, events=leave)
        if sol.status == -1:
            raise IntegrationError(sol.message)
        self.sol = sol
        self.s_end = float(sol.t[-1])
        self.truncated = sol.status == 1
        self.m = m

    def jac(self, s):
        Y = self.sol.sol(s)
        Dx = Y[self.m:].reshape(self.m, self.n)[1:self.n + 1, :]
        # columns are d x(s) / d w_k for w = s theta scaled by s
        return Dx / s

    def det(self, s):
        return float(np.linalg.det(self.jac(s)))


def _det_along(metric, x, v, t):
    """``det d exp_x(v)`` for a single vector ``v`` (h-norm gives the length)."""
    h = metric.h(t, np.asarray(x, float))
    s = float(np.sqrt(v @ h @ v))
    path = _JacobiPath(metric, x, v / s, s * (1 + 1e-9), t)
    return path.det(s)


def conjugate_scan(metric: SpacetimeMetric, x, theta, s_max: float, t: float = 0.0,
                   s_tol: float = 1e-8, rank_tol: float = 1e-6, fold_tol: float = 1e-4,
                   n_probe: int = 800):
    """Conjugate points along the geodesic of ``h(t, .)`` from ``x`` in direction ``theta``.

    Returns ``(records, truncated)``.  Zeros of ``det d exp_x(s theta)`` are
    bracketed by sign changes on a uniform probe grid and refined with
    Brent's method to ``s_tol``; even-order touches (no sign change) are
    caught by local minima of the smallest singular value.
    """
    x = np.asarray(x, float)
    path = _JacobiPath(metric, x, theta, s_max, t)
    s_hi = path.s_end
    ss = np.linspace(s_hi / n_probe, s_hi, n_probe)
    dets = np.array([path.det(s) for s in ss])
    smin = np.array([np.linalg.svd(path.jac(s), compute_uv=False)[[-1, 0]] for s in ss])
    ratio = smin[:, 0] / smin[:, 1]
    roots = []
    for i in range(len(ss) - 1):
        if dets[i] == 0.0:
            roots.append(ss[i])
        elif dets[i] * dets[i + 1] < 0:
            roots.append(brentq(path.det, ss[i], ss[i + 1], xtol=s_tol * 1e-2, rtol=1e-15))
    for i in range(1, len(ss) - 1):
        if ratio[i] < 1e-2 and ratio[i] <= ratio[i - 1] and ratio[i] <= ratio[i + 1]:
            if any(abs(r - ss[i]) < 2 * (ss[1] - ss[0]) for r in roots):
                continue
            from scipy.optimize import minimize_scalar

            def sv(s):
                q = np.linalg.svd(path.jac(s), compute_uv=False)
                return q[-1] / q[0]
            r = minimize_scalar(sv, bracket=(ss[i - 1], ss[i], ss[i + 1]),
                                method="brent", tol=1e-12)
            if r.fun < 1e-5:
                roots.append(float(r.x))
    roots.sort()
    h = metric.h(t, x)
    records = []
    for s in roots:
        M = path.jac(s)
        U, sig, Vt = np.linalg.svd(M)
        kdim = int(np.sum(sig < rank_tol * sig[0]))
        ds = 1e-5 * max(s, 1.0)
        slope = (path.det(s + ds) - path.det(s - ds)) / (2 * ds) if s + ds < s_hi else 0.0
        kder = 0.0
        fold = False
        if kdim == 1:
            k = Vt[-1]
            k = k / np.sqrt(k @ h @ k)
            v = s * path.theta
            e = 1e-4 * s
            kder = (_det_along(metric, x, v + e * k, t) - _det_along(metric, x, v - e * k, t)) / (2 * e)
            fold = abs(kder) > fold_tol * max(abs(slope), 1e-300)
        records.append(ConjugateRecord(x.copy(), path.theta.copy(), float(s), kdim, bool(fold),
                                       float(slope), float(kder)))
    return records, bool(path.truncated)

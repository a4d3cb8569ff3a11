"""Cone-restricted identity, parametrix multiplier and recovery from ray data.

With ``q = c_norm (|xi|^2 - tau^2)^{(3-n)/2} |xi|^{n-2}`` on the space-like
cone and ``c_norm = 1 / C_n``, the product ``q k`` equals the indicator of
the space-like cone, so ``Q N = H`` and ``Q L^t L = H`` at the symbol level.
Only ``n = 2, 3`` are supported.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInputError, UnsupportedOrderError
from .fields import GridField
from .normal_operator import MultiplierSymbol, apply_multiplier, cone_power, normal_constant
from .ray_transform import RayData, RayFamily, adjoint
from .spacetime_geometry import MINKOWSKI, SpacetimeMetric


@dataclass
class ParametrixConfig:
    """``eps_cone``, ``rho`` as for the normal symbol; ``None`` means grid defaults.

    The parametrix uses a cone guard band twice as wide as the normal symbol.
    """

    n: int
    eps_cone: Optional[float] = None
    rho: Optional[float] = None
    c_norm: Optional[float] = None

    def __post_init__(self):
        if self.n not in (2, 3):
            raise UnsupportedOrderError("parametrix supports n=2,3")
        if self.c_norm is None:
            self.c_norm = 1.0 / normal_constant(self.n)
        if not self.c_norm > 0:
            raise InvalidInputError("c_norm must be positive")

    def q_symbol(self) -> MultiplierSymbol:
        return MultiplierSymbol(self.n, "q", self.eps_cone, self.rho, self.c_norm, eps_scale=2.0)

    def h_symbol(self) -> MultiplierSymbol:
        return MultiplierSymbol(self.n, "h", self.eps_cone, 0.0)


def q_symbol_value(cfg: ParametrixConfig, tau, xi):
    """Pointwise parametrix symbol (no cone averaging, no cutoff)."""
    xi = np.asarray(xi, float)
    r = np.sqrt(np.sum(xi * xi, axis=-1))
    n = cfg.n
    prof = cone_power(tau, r, (3 - n) / 2, 0.0)
    return np.where(r > 0, cfg.c_norm * prof * np.where(r > 0, r, 1.0) ** (n - 2), 0.0)


def chi_spacelike(tau, xi):
    xi = np.asarray(xi, float)
    r2 = np.sum(xi * xi, axis=-1)
    return (r2 > np.asarray(tau, float) ** 2).astype(float)


def apply_H(f: GridField, cfg: ParametrixConfig, padding=None) -> GridField:
    """Fourier multiplier by the space-like indicator, averaged across the cone."""
    if f.n != cfg.n:
        raise InvalidInputError("field and configuration dimensions differ")
    return apply_multiplier(f, cfg.h_symbol(), padding)


def apply_Q(f: GridField, cfg: ParametrixConfig, padding=None) -> GridField:
    """Parametrix multiplier restricted to the space-like cone."""
    if f.n != cfg.n:
        raise InvalidInputError("field and configuration dimensions differ")
    return apply_multiplier(f, cfg.q_symbol(), padding)


def recover(metric: SpacetimeMetric, u: RayData, rays: RayFamily, cfg: ParametrixConfig,
            out_grid: GridField, mode: str = "discrete") -> GridField:
    """``Q L^t u`` on ``out_grid``; approximates ``H f`` when ``u = L f``."""
    if metric.kind != MINKOWSKI:
        raise InvalidInputError("recovery is implemented on Minkowski space")
    if cfg.n != metric.n:
        raise UnsupportedOrderError("parametrix supports n=2,3")
    if u.family is not rays:
        raise InvalidInputError("ray data do not belong to the given family")
    back = adjoint(metric, u, out_grid, mode)
    return apply_Q(back, cfg)

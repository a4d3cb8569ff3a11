import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lightray.errors import InvalidInputError, UnsupportedOrderError
from lightray.microlocal_probe import band_limited_field, centered_grid, wave_packet
from lightray.normal_operator import (MultiplierSymbol, apply_multiplier, default_padding,
                                      multiplier_k)
from lightray.parametrix import (ParametrixConfig, apply_H, apply_Q, chi_spacelike,
                                 q_symbol_value, recover)
from lightray.ray_transform import family_for_grid, forward
from lightray.spacetime_geometry import minkowski, static_bump


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def crop(a, c):
    return a[tuple(slice(c, s - c) for s in a.shape)]


def test_config_validation():
    with pytest.raises(UnsupportedOrderError, match="parametrix supports n=2,3"):
        ParametrixConfig(4)
    with pytest.raises(InvalidInputError):
        ParametrixConfig(2, c_norm=-1.0)
    assert np.isclose(ParametrixConfig(3).c_norm, 1 / (4 * np.pi ** 2))


def test_symbol_product_examples():
    c3 = ParametrixConfig(3)
    xi3 = np.array([1.0, 0.0, 0.0])
    assert np.isclose(q_symbol_value(c3, 0.0, xi3) * multiplier_k(3, 0.0, xi3), 1.0, rtol=1e-14)
    c2 = ParametrixConfig(2)
    xi2 = np.array([2.0, 0.0])
    q = q_symbol_value(c2, 0.0, xi2)
    assert np.isclose(q, 2 / (4 * np.pi), rtol=1e-14)
    assert np.isclose(q * multiplier_k(2, 0.0, xi2), 1.0, rtol=1e-14)
    assert q_symbol_value(c2, 3.0, xi2) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([2, 3]), st.floats(-5, 5),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_symbol_identity_pointwise(n, tau, xi):
    xi = np.array(xi[:n])
    r = np.linalg.norm(xi)
    if r < 1e-6 or abs(r - abs(tau)) < 1e-6:
        return
    cfg = ParametrixConfig(n)
    prod = q_symbol_value(cfg, tau, xi) * multiplier_k(n, tau, xi)
    assert abs(prod - chi_spacelike(tau, xi)) <= 1e-12


def test_H_passes_spacelike_and_kills_timelike():
    cfg = ParametrixConfig(2)
    g = centered_grid(2, 64)
    sp = wave_packet(g, np.zeros(3), np.array([0.4, 1.2, 0.0]), 6.0)
    tm = wave_packet(g, np.zeros(3), np.array([1.6, 0.5, 0.0]), 6.0)
    assert rel(apply_H(sp, cfg).values, sp.values) <= 1e-3
    assert apply_H(tm, cfg).norm() <= 1e-3 * tm.norm()


def _cone_band_fraction(f):
    """Spectral energy of the padded field within half a time cell of the cone."""
    shape = [d + p for d, p in zip(f.dims, default_padding(f))]
    F = np.fft.fftn(f.values, s=shape, axes=tuple(range(len(shape))))
    fr = [2 * np.pi * np.fft.fftfreq(s, h) for s, h in zip(shape, f.spacing)]
    g = np.meshgrid(*fr, indexing="ij", sparse=True)
    r = np.sqrt(sum(a * a for a in g[1:]))
    band = np.abs(np.abs(g[0]) - r) < np.pi / (shape[0] * f.spacing[0])
    return float(np.sum(np.abs(F[band]) ** 2) / np.sum(np.abs(F) ** 2))


@pytest.mark.parametrize("N", [32, 48])
def test_H_idempotent(N):
    # the averaged indicator h lies strictly between 0 and 1 only in the cone
    # band, where |h^2 - h| <= 1/4
    cfg = ParametrixConfig(2)
    f = band_limited_field(2, N, band=(0.4, 0.8), cone=1.5, seed=2)
    H1 = apply_H(f, cfg)
    H2 = apply_H(H1, cfg)
    frac = _cone_band_fraction(f)
    err = np.linalg.norm(H2.values - H1.values) / f.norm()
    assert err <= 0.25 * np.sqrt(frac)
    assert err <= 2 * frac


def test_Q_order_plus_one():
    cfg = ParametrixConfig(2)
    g = centered_grid(2, 96)
    bands = np.array([0.2, 0.4, 0.8, 1.6])
    d = np.array([0.3, 1.0, 0.0]) / np.hypot(0.3, 1.0)
    ev = []
    for lam in bands:
        f = wave_packet(g, np.zeros(3), lam * d, 12.0)
        ev.append(np.vdot(f.values, apply_Q(f, cfg).values).real / np.vdot(f.values, f.values).real)
    slope = np.polyfit(np.log(bands), np.log(ev), 1)[0]
    assert abs(slope - 1) <= 0.1


def test_QN_is_H_on_spacelike_field():
    cfg = ParametrixConfig(2)
    f = band_limited_field(2, 64, band=(0.35, 0.7), seed=1)
    Nf = apply_multiplier(f, MultiplierSymbol(2))
    assert rel(crop(apply_Q(Nf, cfg).values, 8), crop(apply_H(f, cfg).values, 8)) <= 0.02


def test_recover_pipeline():
    m = minkowski(2)
    cfg = ParametrixConfig(2)
    f = band_limited_field(2, 48, band=(0.35, 0.7), seed=3)
    rays = family_for_grid(m, f, 192, interp="cubic")
    u = forward(m, f, rays, flag_truncation=False)
    rec = recover(m, u, rays, cfg, f)
    assert rel(crop(rec.values, 6), crop(apply_H(f, cfg).values, 6)) <= 0.05
    zero = recover(m, forward(m, f.like(np.zeros(f.dims)), rays), rays, cfg, f)
    assert np.all(zero.values == 0)


def test_recover_timelike_packet_is_small():
    m = minkowski(2)
    cfg = ParametrixConfig(2)
    g = centered_grid(2, 48)
    f = wave_packet(g, np.zeros(3), np.array([1.6, 0.4, 0.0]), 5.0)
    rays = family_for_grid(m, g, 192, interp="cubic")
    rec = recover(m, forward(m, f, rays, flag_truncation=False), rays, cfg, g)
    assert rec.norm() <= 1e-2 * f.norm()


def test_recover_rejects_curved_and_foreign_rays():
    cfg = ParametrixConfig(2)
    g = centered_grid(2, 9)
    m = minkowski(2)
    rays = family_for_grid(m, g, 8)
    other = family_for_grid(m, g, 8)
    u = forward(m, g, rays)
    with pytest.raises(InvalidInputError):
        recover(m, u, other, cfg, g)
    s = static_bump(2)
    with pytest.raises(InvalidInputError):
        recover(s, u, rays, cfg, g)


def test_recover_translation_equivariant():
    # back-projection reaches |t| beyond the support, so the grid is wide enough
    # that L^t L f stays inside it; only the rows rolled in from outside differ
    m = minkowski(2)
    cfg = ParametrixConfig(2)
    g = centered_grid(2, (12, 44, 44))
    X = g.mesh()
    p = wave_packet(g, np.zeros(3), np.array([0.3, 1.2, 0.4]), 1.5).values
    f = g.like(p * (X[1] ** 2 + X[2] ** 2 < 36))
    sh = f.like(np.roll(f.values, 2, axis=1))
    rays = family_for_grid(m, f, 48)
    a = recover(m, forward(m, f, rays), rays, cfg, f).values
    b = recover(m, forward(m, sh, rays), rays, cfg, f).values
    assert rel(np.roll(a, 2, axis=1)[:, 2:], b[:, 2:]) <= 1e-12

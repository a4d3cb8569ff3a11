import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

import oracles
from lightray.errors import InvalidInputError, PaddingError
from lightray.microlocal_probe import band_limited_field, centered_grid, wave_packet
from lightray.normal_operator import (MultiplierSymbol, SpectralField, a_profile, apply_multiplier,
                                      cone_power, cross_validate, default_padding,
                                      kernel_apply_static, measured_kernel_constant, multiplier_k,
                                      normal_constant, time_window_cells)
from lightray.spacetime_geometry import minkowski, static_bump


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# ---------------------------------------------------------------------------
# symbol
# ---------------------------------------------------------------------------

def test_constants():
    assert np.isclose(normal_constant(2), oracles.C_N[2])
    assert np.isclose(normal_constant(3), oracles.C_N[3])


def test_multiplier_examples():
    assert np.isclose(multiplier_k(3, 0.0, [1.0, 0.0, 0.0]), 4 * np.pi ** 2)
    assert np.isclose(multiplier_k(2, 0.0, [2.0, 0.0]), 2 * np.pi)
    assert multiplier_k(3, 2.0, [1.0, 0.0, 0.0]) == 0.0
    with pytest.raises(InvalidInputError):
        multiplier_k(2, 0.0, [0.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5), st.floats(-3, 3), st.lists(st.floats(-3, 3), min_size=5, max_size=5),
       st.floats(0.01, 100))
def test_homogeneity_and_support(n, tau, xi, lam):
    xi = np.array(xi[:n])
    r = np.linalg.norm(xi)
    if abs(r - abs(tau)) < 1e-3 or r < 1e-3:
        return
    k = multiplier_k(n, tau, xi)
    if n in oracles.C_N:
        assert np.isclose(k, oracles.k_symbol(n, tau, xi), rtol=1e-12)
    assert np.isclose(multiplier_k(n, lam * tau, lam * xi), k / lam, rtol=1e-10)
    if tau * tau >= r * r:
        assert k == 0.0


def test_cone_average_keeps_mass():
    r, p, eps = 1.0, -0.5, 0.05
    for tau in (0.97, 1.0, 1.03):
        ref = integrate.quad(lambda u: max(r * r - u * u, 0.0) ** p if abs(u) < r else 0.0,
                             tau - eps, tau + eps, points=[r], limit=200)[0] / (2 * eps)
        assert np.isclose(cone_power(tau, r, p, eps), ref, rtol=1e-8)


# ---------------------------------------------------------------------------
# FFT application
# ---------------------------------------------------------------------------

def test_spectral_round_trip():
    f = band_limited_field(2, 16, seed=3)
    sf = SpectralField.from_field(f, default_padding(f))
    back = sf.to_values()[tuple(slice(0, d) for d in f.dims)]
    assert rel(back, f.values) <= 1e-12


def test_identity_symbol():
    f = band_limited_field(2, 16, seed=1)
    g = apply_multiplier(f, MultiplierSymbol(2, "one", 0.0, 0.0))
    assert rel(g.values, f.values) <= 1e-12


def test_padding_error():
    f = band_limited_field(2, 12, seed=1)
    need = time_window_cells(f)
    with pytest.raises(PaddingError):
        apply_multiplier(f, MultiplierSymbol(2), padding=tuple(need - 1))
    apply_multiplier(f, MultiplierSymbol(2), padding=tuple(need))


def test_spacelike_packet_eigenvalue_n3():
    # in n = 3 the symbol depends on |xi| only, so the envelope is long along
    # xi; the residual is first order, about 1 / (sigma_1 |xi|)
    g = centered_grid(3, (28, 170, 32, 32))
    X = g.mesh()
    zeta = np.array([0.6, 2.5, 0.0, 0.0])
    sig = np.array([4.0, 24.0, 5.0, 5.0])
    env = np.exp(-sum((x / s) ** 2 for x, s in zip(X, sig)) / 2)
    f = g.like(np.cos(sum(z * x for z, x in zip(zeta, X))) * env)
    Nf = apply_multiplier(f, MultiplierSymbol(3), padding=tuple(time_window_cells(f)))
    k = oracles.k_symbol(3, zeta[0], zeta[1:])
    assert rel(Nf.values, k * f.values) <= 0.02


def test_timelike_packet_suppressed():
    g = centered_grid(2, 64)
    f = wave_packet(g, np.zeros(3), np.array([2.0, 0.6, 0.0]), 6.0)
    Nf = apply_multiplier(f, MultiplierSymbol(2))
    assert Nf.norm() <= 1e-3 * f.norm()


def test_multiplier_linear_and_translation_equivariant():
    a = band_limited_field(2, 24, seed=1)
    b = band_limited_field(2, 24, seed=2)
    m = MultiplierSymbol(2)
    lhs = apply_multiplier(a.like(a.values - 2 * b.values), m).values
    rhs = apply_multiplier(a, m).values - 2 * apply_multiplier(b, m).values
    assert rel(lhs, rhs) <= 1e-12
    c = band_limited_field(2, 24, seed=4, window=0.4)
    sh = c.like(np.roll(c.values, (1, 2, -1), axis=(0, 1, 2)))
    A = apply_multiplier(c, m).values
    B = apply_multiplier(sh, m).values
    assert rel(np.roll(A, (1, 2, -1), axis=(0, 1, 2))[3:-3, 3:-3, 3:-3], B[3:-3, 3:-3, 3:-3]) <= 1e-10


# ---------------------------------------------------------------------------
# temporal profile
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("sr", [np.pi / 2, 0.3, 5.0, 20.0])
def test_profile_modes_agree_n3(sr):
    assert abs(a_profile(3, sr, 1.0) - a_profile(3, sr, 1.0, "closed_n3")) <= 1e-10 * 4 * np.pi ** 2


def test_profile_limits():
    assert a_profile(3, 0.0, 2.0, "closed_n3") == 2 * oracles.C_N[3]
    assert np.isclose(a_profile(2, 0.0, 1.0), oracles.C_N[2] * oracles.BETA_HALF_HALF, rtol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4])
@pytest.mark.parametrize("sigma,r", [(0.7, 1.0), (3.0, 0.5), (10.0, 1.3)])
def test_profile_fourier_slice(n, sigma, r):
    ref = oracles.a_profile_adaptive(n, sigma, r)
    assert abs(a_profile(n, sigma, r) - ref) <= 1e-8 * max(1.0, abs(ref))


# ---------------------------------------------------------------------------
# kernel quadrature
# ---------------------------------------------------------------------------

def test_kernel_zero():
    g = centered_grid(2, 12)
    assert np.all(kernel_apply_static(minkowski(2), g).values == 0)


def test_kernel_matches_multiplier_small_grid():
    f = band_limited_field(2, 48, band=(0.35, 0.7), seed=1)
    K = kernel_apply_static(minkowski(2), f).values
    M = apply_multiplier(f, MultiplierSymbol(2)).values
    c = 6
    s = (slice(c, -c),) * 3
    assert rel(K[s], M[s]) <= 0.05


def test_kernel_off_cone_contribution_small():
    # bump resolved in time (Nyquist content e^-28) and narrow in space; the
    # point above it at time distance 6 sees only the mollifier tail
    g = centered_grid(2, 57, 0.25)
    X = g.mesh()
    bump = np.exp(-(X[0] + 3) ** 2 / (2 * 0.6 ** 2) - (X[1] ** 2 + X[2] ** 2) / (2 * 0.3 ** 2))
    Nf = kernel_apply_static(minkowski(2), g.like(bump)).values
    j = int(np.argmin(np.abs(g.times - 3.0)))
    ax = g.axis(1)
    on = Nf[j, int(np.argmin(np.abs(ax - 6.0))), 28]
    off = Nf[j, 28, 28]
    assert abs(off) <= 1e-10 * abs(on)


def test_kernel_commutes_with_time_translation_curved():
    m = static_bump(2, 0.3, 0.8)
    f = band_limited_field(2, (14, 9, 9), band=(1.8, 4.0), seed=2, window=0.7, spacing=0.35)
    v = f.values.copy()
    sh = np.zeros_like(v)
    sh[2:] = v[:-2]
    cache = {}
    A = kernel_apply_static(m, f, pair_cache=cache).values
    B = kernel_apply_static(m, f.like(sh), pair_cache=cache).values
    assert np.allclose(B[4:-2], A[2:-4], atol=1e-12 * np.abs(A).max())


def test_measured_kernel_constant_is_one():
    assert abs(measured_kernel_constant(3, 20) - 1) < 0.05
    assert abs(measured_kernel_constant(2, 32) - 1) < 0.05


# ---------------------------------------------------------------------------
# cross validation
# ---------------------------------------------------------------------------

def test_band_limited_field_rejects_empty_shell():
    with pytest.raises(InvalidInputError):
        band_limited_field(2, (14, 9, 9), band=(0.6, 1.2), spacing=0.35)


def test_cross_validate_rejects_single_realization():
    f = band_limited_field(2, 12)
    with pytest.raises(InvalidInputError):
        cross_validate(minkowski(2), f, ["multiplier"])
    with pytest.raises(InvalidInputError):
        cross_validate(static_bump(2), f, ["multiplier", "kernel"])


def test_cross_validate_static_bump():
    m = static_bump(2, 0.2, 1.5)
    f = band_limited_field(2, (21, 15, 15), band=(1.3, 2.6), seed=3, spacing=0.3)
    from lightray.ray_transform import family_for_grid
    rays = family_for_grid(m, f, 64, interp="cubic")
    rep = cross_validate(m, f, ["kernel", "compose"], rays=rays)
    assert rep.max_discrepancy() <= 0.07

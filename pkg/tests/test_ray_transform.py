import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from lightray.errors import InvalidInputError, ShapeError
from lightray.fields import GridField
from lightray.microlocal_probe import centered_grid
from lightray.ray_transform import (RayData, adjoint, build_ray_family, family_for_grid, forward,
                                    normal_compose, sphere_rule)
from lightray.spacetime_geometry import gh_bump, minkowski, static_bump


def gaussian_field(n, h, half=4.0):
    N = int(round(2 * half / h)) + 1
    g = centered_grid(n, N, h)
    X = g.mesh()
    return g.like(np.exp(-sum(a * a for a in X)))


def single_ray(metric, z, k, m, s_range, **kw):
    return build_ray_family(metric, (z, 1.0, 1), m, s_range, **kw)


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------

def test_uniform_circle_rule():
    om, w = sphere_rule(2, 8)
    k = np.arange(8)
    assert np.allclose(om, np.column_stack([np.cos(2 * np.pi * k / 8), np.sin(2 * np.pi * k / 8)]))
    assert np.allclose(w, 2 * np.pi / 8)


@pytest.mark.parametrize("rule,count", [("fibonacci", 300), ("gauss", 200)])
def test_sphere_rules_integrate_polynomials(rule, count):
    om, w = sphere_rule(3, count, rule)
    assert np.allclose(np.linalg.norm(om, axis=1), 1)
    assert np.isclose(w.sum(), 4 * np.pi)
    assert abs(np.sum(w * om[:, 2] ** 2) - 4 * np.pi / 3) < (1e-12 if rule == "gauss" else 2e-2)


def test_direction_count_validated():
    with pytest.raises(InvalidInputError):
        build_ray_family(minkowski(2), (0.0, 1.0, 4), 1, (0, 1))


def test_degenerate_family_flagged():
    with pytest.warns(RuntimeWarning):
        fam = build_ray_family(minkowski(2), (0.0, 1.0, 4), 4, (0.0, 0.0))
    assert fam.degenerate
    f = centered_grid(2, 5)
    u = forward(minkowski(2), f, fam)
    assert np.all(u.values == 0) and np.all(u.truncated)


def test_static_directions_are_unit():
    m = static_bump(2, 0.4, 0.8)
    fam = build_ray_family(m, (-1.0, 0.25, 9), 12, (-1, 1))
    h0 = m.h(np.zeros(81), fam.z_points())
    for k in range(fam.m):
        th = fam.theta(k)
        assert np.allclose(np.einsum("za,zab,zb->z", th, h0, th), 1, atol=1e-12)


@pytest.mark.parametrize("n", [2, 3])
def test_liouville_weights_conformal(n):
    # h = c I: dVol_h = c^{n/2} dz and the h-angle equals the Euclidean angle
    m = static_bump(n, 0.4, 0.8)
    fam = build_ray_family(m, (-1.0, 0.5, 5), 10, (-1, 1))
    fm = build_ray_family(minkowski(n), (-1.0, 0.5, 5), 10, (-1, 1))
    z = fam.z_points()
    c = m.h(np.zeros(len(z)), z)[:, 0, 0].reshape(fam.z_dims)
    for k in range(fam.m):
        assert np.allclose(fam.weights(k), fm.weights(k) * c ** (n / 2), rtol=1e-12)


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def test_gaussian_line_integral():
    f = gaussian_field(2, 0.1)
    fam = single_ray(minkowski(2), np.zeros(2), 0, 8, (-4, 4))
    u = forward(minkowski(2), f, fam)
    assert abs(u.values[0, 0, 0] - oracles.GAUSSIAN_LINE_INTEGRAL) < 1e-6


def _offgrid_error(h):
    f = gaussian_field(2, h)
    z = np.array([0.13, 0.37])
    fam = single_ray(minkowski(2), z, 1, 8, (-4, 4), ds=h)
    th = fam.omega[1]
    exact = oracles.GAUSSIAN_LINE_INTEGRAL * np.exp(-z @ z + (z @ th) ** 2 / 2)
    return abs(forward(minkowski(2), f, fam).values[1, 0, 0] - exact)


def test_forward_converges_at_interpolation_order():
    assert _offgrid_error(0.2) / _offgrid_error(0.1) >= 3.5


def test_zero_and_disjoint_support():
    g = centered_grid(2, 21, 0.2)
    fam = family_for_grid(minkowski(2), g, 16)
    assert np.all(forward(minkowski(2), g, fam).values == 0)
    X = g.mesh()
    bump = np.exp(-((X[0]) ** 2 + (X[1] - 1.2) ** 2 + (X[2] - 1.2) ** 2) / 0.02)
    fam1 = single_ray(minkowski(2), np.array([-1.0, -1.0]), 0, 8, (-2, 2))
    # the ray through (-1, -1) along e_1 stays far from the bump
    assert abs(forward(minkowski(2), g.like(bump), fam1).values[0, 0, 0]) < 1e-12


def test_truncation_flag():
    g = centered_grid(2, 11, 0.2)
    v = np.zeros(g.dims)
    v[5, 0, 5] = 1.0      # nonzero boundary cell
    fam = family_for_grid(minkowski(2), g, 8)
    u = forward(minkowski(2), g.like(v), fam)
    assert np.any(u.truncated)
    w = np.zeros(g.dims)
    w[5, 5, 5] = 1.0
    assert not np.any(forward(minkowski(2), g.like(w), fam).truncated)


def test_linearity_and_translation_equivariance():
    rng = np.random.default_rng(2)
    g = centered_grid(2, 17)
    m = minkowski(2)
    fam = family_for_grid(m, g, 12)
    a = rng.standard_normal(g.dims)
    a[:, :3] = a[:, -3:] = 0
    a[:, :, :3] = a[:, :, -3:] = 0
    b = rng.standard_normal(g.dims) * (a != 0)
    La, Lb = forward(m, g.like(a), fam).values, forward(m, g.like(b), fam).values
    assert np.allclose(forward(m, g.like(2 * a - 3 * b), fam).values, 2 * La - 3 * Lb, atol=1e-12)
    shifted = np.roll(a, 2, axis=1)
    Ls = forward(m, g.like(shifted), fam).values
    assert np.allclose(Ls[:, 2:], La[:, :-2], atol=1e-12)


# ---------------------------------------------------------------------------
# adjoint
# ---------------------------------------------------------------------------

def _pair(metric, n, N, m, interp, seed):
    rng = np.random.default_rng(seed)
    g = centered_grid(n, N, 0.25)
    fam = family_for_grid(metric, g, m, interp=interp)
    f = g.like(rng.standard_normal(g.dims))
    u = RayData(fam, rng.standard_normal(fam.shape))
    Lf = forward(metric, f, fam, flag_truncation=False)
    Ltu = adjoint(metric, u, g)
    return abs(Lf.inner(u) - f.inner(Ltu, metric)) / (Lf.norm() * u.norm())


@pytest.mark.parametrize("metric", [minkowski(2), static_bump(2, 0.3), gh_bump(2, 0.3)],
                         ids=["minkowski", "static", "gh"])
@pytest.mark.parametrize("interp", ["linear", "cubic"])
def test_discrete_adjoint_identity(metric, interp):
    assert _pair(metric, 2, 9, 12, interp, 0) <= 1e-12


def test_discrete_adjoint_identity_n3():
    assert _pair(minkowski(3), 3, 8, 20, "linear", 1) <= 1e-12
    assert _pair(static_bump(3, 0.2), 3, 6, 12, "linear", 2) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(5, 11), st.integers(3, 20))
def test_adjoint_identity_property(seed, N, m):
    assert _pair(minkowski(2), 2, N, m, "linear", seed) <= 1e-12


def test_analytic_adjoint_of_constant():
    g = centered_grid(2, 9, 0.25)
    fam = family_for_grid(minkowski(2), g, 16)
    u = RayData(fam, np.full(fam.shape, 3.0))
    back = adjoint(minkowski(2), u, g, "analytic").values
    assert np.allclose(back, 2 * np.pi * 3.0, rtol=1e-12)
    zero = adjoint(minkowski(2), RayData(fam, np.zeros(fam.shape)), g, "analytic")
    assert np.all(zero.values == 0)


def test_analytic_adjoint_static_constant():
    m = static_bump(2, 0.3)
    g = centered_grid(2, 7, 0.25)
    fam = family_for_grid(m, g, 16)
    back = adjoint(m, RayData(fam, np.ones(fam.shape)), g, "analytic").values
    # the h-unit circle has h-length 2 pi at every point, whatever h is
    assert np.allclose(back[3], 2 * np.pi, rtol=1e-10)


def test_analytic_adjoint_gh_raises():
    m = gh_bump(2)
    g = centered_grid(2, 5, 0.25)
    fam = family_for_grid(m, g, 8)
    with pytest.raises(InvalidInputError):
        adjoint(m, RayData(fam, np.ones(fam.shape)), g, "analytic")


def test_shape_mismatch():
    g = centered_grid(2, 5)
    fam = family_for_grid(minkowski(2), g, 8)
    with pytest.raises(ShapeError):
        RayData(fam, np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        adjoint(minkowski(2), RayData(fam, np.zeros(fam.shape)), centered_grid(3, 5))


# ---------------------------------------------------------------------------
# normal operator by composition
# ---------------------------------------------------------------------------

def test_compose_is_symmetric_psd():
    rng = np.random.default_rng(4)
    for metric in (minkowski(2), static_bump(2, 0.3)):
        g = centered_grid(2, 9, 0.25)
        fam = family_for_grid(metric, g, 12)
        f = g.like(rng.standard_normal(g.dims))
        h = g.like(rng.standard_normal(g.dims))
        Nf, Nh = normal_compose(metric, f, fam), normal_compose(metric, h, fam)
        assert np.real(Nf.inner(f, metric)) >= 0
        a, b = Nf.inner(h, metric), f.inner(Nh, metric)
        assert abs(a - b) <= 1e-12 * Nf.norm(metric) * h.norm(metric) * 10
        Lf = forward(metric, f, fam, flag_truncation=False)
        assert np.isclose(np.real(Nf.inner(f, metric)), Lf.norm() ** 2, rtol=1e-12)


def test_compose_equals_adjoint_of_forward():
    rng = np.random.default_rng(5)
    m = minkowski(3)
    g = centered_grid(3, 7, 0.3)
    fam = family_for_grid(m, g, 20, interp="cubic")
    f = g.like(rng.standard_normal(g.dims))
    ref = adjoint(m, forward(m, f, fam, flag_truncation=False), g).values
    assert np.allclose(normal_compose(m, f, fam).values, ref, rtol=1e-12, atol=1e-12)
    assert np.all(normal_compose(m, g.like(np.zeros(g.dims)), fam).values == 0)


def test_fast_path_matches_general_path():
    rng = np.random.default_rng(6)
    m = minkowski(2)
    g = centered_grid(2, 9, 0.25)
    fam = family_for_grid(m, g, 10, interp="cubic")
    f = g.like(rng.standard_normal(g.dims))
    fast = forward(m, f, fam, flag_truncation=False).values
    # a node-sampled grid-aligned family goes the stencil route; an explicit ds
    # equal to the time step samples the same nodes through the sparse matrices
    gen = build_ray_family(m, (fam.z_origin, fam.z_spacing, fam.z_dims), 10, fam.s_range,
                           ds=g.spacing[0], interp="cubic")
    slow = forward(m, f, gen, flag_truncation=False).values
    assert np.allclose(fast, slow, atol=1e-12)

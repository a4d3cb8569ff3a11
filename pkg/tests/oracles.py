"""Independent reference computations for the test suite.

Nothing here imports the package; each oracle is a closed form or a
separate numerical method, and frozen numbers are recorded with their
derivation.
"""

import numpy as np
from scipy import integrate, special

# int_R exp(-2 s^2) ds
GAUSSIAN_LINE_INTEGRAL = np.sqrt(np.pi / 2)          # 1.2533141373155001

# |S^{n-2}| and C_n = 2 pi |S^{n-2}|
SPHERE_AREA = {0: 2.0, 1: 2 * np.pi, 2: 4 * np.pi}
C_N = {2: 4 * np.pi, 3: 4 * np.pi ** 2}


def c_n(n):
    """2 pi |S^{n-2}| for any n >= 2."""
    m = n - 2
    return 2 * np.pi * 2 * np.pi ** ((m + 1) / 2) / special.gamma((m + 1) / 2)


# Beta(1/2, 1/2)
BETA_HALF_HALF = np.pi

# int_{-1}^{1} |u|^{-1/2} du
ABS_SQRT_INTEGRAL = 4.0


def k_symbol(n, tau, xi):
    """C_n (|xi|^2 - tau^2)_+^{(n-3)/2} / |xi|^{n-2}, scalar arguments."""
    r2 = float(np.dot(xi, xi))
    d = r2 - tau * tau
    if d <= 0:
        return 0.0
    return C_N[n] * d ** ((n - 3) / 2) / r2 ** ((n - 2) / 2)


def a_profile_adaptive(n, sigma, r):
    """int_{-2r}^{0} e^{i sigma s} k(s + r, r) ds by adaptive quadrature.

    With ``s = -2 r u`` the profile is
    ``2^{n-2} C_n int_0^1 e^{-2 i sigma r u} (u (1 - u))^{(n-3)/2} du``;
    scipy's algebraic-weight rule handles the endpoint powers.
    """
    p = (n - 3) / 2
    c = 2.0 ** (n - 2) * c_n(n)
    re = integrate.quad(lambda u: np.cos(2 * sigma * r * u), 0, 1, weight="alg", wvar=(p, p),
                        epsabs=1e-14, epsrel=1e-13, limit=400)[0]
    im = integrate.quad(lambda u: -np.sin(2 * sigma * r * u), 0, 1, weight="alg", wvar=(p, p),
                        epsabs=1e-14, epsrel=1e-13, limit=400)[0]
    return c * (re + 1j * im)


def gaussian_hilbert(x):
    """PV int e^{-s^2} / (x - s) ds = 2 sqrt(pi) D(x), D the Dawson function."""
    return 2 * np.sqrt(np.pi) * special.dawsn(x)


def a_profile_closed_n3(sigma, r):
    return C_N[3] * (1 - np.exp(-2j * sigma * r)) / (1j * sigma * r)


# ---------------------------------------------------------------------------
# round sphere in the stereographic chart h = 4 / (1 + |x|^2)^2 I
# ---------------------------------------------------------------------------

def stereo_to_sphere(x):
    x = np.asarray(x, float)
    r2 = x @ x
    return np.concatenate([2 * x, [r2 - 1]]) / (1 + r2)


def sphere_to_stereo(P):
    return P[:2] / (1 - P[2])


def stereo_differential(x):
    x = np.asarray(x, float)
    r2 = x @ x
    D = np.zeros((3, 2))
    D[:2] = 2 * np.eye(2) / (1 + r2) - 4 * np.outer(x, x) / (1 + r2) ** 2
    D[2] = 4 * x / (1 + r2) ** 2
    return D


def great_circle_exp(x, theta, sigma):
    """exp_x(sigma theta) on the round sphere; theta unit for the chart metric."""
    P = stereo_to_sphere(x)
    V = stereo_differential(x) @ np.asarray(theta, float)
    V = V / np.linalg.norm(V)
    return sphere_to_stereo(np.cos(sigma) * P + np.sin(sigma) * V)


def sphere_distance(x, y):
    P, Q = stereo_to_sphere(x), stereo_to_sphere(y)
    return float(np.arccos(np.clip(P @ Q, -1, 1)))


# ---------------------------------------------------------------------------
# finite-difference differential of a map
# ---------------------------------------------------------------------------

def fd_jacobian(F, w, eps=1e-6):
    w = np.asarray(w, float)
    cols = []
    for k in range(w.size):
        e = np.zeros_like(w)
        e[k] = eps
        cols.append((np.asarray(F(w + e)) - np.asarray(F(w - e))) / (2 * eps))
    return np.stack(cols, axis=-1)


def rk4_reference(rhs, y0, length, steps):
    y = np.array(y0, float)
    h = length / steps
    for _ in range(steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


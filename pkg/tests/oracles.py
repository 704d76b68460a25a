"""Closed-form reference laws used as independent oracles.

Nothing here imports bmvd: every formula is written out from first
principles so tests compare two separate computations.
"""

import math

import numpy as np
from scipy import integrate, special, stats


def gaussian_kernel(t, a, b):
    """Transition density of standard Brownian motion (generator Delta/2) on the line."""
    return np.exp(-((np.asarray(b) - a) ** 2) / (2 * t)) / math.sqrt(2 * math.pi * t)


def skew_bm_density(t, y, z, beta):
    """Lebesgue density at z of skew Brownian motion started at y.

    g(z) = phi_t(z - y) + beta * sgn(z) * phi_t(|y| + |z|)  (Walsh / Harrison-Shepp).
    """
    z = np.asarray(z, dtype=float)
    return gaussian_kernel(t, y, z) + beta * np.sign(z) * gaussian_kernel(t, 0.0, np.abs(y) + np.abs(z))


def skew_bm_cdf(t, y, z, beta):
    """CDF of skew Brownian motion at time t, integrated from the density in closed form."""
    z = np.asarray(z, dtype=float)
    s = math.sqrt(t)
    base = stats.norm.cdf((z - y) / s)
    # integral of beta*sgn(u)*phi(|y|+|u|) from -inf to z
    tail_neg = stats.norm.sf((abs(y) - np.minimum(z, 0.0)) / s)  # int_{-inf}^{min(z,0)} phi(|y| - u) du
    mass_half = stats.norm.sf(abs(y) / s)
    pos_part = np.where(z > 0, mass_half - stats.norm.sf((abs(y) + z) / s), 0.0)
    return base - beta * tail_neg + beta * pos_part


def skew_beta_halfline(p):
    """Skew coefficient when both sides are half-lines and the d'-side has weight p."""
    return (1.0 - p) / (1.0 + p)


def hit_cdf_3d(t, R, eps):
    """P(Brownian motion in R^3 started at |x| = R hits the ball of radius eps by time t)."""
    return eps / R * special.erfc((R - eps) / np.sqrt(2 * np.asarray(t, dtype=float)))


def hit_density_3d(s, R, eps):
    a = R - eps
    return eps / R * a / np.sqrt(2 * math.pi * np.asarray(s) ** 3) * np.exp(-a * a / (2 * np.asarray(s)))


def hit_cdf_halfline(t, a):
    return special.erfc(a / math.sqrt(2 * t))


def unit_ball_volume(n):
    # recursion V_n = 2 pi V_{n-2} / n, independent of the gamma-function form
    if n == 0:
        return 1.0
    if n == 1:
        return 2.0
    return 2 * math.pi / n * unit_ball_volume(n - 2)


def sphere_area_numeric(n):
    """Unit (n-1)-sphere area as d/dr of the ball volume at r = 1."""
    return n * unit_ball_volume(n)


def weight_mass_quad(a, b, d, dp, eps, eps_prime, p):
    """Integral of the speed weight over [a, b] by adaptive quadrature."""
    def w(y):
        if y >= 0:
            return sphere_area_numeric(d) * (y + eps) ** (d - 1) if d > 1 else 1.0
        return p * (sphere_area_numeric(dp) * (-y + eps_prime) ** (dp - 1) if dp > 1 else 1.0)

    pts = [0.0] if a < 0 < b else None
    val, _ = integrate.quad(w, a, b, points=pts, epsabs=0, epsrel=1e-12)
    return val

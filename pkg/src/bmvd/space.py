"""Geometry of two Euclidean exteriors glued at a single point.

The state space is ``R^d_eps  U  R^d'_eps'  U  {a*}`` where the closed balls
``|x| <= eps`` and ``|x| <= eps'`` are collapsed to the junction ``a*``.
A one-dimensional part is the half-line ``(0, inf)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special


class Part(enum.Enum):
    SIDE_D = "d"
    SIDE_D_PRIME = "dp"
    JUNCTION = "a*"


def sphere_area(n: int) -> float:
    """Area of the unit (n-1)-sphere; 1 for the half-line convention n = 1."""
    if n == 1:
        return 1.0
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def ball_volume(n: int, r: float) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * r**n


@dataclass(frozen=True)
class SpaceParams:
    d: int
    d_prime: int
    eps: float = 1.0
    eps_prime: float = 1.0
    p: float = 1.0
    omega_d: float = field(init=False)
    omega_dp: float = field(init=False)
    w_plus: float = field(init=False)
    w_minus: float = field(init=False)

    def __post_init__(self):
        if not (self.d >= self.d_prime >= 1):
            raise ValueError(f"need d >= d' >= 1, got d={self.d}, d'={self.d_prime}")
        if min(self.eps, self.eps_prime, self.p) <= 0:
            raise ValueError("eps, eps' and p must be positive")
        object.__setattr__(self, "omega_d", sphere_area(self.d))
        object.__setattr__(self, "omega_dp", sphere_area(self.d_prime))
        w_plus = self.omega_d * self.eps ** (self.d - 1) if self.d > 1 else 1.0
        w_minus = self.p * (self.omega_dp * self.eps_prime ** (self.d_prime - 1) if self.d_prime > 1 else 1.0)
        object.__setattr__(self, "w_plus", w_plus)
        object.__setattr__(self, "w_minus", w_minus)

    @property
    def beta(self) -> float:
        """Skew coefficient of the signed radial process at the junction."""
        return (self.w_plus - self.w_minus) / (self.w_plus + self.w_minus)

    def side_dim(self, part: Part) -> int:
        return self.d if part is Part.SIDE_D else self.d_prime

    def side_radius(self, part: Part) -> float:
        """Gluing radius of a side (0 for a half-line, where |x|_rho = x)."""
        if part is Part.SIDE_D:
            return self.eps if self.d > 1 else 0.0
        return self.eps_prime if self.d_prime > 1 else 0.0

    def side_weight(self, part: Part) -> float:
        return 1.0 if part is Part.SIDE_D else self.p

    def to_dict(self) -> dict:
        return {"d": self.d, "d_prime": self.d_prime, "eps": self.eps,
                "eps_prime": self.eps_prime, "p": self.p}


@dataclass(frozen=True)
class GluedPoint:
    part: Part
    coords: tuple = ()

    @classmethod
    def junction(cls) -> "GluedPoint":
        return cls(Part.JUNCTION, ())

    @classmethod
    def on_side(cls, part: Part, coords) -> "GluedPoint":
        return cls(part, tuple(float(c) for c in np.atleast_1d(coords)))

    @classmethod
    def at_radius(cls, part: Part, r_rho: float, params: SpaceParams, direction=None) -> "GluedPoint":
        """Point at radial excess ``r_rho`` along ``direction`` (first axis by default)."""
        if part is Part.JUNCTION:
            return cls.junction()
        n = params.side_dim(part)
        if direction is None:
            direction = np.eye(n)[0]
        direction = np.asarray(direction, dtype=float)
        direction = direction / np.linalg.norm(direction)
        return cls.on_side(part, (params.side_radius(part) + r_rho) * direction)

    @property
    def is_junction(self) -> bool:
        return self.part is Part.JUNCTION

    @property
    def vec(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)

    def norm(self) -> float:
        return float(np.linalg.norm(self.vec)) if self.coords else 0.0

    def validate(self, params: SpaceParams) -> None:
        if self.part is Part.JUNCTION:
            if self.coords:
                raise ValueError("the junction carries no coordinates")
            return
        n = params.side_dim(self.part)
        if len(self.coords) != n:
            raise ValueError(f"expected {n} coordinates on {self.part.value}, got {len(self.coords)}")
        if n == 1:
            if self.coords[0] <= 0:
                raise ValueError("half-line points must be positive")
        elif self.norm() <= params.side_radius(self.part):
            raise ValueError(f"point {self.coords} lies inside the removed ball")


def radial_excess(x: GluedPoint, params: SpaceParams) -> float:
    """|x|_rho: distance to the junction along x's own part."""
    x.validate(params)
    if x.is_junction:
        return 0.0
    return x.norm() - params.side_radius(x.part)


def signed_radial(x: GluedPoint, params: SpaceParams) -> float:
    r = radial_excess(x, params)
    return -r if x.part is Part.SIDE_D_PRIME else r


def euclid_distance(x: GluedPoint, y: GluedPoint) -> float:
    """|x - y|, infinite across parts or through the junction."""
    if x.is_junction or y.is_junction or x.part is not y.part:
        return math.inf
    return float(np.linalg.norm(x.vec - y.vec))


def rho(x: GluedPoint, y: GluedPoint, params: SpaceParams) -> float:
    through = radial_excess(x, params) + radial_excess(y, params)
    return min(through, euclid_distance(x, y))


def shell_measure(part: Part, s: float, params: SpaceParams) -> float:
    """m_p of {y on part : |y|_rho < s}."""
    if s <= 0:
        return 0.0
    n = params.side_dim(part)
    c = params.side_weight(part)
    if n == 1:
        return c * s
    e = params.side_radius(part)
    return c * (ball_volume(n, e + s) - ball_volume(n, e))


def cap_fraction(n: int, s: float, R: float, r: float) -> float:
    """Fraction of the sphere |y| = s lying in the Euclidean ball B(x, r), |x| = R."""
    if s <= 0 or R <= 0:
        return 1.0 if s + R < r else 0.0
    c = (s * s + R * R - r * r) / (2.0 * s * R)
    if c >= 1.0:
        return 0.0
    if c <= -1.0:
        return 1.0
    half = 0.5 * special.betainc((n - 1) / 2.0, 0.5, 1.0 - c * c)
    return half if c >= 0 else 1.0 - half


def _own_part_measure(x: GluedPoint, r: float, params: SpaceParams) -> float:
    n = params.side_dim(x.part)
    c = params.side_weight(x.part)
    a = radial_excess(x, params)
    inner = max(r - a, 0.0)
    if n == 1:
        # (0, (r - a)+) is already inside (a - r, a + r)
        return c * (a + r - max(0.0, a - r))
    e = params.side_radius(x.part)
    R = x.norm()
    s_lo = max(e + inner, R - r)
    s_hi = R + r
    shell = shell_measure(x.part, inner, params)
    if s_hi <= s_lo:
        return shell
    area = sphere_area(n)

    def integrand(s):
        return area * s ** (n - 1) * cap_fraction(n, s, R, r)

    cap, _ = integrate.quad(integrand, s_lo, s_hi, epsrel=1e-8, epsabs=0.0, limit=200)
    return shell + c * cap


def ball_measure(x: GluedPoint, r: float, params: SpaceParams) -> float:
    """m_p of the rho-ball B(x; r)."""
    if r <= 0:
        raise ValueError("ball radius must be positive")
    x.validate(params)
    a = radial_excess(x, params)
    if x.is_junction:
        return shell_measure(Part.SIDE_D, r, params) + shell_measure(Part.SIDE_D_PRIME, r, params)
    other = Part.SIDE_D_PRIME if x.part is Part.SIDE_D else Part.SIDE_D
    return _own_part_measure(x, r, params) + shell_measure(other, r - a, params)


def vd_ratio(x: GluedPoint, r: float, params: SpaceParams) -> float:
    return ball_measure(x, 2 * r, params) / ball_measure(x, r, params)


def ball_measure_mc(x: GluedPoint, r: float, params: SpaceParams, n_samples: int, rng) -> tuple[float, float]:
    """Rejection-sampling estimate of ball_measure with its standard error.

    Uniform points are drawn in a bounding box on each part and accepted when
    they lie in the part and within rho-distance r of x.
    """
    a = radial_excess(x, params)
    est, var = 0.0, 0.0
    for part in (Part.SIDE_D, Part.SIDE_D_PRIME):
        n = params.side_dim(part)
        e = params.side_radius(part)
        c = params.side_weight(part)
        inner = r - a
        if part is x.part:
            box_lo, box_hi = x.vec - r, x.vec + r
            if inner > 0:
                # the through-junction shell wraps the whole removed ball
                box_lo = np.minimum(box_lo, -(e + inner))
                box_hi = np.maximum(box_hi, e + inner)
        else:
            if inner <= 0:
                continue
            box_lo, box_hi = np.full(n, -(e + inner)), np.full(n, e + inner)
        if n == 1:
            box_lo = np.maximum(box_lo, 0.0)
        box_vol = float(np.prod(box_hi - box_lo))
        pts = rng.uniform(box_lo, box_hi, size=(n_samples, n))
        norms = np.linalg.norm(pts, axis=1)
        y_rho = norms - e
        keep = y_rho > 0
        if part is x.part:
            through = a + y_rho
            eucl = np.linalg.norm(pts - x.vec, axis=1)
            inside = keep & (np.minimum(through, eucl) < r)
        else:
            inside = keep & (a + y_rho < r)
        frac = inside.mean()
        est += c * box_vol * frac
        var += (c * box_vol) ** 2 * frac * (1 - frac) / n_samples
    return est, math.sqrt(var)

"""Closed-form two-sided heat-kernel and hitting-law envelopes.

Every shape is a sum of terms ``coef * exp(-g / t)``.  The envelope
scales each exponent numerator ``g`` by a rate constant and each sum by a
multiplicative constant, so a shape evaluated with unit constants is the
canonical reference value.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from bmvd.space import GluedPoint, Part, SpaceParams, euclid_distance, radial_excess, rho


class GapError(ValueError):
    """Raised for times between the small- and large-time thresholds under the strict policy."""


class RegimeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class EnvelopeConstants:
    c_lower: float = 1.0
    e_lower: float = 1.0
    c_upper: float = 1.0
    e_upper: float = 1.0

    def __post_init__(self):
        if self.c_lower <= 0 or self.c_upper <= 0:
            raise ValueError("multiplicative constants must be positive")
        if self.e_lower < 1 or not (0 < self.e_upper <= 1):
            raise ValueError("need e_lower >= 1 and e_upper in (0, 1]")


NEUTRAL = EnvelopeConstants()


@dataclass(frozen=True)
class Thresholds:
    t_small: float = 1.0
    t_large: float = 64.0
    t_large_2_1: float = 8.0
    gap_policy: str = "extend-both"

    def large_threshold(self, params: SpaceParams) -> float:
        return self.t_large_2_1 if (params.d, params.d_prime) == (2, 1) else self.t_large


DEFAULT_THRESHOLDS = Thresholds()

# families of estimates; every family has sub-cases "i", "ii", "iii"
SMALL = "small"
LINE = "line"
LARGE_2_1 = "large-2-1"
LARGE_D_1 = "large-d-1"
LARGE_2_2 = "large-2-2"
LARGE_D_2 = "large-d-2"
LARGE_D_DP = "large-d-dp"
FAMILIES = (SMALL, LINE, LARGE_2_1, LARGE_D_1, LARGE_2_2, LARGE_D_2, LARGE_D_DP)


@dataclass(frozen=True)
class Regime:
    family: str
    case: str
    branch: str = ""
    alt: "Regime | None" = None

    @property
    def regime_id(self) -> str:
        base = f"{self.family}/{self.case}" + (f"/{self.branch}" if self.branch else "")
        return base if self.alt is None else f"{base}|{self.alt.regime_id}"

    @property
    def is_gap(self) -> bool:
        return self.alt is not None


def large_family(params: SpaceParams) -> str:
    d, dp = params.d, params.d_prime
    if dp == 1:
        return {1: LINE, 2: LARGE_2_1}.get(d, LARGE_D_1)
    if dp == 2:
        return LARGE_2_2 if d == 2 else LARGE_D_2
    return LARGE_D_DP


def _same_part(x: GluedPoint, y: GluedPoint) -> Part | None:
    if x.is_junction or y.is_junction or x.part is not y.part:
        return None
    return x.part


def _on(x: GluedPoint, part: Part) -> bool:
    """x lies on ``part`` or at the junction."""
    return x.is_junction or x.part is part


def _classify_small(x, y, params) -> Regime:
    part = _same_part(x, y)
    if part is None:
        return Regime(SMALL, "iii")
    near = max(radial_excess(x, params), radial_excess(y, params)) <= 1.0
    return Regime(SMALL, "i" if part is Part.SIDE_D_PRIME else "ii", "near" if near else "far")


def _classify_large(x, y, params) -> Regime:
    fam = large_family(params)
    part = _same_part(x, y)
    rx, ry = radial_excess(x, params), radial_excess(y, params)
    if fam == LINE:
        return Regime(LINE, "i")
    if fam == LARGE_2_1:
        if _on(x, Part.SIDE_D) and _on(y, Part.SIDE_D):
            return Regime(fam, "i")
        if part is Part.SIDE_D_PRIME:
            return Regime(fam, "iii")
        # one point on the half-line, the other on the plane side or junction
        other = y if x.part is Part.SIDE_D_PRIME else x
        return Regime(fam, "ii", "near" if radial_excess(other, params) <= 1.0 else "far")
    if fam == LARGE_D_1:
        if part is not None and min(rx, ry) > 1.0:
            return Regime(fam, "i" if part is Part.SIDE_D_PRIME else "ii")
        return Regime(fam, "iii")
    if fam == LARGE_2_2:
        return Regime(fam, "i") if part is not None else Regime(fam, "ii")
    if fam == LARGE_D_2:
        if part is Part.SIDE_D:
            return Regime(fam, "i")
        if part is Part.SIDE_D_PRIME:
            return Regime(fam, "ii")
        return Regime(fam, "iii")
    if part is Part.SIDE_D_PRIME:
        return Regime(fam, "i")
    if part is Part.SIDE_D:
        return Regime(fam, "ii", "near" if max(rx, ry) <= 1.0 else "far")
    return Regime(fam, "iii")


def classify(t: float, x: GluedPoint, y: GluedPoint, params: SpaceParams,
             thresholds: Thresholds = DEFAULT_THRESHOLDS) -> Regime:
    """Unique estimate family and sub-case for (t, x, y).

    Between the thresholds the "extend-both" policy returns the small-time
    regime with the large-time candidate attached as ``alt``.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    x.validate(params)
    y.validate(params)
    t_large = thresholds.large_threshold(params)
    if t <= thresholds.t_small:
        return _classify_small(x, y, params)
    if t >= t_large:
        return _classify_large(x, y, params)
    if thresholds.gap_policy == "strict":
        raise GapError(f"t={t} lies between {thresholds.t_small} and {t_large}")
    if thresholds.gap_policy != "extend-both":
        raise ValueError(f"unknown gap policy {thresholds.gap_policy!r}")
    small = _classify_small(x, y, params)
    return Regime(small.family, small.case, small.branch, alt=_classify_large(x, y, params))


def _matches(regime: Regime, t, x, y, params) -> bool:
    base = Regime(regime.family, regime.case, regime.branch)
    if regime.family == SMALL:
        return _classify_small(x, y, params) == base
    if regime.family != large_family(params):
        return False
    return _classify_large(x, y, params) == base


# --- shape helpers -----------------------------------------------------


def _abs_norm(x: GluedPoint, role: Part, params: SpaceParams, halfline_offset: bool) -> float:
    """|x| as used in the shapes; at the junction the radius of the side playing role."""
    if x.is_junction:
        return params.eps if role is Part.SIDE_D else params.eps_prime
    if params.side_dim(x.part) == 1:
        return (params.eps_prime if x.part is Part.SIDE_D_PRIME else params.eps) + x.norm() \
            if halfline_offset else x.norm()
    return x.norm()


def _canonical(x: GluedPoint, y: GluedPoint, params: SpaceParams):
    """Order a same-part pair deterministically so shapes are exactly symmetric."""
    kx = (radial_excess(x, params), x.coords)
    ky = (radial_excess(y, params), y.coords)
    return (x, y) if kx <= ky else (y, x)


def _clamp(r, t):
    return min(1.0, r / math.sqrt(t))


def terms(regime: Regime, t: float, x: GluedPoint, y: GluedPoint, params: SpaceParams) -> list:
    """(coefficient, exponent numerator) pairs of the shape."""
    if regime.is_gap:
        raise RegimeMismatch("gap regimes have two shapes; use shape() or envelope()")
    if not _matches(regime, t, x, y, params):
        raise RegimeMismatch(f"{regime.regime_id} does not hold at this (t, x, y)")
    fam, case, branch = regime.family, regime.case, regime.branch
    d, dp = params.d, params.d_prime
    if _same_part(x, y) is not None:
        x, y = _canonical(x, y, params)
    rx, ry = radial_excess(x, params), radial_excess(y, params)
    r2 = rho(x, y, params) ** 2
    through2 = (rx + ry) ** 2
    sq = math.sqrt(t)

    if fam == SMALL:
        if case == "iii":
            return [(t**-0.5, r2)]
        n = dp if case == "i" else d
        if branch == "far":
            return [(t ** (-n / 2), r2)]
        e2 = euclid_distance(x, y) ** 2
        return [(t**-0.5, r2), (t ** (-n / 2) * _clamp(rx, t) * _clamp(ry, t), e2)]

    if fam == LINE:
        return [(t**-0.5, r2)]

    if fam == LARGE_2_1:
        if case == "i":
            return [(1.0 / t, r2)]
        if case == "ii":
            half, other = (x, y) if x.part is Part.SIDE_D_PRIME else (y, x)
            ax = half.norm()
            ro = radial_excess(other, params)
            if branch == "near":
                return [((1.0 + ax * math.log(t) / sq) / t, r2)]
            return [((1.0 + ax / sq * math.log(1.0 + sq / ro)) / t, r2)]
        ax, ay = x.norm(), y.norm()
        e2 = euclid_distance(x, y) ** 2
        return [(_clamp(ax, t) * _clamp(ay, t) / sq, e2),
                ((1.0 + (ax + ay) * math.log(t) / sq) / t, through2)]

    if fam == LARGE_D_1:
        if case == "i":
            ax = _abs_norm(x, Part.SIDE_D_PRIME, params, True)
            ay = _abs_norm(y, Part.SIDE_D_PRIME, params, True)
            return [(ax * ay / (sq * (ax + sq) * (ay + sq)), r2)]
        if case == "ii":
            ax, ay = x.norm(), y.norm()
            return [(t**-1.5 / (ax ** (d - 2) * ay ** (d - 2)), through2), (t ** (-d / 2), r2)]
        part = _same_part(x, y)
        if part is Part.SIDE_D_PRIME:
            # the smaller radius plays the role of y
            xr, yr = (y, x) if rx <= ry else (x, y)
            ax = _abs_norm(xr, Part.SIDE_D_PRIME, params, True)
            ay = _abs_norm(yr, Part.SIDE_D_PRIME, params, True)
        elif part is Part.SIDE_D:
            # the smaller radius plays the role of x
            xr, yr = (x, y) if rx <= ry else (y, x)
            ax = _abs_norm(xr, Part.SIDE_D, params, True)
            ay = _abs_norm(yr, Part.SIDE_D, params, True)
        else:
            xr, yr = _split_roles(x, y, Part.SIDE_D_PRIME)
            ax = _abs_norm(xr, Part.SIDE_D_PRIME, params, True)
            ay = _abs_norm(yr, Part.SIDE_D, params, True)
        return [(t ** (-d / 2) + ax / (t**1.5 * ay ** (d - 2)), r2)]

    if fam == LARGE_2_2:
        if case == "i":
            return [(1.0 / t, r2)]
        xr, yr = _split_roles(x, y, Part.SIDE_D)
        ax = _abs_norm(xr, Part.SIDE_D, params, False)
        ay = _abs_norm(yr, Part.SIDE_D_PRIME, params, False)
        ux, uy = u_weight(t, ax), u_weight(t, ay)
        val = ux * uy + ux * math.log(ay) / math.log(1 + t * ay) + uy * math.log(ax) / math.log(1 + t * ax)
        return [(val / t, r2)]

    if fam == LARGE_D_2:
        lt = math.log(t)
        if case == "i":
            ax, ay = x.norm(), y.norm()
            return [(1.0 / (t * lt**2 * ax ** (d - 2) * ay ** (d - 2)), through2), (t ** (-d / 2), r2)]
        if case == "ii":
            ax, ay = x.norm(), y.norm()
            val = math.log1p(ax) * math.log1p(ay) / (t * math.log1p(t * ay) * math.log1p(t * ax))
            return [(val, r2)]
        xr, yr = _split_roles(x, y, Part.SIDE_D)
        ax = _abs_norm(xr, Part.SIDE_D, params, False)
        ay = _abs_norm(yr, Part.SIDE_D_PRIME, params, False)
        return [(1.0 / (t * lt**2 * ax ** (d - 2)) + h_weight(t, ay) / t ** (d / 2), r2)]

    # LARGE_D_DP
    if case == "i":
        return [(t ** (-dp / 2), r2)]
    if case == "ii":
        if branch == "near":
            return [(t ** (-dp / 2), r2)]
        ax, ay = x.norm(), y.norm()
        return [(t ** (-dp / 2) / (ax ** (d - 2) * ay ** (d - 2)), through2), (t ** (-d / 2), r2)]
    xr, yr = _split_roles(x, y, Part.SIDE_D)
    ax = _abs_norm(xr, Part.SIDE_D, params, False)
    ay = _abs_norm(yr, Part.SIDE_D_PRIME, params, False)
    return [(t ** (-dp / 2) / ax ** (d - 2) + t ** (-d / 2) / ay ** (d - 2), r2)]


def _split_roles(x: GluedPoint, y: GluedPoint, first: Part):
    """For a cross pair: (point on ``first`` or junction, point on the other side or junction)."""
    if x.is_junction and y.is_junction:
        return x, y
    if x.is_junction:
        return (y, x) if y.part is first else (x, y)
    if y.is_junction:
        return (x, y) if x.part is first else (y, x)
    return (x, y) if x.part is first else (y, x)


def u_weight(t: float, a: float) -> float:
    """U_t for a point of norm a."""
    return 1.0 / math.log(t + a) + max(1.0 - math.log(a) / math.log(math.sqrt(t)), 0.0)


def h_weight(t: float, a: float) -> float:
    """H_t for a point of norm a."""
    la = math.log1p(a)
    return 1.0 / la**2 + max(1.0 / (2.0 * la) - 1.0 / math.log(t), 0.0)


def negative_intermediates(regime: Regime, t: float, x: GluedPoint, y: GluedPoint, params: SpaceParams) -> bool:
    """True when a logarithm of a norm below 1 enters an evaluated log-corrected shape."""
    fam = regime.family if not regime.is_gap else regime.alt.family
    if fam not in (LARGE_2_2, LARGE_D_2):
        return False
    norms = []
    for pt, role in ((x, Part.SIDE_D), (y, Part.SIDE_D_PRIME)):
        norms.append(_abs_norm(pt, role if pt.is_junction else pt.part, params, False))
    return any(a < 1.0 for a in norms)


def _eval(ts: list, t: float, rate: float) -> float:
    return float(sum(c * math.exp(-rate * g / t) for c, g in ts))


def shape(regime: Regime, t: float, x: GluedPoint, y: GluedPoint, params: SpaceParams) -> float:
    """Shape with unit constants; the larger candidate for gap regimes."""
    if regime.is_gap:
        base = Regime(regime.family, regime.case, regime.branch)
        return max(_eval(terms(base, t, x, y, params), t, 1.0),
                   _eval(terms(regime.alt, t, x, y, params), t, 1.0))
    return _eval(terms(regime, t, x, y, params), t, 1.0)


def envelope(regime: Regime, t: float, x: GluedPoint, y: GluedPoint, params: SpaceParams,
             k: EnvelopeConstants = NEUTRAL) -> tuple[float, float]:
    """(lower, upper); for gap regimes the union of both candidate envelopes."""
    cands = [Regime(regime.family, regime.case, regime.branch)]
    if regime.is_gap:
        cands.append(regime.alt)
    lows, ups = [], []
    for reg in cands:
        ts = terms(reg, t, x, y, params)
        lows.append(k.c_lower * _eval(ts, t, k.e_lower))
        ups.append(k.c_upper * _eval(ts, t, k.e_upper))
    return min(lows), max(ups)


def killed_part_shape(t: float, x: GluedPoint, y: GluedPoint, params: SpaceParams) -> float:
    part = _same_part(x, y)
    if part is None:
        raise ValueError("the killed-part estimate needs two points on the same part")
    n = params.side_dim(part)
    if n < 2:
        raise ValueError("the killed-part estimate needs a side of dimension at least 2")
    clamp = min(math.sqrt(t), 1.0)
    rx, ry = radial_excess(x, params), radial_excess(y, params)
    return t ** (-n / 2) * min(1.0, rx / clamp) * min(1.0, ry / clamp) * math.exp(-euclid_distance(x, y) ** 2 / t)


def killed_part_envelope(t: float, x: GluedPoint, y: GluedPoint, params: SpaceParams,
                         k: EnvelopeConstants = NEUTRAL) -> tuple[float, float]:
    base = killed_part_shape(t, x, y, params)
    e2 = euclid_distance(x, y) ** 2
    boost = math.exp(e2 / t)
    return (k.c_lower * base * boost * math.exp(-k.e_lower * e2 / t),
            k.c_upper * base * boost * math.exp(-k.e_upper * e2 / t))


def killed_kernel_bounds(t: float, x: GluedPoint, y: GluedPoint, params: SpaceParams) -> tuple[float, float]:
    """Rigorous bounds on the killed exterior kernel w.r.t. m_p for generator Delta/2.

    Upper: the free Gaussian.  Lower: the kernel killed on leaving the
    half-space {z . n > radius} with n along x + y, which sits inside the
    exterior of the ball.
    """
    part = _same_part(x, y)
    if part is None:
        raise ValueError("killed kernels need two points on the same part")
    n = params.side_dim(part)
    c = params.side_weight(part)
    e2 = euclid_distance(x, y) ** 2
    free = (2 * math.pi * t) ** (-n / 2) * math.exp(-e2 / (2 * t)) / c
    if n == 1:
        # method of images is exact on a half-line
        exact = free * (-math.expm1(-2 * x.norm() * y.norm() / t))
        return exact, exact
    s = x.vec + y.vec
    ns = np.linalg.norm(s)
    if ns == 0:
        return 0.0, free
    nrm = s / ns
    e = params.side_radius(part)
    a, b = float(x.vec @ nrm) - e, float(y.vec @ nrm) - e
    if a <= 0 or b <= 0:
        return 0.0, free
    return free * (-math.expm1(-2 * a * b / t)), free


# --- hitting laws --------------------------------------------------------


def _side_point(x: GluedPoint, params: SpaceParams) -> tuple[int, float, float]:
    if x.is_junction:
        raise ValueError("hitting laws need a starting point off the junction")
    x.validate(params)
    return params.side_dim(x.part), radial_excess(x, params), x.norm()


def hitting_density_halfline(s: float, x: GluedPoint, params: SpaceParams) -> float:
    """Exact first-passage density of 0 for Brownian motion (generator Delta/2) on a half-line."""
    a = radial_excess(x, params)
    return a / math.sqrt(2 * math.pi * s**3) * math.exp(-a * a / (2 * s))


def hitting_density_shape(s: float, x: GluedPoint, params: SpaceParams, variant: str = "printed",
                          rate: float = 1.0) -> float:
    """Shape of P_x(sigma in ds)/ds with unit multiplicative constant.

    For planar sides ``variant="printed"`` uses exp(-|x|_rho / s) and
    ``variant="squared"`` uses exp(-|x|_rho^2 / s).  ``rate`` scales the
    exponent (ignored on a half-line, where the law is exact).
    """
    if s <= 0:
        raise ValueError("s must be positive")
    n, r, a = _side_point(x, params)
    if n == 1:
        return hitting_density_halfline(s, x, params)
    if n >= 3:
        return (r / a) * math.exp(-rate * r * r / s) / (s ** (n / 2) + s**1.5 * a ** ((n - 3) / 2))
    if variant not in ("printed", "squared"):
        raise ValueError(f"unknown variant {variant!r}")
    expo = r / s if variant == "printed" else r * r / s
    return ((r / a) * (1 + math.log(a)) / ((1 + math.log1p(s / a)) * (1 + math.log(s + a)))
            * math.sqrt(a + s) / s**1.5 * math.exp(-rate * expo))


def hitting_cdf_branch(t: float, x: GluedPoint, params: SpaceParams) -> str:
    """Which formula hitting_cdf_shape uses: "transient", "short", "long" or "extended"."""
    n, r, a = _side_point(x, params)
    if n >= 3:
        return "transient"
    if n == 2:
        if r < 1.0:
            return "extended"
        return "short" if t < 2 * a * a else "long"
    raise ValueError("half-line hitting is handled by the exact one-dimensional law")


def hitting_cdf_shape(t: float, x: GluedPoint, params: SpaceParams, rate: float = 1.0) -> float:
    """Shape of P_x(sigma <= t) with unit multiplicative constant; ``rate`` scales the exponent.

    Planar points with |x|_rho < 1 are outside the stated hypotheses; they get
    the constant-order value 1/log(e + |x|), reported as branch "extended".
    """
    if t <= 0:
        raise ValueError("t must be positive")
    branch = hitting_cdf_branch(t, x, params)
    n, r, a = _side_point(x, params)
    if branch == "transient":
        if t <= 1:
            raise ValueError("the transient hitting estimate needs t > 1")
        return a ** (-(n - 2)) * math.exp(-rate * r * r / t)
    if branch == "extended":
        return 1.0 / math.log(math.e + a)
    if branch == "short":
        return math.exp(-rate * r * r / t) / math.log(a)
    return 1.0 - math.log(a) / math.log(math.sqrt(t))


def ondiag_rate(t: float, params: SpaceParams) -> float:
    """Decay rate of p(t, a*, a*) with unit constants."""
    if t <= 0:
        raise ValueError("t must be positive")
    d, dp = params.d, params.d_prime
    short = t**-0.5
    if dp >= 3:
        return min(short, t ** (-dp / 2))
    if dp == 2:
        if d == 2:
            return min(short, 1.0 / t)
        return min(short, 1.0 / ((t + 1) * math.log(t + 1) ** 2))
    if d == 1:
        return short
    if d == 2:
        return min(short, 1.0 / t)
    return min(short, t**-1.5)


@dataclass(frozen=True)
class ExpComparison:
    case: str
    i: bool
    ii: bool
    iii: bool


def exp_comparison_check(t: float, x: GluedPoint, y: GluedPoint, params: SpaceParams, T: float,
                         b: float | None = None) -> ExpComparison:
    """Check the large-time exponent comparisons for a same-part pair.

    Each flag is True when its relation holds with the explicit slack, or
    when its hypothesis does not apply; ``case`` names the applicable one.
    """
    part = _same_part(x, y)
    if part is None:
        raise ValueError("exponent comparison needs two points on the same part")
    if t < T:
        raise ValueError("t must be at least T")
    e = params.side_radius(part)
    rx, ry = radial_excess(x, params), radial_excess(y, params)
    rr = rho(x, y, params)
    dist = euclid_distance(x, y)
    through = rx + ry
    tol = 1e-12 * (1 + through + dist)
    ok_i = ok_ii = ok_iii = True
    case = "ii"
    if max(rx, ry) > 1:
        case = "i"
        ok_i = rr <= dist + tol and dist <= (2 * e + 1) * rr + tol and dist <= (2 * e + 1) * through + tol
        lo, hi = sorted((rx, ry))
        bb = lo if b is None else b
        if hi > 1 > bb >= lo:
            case = "i+iii"
            ok_iii = (through**2 - 2 * dist**2) / t <= 8 * bb * bb / T + 1e-12
    else:
        ok_ii = (through**2 / t <= 4 / T + 1e-12
                 and dist**2 / t <= 4 / T + 2 * (2 * e) ** 2 / T + 2 * through**2 / t + 1e-12)
    return ExpComparison(case, bool(ok_i), bool(ok_ii), bool(ok_iii))


ENVELOPE_COLUMNS = ("t", "part_x", "r_x", "part_y", "r_y", "dist_xy", "regime_id", "shape", "lower", "upper")


def envelope_row(t: float, x: GluedPoint, y: GluedPoint, params: SpaceParams,
                 k: EnvelopeConstants = NEUTRAL, thresholds: Thresholds = DEFAULT_THRESHOLDS) -> dict:
    reg = classify(t, x, y, params, thresholds)
    lo, hi = envelope(reg, t, x, y, params, k)
    return {"t": t, "part_x": x.part.value, "r_x": radial_excess(x, params), "part_y": y.part.value,
            "r_y": radial_excess(y, params), "dist_xy": rho(x, y, params), "regime_id": reg.regime_id,
            "shape": shape(reg, t, x, y, params), "lower": lo, "upper": hi}


def write_envelope_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ENVELOPE_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow(row)

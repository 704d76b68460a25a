"""Constant fitting and sandwich bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bmvd.envelopes import EnvelopeConstants


class FitError(ValueError):
    pass


def fit_constants(numeric_lo, numeric_hi, shape_lower, shape_upper, e_lower: float = 2.0,
                  e_upper: float = 0.5, relax: float = 0.10, min_samples: int = 20) -> EnvelopeConstants:
    """Smallest envelope (with fixed exponent slack) containing every sample, relaxed by ``relax``.

    ``numeric_lo``/``numeric_hi`` bracket each numeric value (equal for
    point values).  ``shape_lower``/``shape_upper`` are the unit-constant
    shapes with exponents scaled by ``e_lower``/``e_upper``.
    """
    lo = np.asarray(numeric_lo, dtype=float)
    hi = np.asarray(numeric_hi, dtype=float)
    sl = np.asarray(shape_lower, dtype=float)
    su = np.asarray(shape_upper, dtype=float)
    if lo.size == 0:
        raise FitError("no samples in this regime")
    if lo.size < min_samples:
        raise FitError(f"need at least {min_samples} samples, got {lo.size}")
    if np.any(sl <= 0) or np.any(su <= 0):
        raise FitError("shapes must be positive to fit constants")
    c_up = float(np.max(lo / su)) * (1 + relax)
    c_low = float(np.min(hi / sl)) / (1 + relax)
    if not (c_low > 0 and c_up > 0):
        raise FitError("numeric values must be positive to fit constants")
    return EnvelopeConstants(c_low, e_lower, c_up, e_upper)


@dataclass
class SandwichReport:
    regime_id: str
    rows: list = field(default_factory=list)
    constants: EnvelopeConstants | None = None
    halves: tuple = ()
    pass_rate: float = 0.0
    worst_ratio: float = float("nan")
    uniform: bool = False
    uniform_ratio: float = float("nan")
    spread: float = float("nan")
    robust: dict = field(default_factory=dict)
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.constants is not None and self.pass_rate == 1.0 and self.uniform

    def summary(self) -> dict:
        k = self.constants
        return {
            "regime_id": self.regime_id, "n": len(self.rows), "passed": self.passed,
            "pass_rate": self.pass_rate, "worst_ratio": self.worst_ratio, "uniform": self.uniform,
            "uniform_ratio": self.uniform_ratio, "c_ratio": self.spread,
            "constants": None if k is None else {"c_lower": k.c_lower, "e_lower": k.e_lower,
                                                  "c_upper": k.c_upper, "e_upper": k.e_upper},
            "halves": [None if h is None else {"c_lower": h.c_lower, "c_upper": h.c_upper} for h in self.halves],
            "robust_t_ge_512": self.robust, "note": self.note,
        }


def sandwich(regime_id: str, t, numeric_lo, numeric_hi, shape_lower, shape_upper, e_lower=2.0,
             e_upper=0.5, relax=0.10, uniformity=4.0, min_samples=20, rows=None,
             robust_from: float = 512.0) -> SandwichReport:
    """Fit, check containment and t-uniformity for one regime.

    A point passes when its numeric bracket meets [lower, upper].  The fit
    is t-uniform when refits on the early and late halves of the time grid
    agree within ``uniformity`` for both constants.
    """
    t = np.asarray(t, dtype=float)
    lo, hi = np.asarray(numeric_lo, float), np.asarray(numeric_hi, float)
    sl, su = np.asarray(shape_lower, float), np.asarray(shape_upper, float)
    rep = SandwichReport(regime_id, rows if rows is not None else [])
    try:
        k = fit_constants(lo, hi, sl, su, e_lower, e_upper, relax, min_samples)
    except FitError as exc:
        rep.note = str(exc)
        return rep
    rep.constants = k
    lower, upper = k.c_lower * sl, k.c_upper * su
    ok = (hi >= lower * (1 - 1e-12)) & (lo <= upper * (1 + 1e-12))
    rep.pass_rate = float(ok.mean())
    rep.worst_ratio = float(max(np.max(lo / upper), np.max(lower / hi)))
    rep.spread = k.c_upper / k.c_lower
    times = np.unique(t)
    cut = times[len(times) // 2] if len(times) > 1 else np.inf
    halves = []
    for mask in (t < cut, t >= cut):
        try:
            halves.append(fit_constants(lo[mask], hi[mask], sl[mask], su[mask], e_lower, e_upper, relax, 1))
        except FitError:
            halves.append(None)
    rep.halves = tuple(halves)
    if all(h is not None for h in halves):
        a, b = halves
        ratio = max(a.c_upper / b.c_upper, b.c_upper / a.c_upper, a.c_lower / b.c_lower, b.c_lower / a.c_lower)
        rep.uniform_ratio = float(ratio)
        rep.uniform = ratio <= uniformity
    else:
        # a single time slice cannot be non-uniform
        rep.uniform_ratio = 1.0
        rep.uniform = True
    late = t >= robust_from
    if late.sum() >= 2:
        kr = fit_constants(lo[late], hi[late], sl[late], su[late], e_lower, e_upper, relax, 1)
        rep.robust = {"n": int(late.sum()), "c_lower": kr.c_lower, "c_upper": kr.c_upper,
                      "c_ratio": kr.c_upper / kr.c_lower}
    if rows is not None:
        for row, l_, u_, f in zip(rows, lower, upper, ok):
            row.update(lower=float(l_), upper=float(u_), passed=bool(f))
    return rep

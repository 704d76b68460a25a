"""Monte Carlo sampling of the signed radial process and of killed exterior Brownian motion.

Randomness comes from counter-based Philox streams: paths are cut into
fixed-size blocks and block ``b`` draws from the stream with key ``seed``
and counter offset ``b``, so a path's samples depend only on the seed, its
index and the block size, never on how blocks are scheduled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from bmvd.radial import weight_integral
from bmvd.space import GluedPoint, Part, SpaceParams, radial_excess


@dataclass(frozen=True)
class MCConfig:
    n_paths: int = 100_000
    dt: float = 1e-3
    band: float | None = None
    seed: int = 20240601
    block_size: int = 8192
    scheme: str = "skew-band"

    def __post_init__(self):
        if self.dt <= 0 or self.n_paths <= 0 or self.block_size <= 0:
            raise ValueError("dt, n_paths and block_size must be positive")
        if self.band is not None and self.band < 4 * math.sqrt(self.dt) * (1 - 1e-12):
            raise ValueError("junction band must be at least 4 sqrt(dt)")
        if self.scheme != "skew-band":
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def delta(self) -> float:
        """Junction band; the step rule is uniform, so this is only validated and echoed."""
        return self.band if self.band is not None else 4 * math.sqrt(self.dt)


MIN_REPORTED_PATHS = 1000


def block_generator(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, block]))


def _blocks(cfg: MCConfig):
    for b, start in enumerate(range(0, cfg.n_paths, cfg.block_size)):
        yield b, start, min(start + cfg.block_size, cfg.n_paths)


def side_drift(sign, mag, params: SpaceParams):
    """Outward drift magnitude (n-1)/(2(|y|+radius)) on the side selected by sign."""
    pos = (params.d - 1) / (2 * (mag + params.eps)) if params.d > 1 else np.zeros_like(mag)
    if params.d_prime > 1:
        neg = (params.d_prime - 1) / (2 * (mag + params.eps_prime))
    else:
        neg = np.zeros_like(mag)
    return np.where(sign >= 0, pos, neg)


def _junction_sign(u, beta):
    return np.where(u < 0.5 * (1 + beta), 1.0, -1.0)


def step_radial(y, dt: float, params: SpaceParams, rng: np.random.Generator):
    """One step of the signed radial process for an array of positions.

    Returns ``(z, hit, hit_offset)``: new positions, whether the junction
    was touched during the step and the first touching time within the step
    (nan where not touched).

    The radial magnitude moves as Brownian motion with the drift of the
    current side evaluated at the current position.  The minimum of the move
    given its endpoint is drawn from the Brownian-bridge law; a non-positive
    minimum is a touch of the junction.  Touches only have appreciable
    probability within a few sqrt(dt) of 0, where the step is the exact skew
    reflection: the magnitude becomes the Skorokhod reflection ``X - min``,
    the side is redrawn with probability (1 + beta) / 2 for the d-side, and
    the drift is switched to the new side for the time left in the step.
    Farther out the same rule reduces to Euler-Maruyama with the
    bridge crossing test.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape
    normal = rng.standard_normal(n)
    u_bridge = rng.random(n)
    u_sign = rng.random(n)
    a = np.abs(y)
    sgn = np.where(y > 0, 1.0, -1.0)
    mu = side_drift(sgn, a, params)
    x_end = a + mu * dt + math.sqrt(dt) * normal
    low = 0.5 * (a + x_end - np.sqrt((x_end - a) ** 2 - 2 * dt * np.log1p(-u_bridge)))
    hit = (low <= 0) | (x_end <= 0)
    new_sign = np.where(hit, _junction_sign(u_sign, params.beta), sgn)
    mag = np.where(hit, x_end - np.minimum(low, 0.0), x_end)
    offset = np.full(n, np.nan)
    if np.any(hit):
        idx = np.flatnonzero(hit.ravel())
        tau = _touch_time(a.ravel()[idx], np.abs(x_end).ravel()[idx], dt, rng)
        offset.ravel()[idx] = tau
        mu_new = side_drift(new_sign.ravel()[idx], np.zeros(len(idx)), params)
        flat = mag.ravel()
        flat[idx] = np.abs(flat[idx] + (mu_new - mu.ravel()[idx]) * (dt - tau))
        mag = flat.reshape(n)
    return new_sign * mag, hit, offset


def _touch_time(a: np.ndarray, b: np.ndarray, h: float, rng: np.random.Generator) -> np.ndarray:
    """First time a Brownian bridge from a > 0 to -b < 0 over [0, h] reaches 0.

    With V = s / (h - s) the law is inverse Gaussian with mean a / b and
    shape a^2 / h.
    """
    out = np.zeros_like(a)
    ok = (a > 0) & (b > 0)
    if np.any(ok):
        v = rng.wald(a[ok] / b[ok], a[ok] ** 2 / h)
        out[ok] = h * v / (1 + v)
    out[(a > 0) & (b <= 0)] = h
    return out


@dataclass
class PathEnsemble:
    t: float
    y0: float
    terminal: np.ndarray
    hit_time: np.ndarray
    killed: np.ndarray
    seed: int
    cfg: MCConfig
    params: SpaceParams
    snapshot_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    snapshots: np.ndarray | None = None
    positions: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return len(self.terminal)

    @property
    def n_killed(self) -> int:
        return int(self.killed.sum())

    @property
    def n_surviving(self) -> int:
        return self.n_paths - self.n_killed

    def hit_cdf(self, s) -> np.ndarray:
        """Empirical P(sigma <= s) with binomial standard errors."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        ht = np.where(np.isnan(self.hit_time), np.inf, self.hit_time)
        frac = (ht[None, :] <= s[:, None]).mean(axis=1)
        return frac, np.sqrt(frac * (1 - frac) / self.n_paths)

    def values_at(self, time: float | None = None) -> np.ndarray:
        if time is None or time == self.t:
            return self.terminal
        k = np.flatnonzero(np.isclose(self.snapshot_times, time))
        if len(k) == 0:
            raise ValueError(f"no snapshot at t={time}")
        return self.snapshots[k[0]]


def _schedule(t: float, dt: float, marks) -> np.ndarray:
    """Step end times of size dt, shortened to land on t and on every mark."""
    n = int(math.ceil(t / dt - 1e-9))
    grid = np.minimum(np.arange(1, n + 1) * dt, t)
    pts = np.unique(np.concatenate([grid, np.asarray(marks, dtype=float), [t]]))
    return pts[pts > 0]


def sample_paths(y0: float, t: float, cfg: MCConfig, params: SpaceParams, snapshots=(),
                 stop_at_hit: bool = False) -> PathEnsemble:
    """Independent paths of the signed radial process from y0 up to time t.

    ``stop_at_hit`` absorbs each path at its first touch of the junction;
    such paths are flagged killed and keep terminal value 0.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    snap_t = np.sort(np.asarray(snapshots, dtype=float))
    if np.any(snap_t > t) or np.any(snap_t <= 0):
        raise ValueError("snapshot times must lie in (0, t]")
    ends = _schedule(t, cfg.dt, snap_t)
    snap_idx = {float(s): k for k, s in enumerate(snap_t)}
    terminal = np.empty(cfg.n_paths)
    hit_time = np.full(cfg.n_paths, np.nan)
    killed = np.zeros(cfg.n_paths, dtype=bool)
    snaps = np.empty((len(snap_t), cfg.n_paths)) if len(snap_t) else None
    for b, lo, hi in _blocks(cfg):
        rng = block_generator(cfg.seed, b)
        y = np.full(hi - lo, float(y0))
        ht = np.full(hi - lo, np.nan)
        alive = np.ones(hi - lo, dtype=bool)
        prev = 0.0
        for end in ends:
            h = end - prev
            z, hit, off = step_radial(y, h, params, rng)
            first = hit & np.isnan(ht)
            ht[first] = prev + off[first]
            if stop_at_hit:
                alive &= ~hit
                z = np.where(alive, z, 0.0)
            y = z
            prev = end
            k = snap_idx.get(float(end))
            if k is not None:
                snaps[k, lo:hi] = y
        terminal[lo:hi] = y
        hit_time[lo:hi] = ht
        killed[lo:hi] = ~alive
    return PathEnsemble(t, float(y0), terminal, hit_time, killed, cfg.seed, cfg, params, snap_t, snaps)


def estimate_density(ensemble: PathEnsemble, cell: tuple[float, float], params: SpaceParams,
                     time: float | None = None) -> tuple[float, float]:
    """Cell average of p_w(t, y0, .) over [a, b) with its binomial standard error."""
    a, b = cell
    mass = float(weight_integral(a, b, params))
    if not mass > 0:
        raise ValueError("cell has no speed-measure mass")
    if ensemble.n_paths < MIN_REPORTED_PATHS:
        raise ValueError(f"need at least {MIN_REPORTED_PATHS} paths for a reported statistic")
    vals = ensemble.values_at(time)
    inside = (vals >= a) & (vals < b)
    if ensemble.killed.any():
        inside &= ~ensemble.killed
    frac = inside.mean()
    return frac / mass, math.sqrt(frac * (1 - frac) / ensemble.n_paths) / mass


def sample_killed_exterior(x0: GluedPoint, t: float, cfg: MCConfig, params: SpaceParams) -> PathEnsemble:
    """Brownian motion (generator Delta/2) in the exterior of the gluing ball, killed on exit.

    Each step kills with the flat-boundary bridge probability
    exp(-2 a b / dt), a and b being the endpoint distances to the sphere,
    and outright when the endpoint lies inside the ball.  Terminal values
    are radial excesses; killed paths record their kill time as hit time.
    """
    if x0.is_junction:
        raise ValueError("start point must lie off the junction")
    x0.validate(params)
    n = params.side_dim(x0.part)
    if n < 2:
        raise ValueError("killed exterior sampling needs a side of dimension at least 2")
    e = params.side_radius(x0.part)
    ends = _schedule(t, cfg.dt, ())
    terminal = np.empty(cfg.n_paths)
    hit_time = np.full(cfg.n_paths, np.nan)
    killed = np.zeros(cfg.n_paths, dtype=bool)
    positions = np.empty((cfg.n_paths, n))
    for b, lo, hi in _blocks(cfg):
        rng = block_generator(cfg.seed, b)
        m = hi - lo
        pos = np.tile(x0.vec, (m, 1))
        alive = np.ones(m, dtype=bool)
        kt = np.full(m, np.nan)
        prev = 0.0
        for end in ends:
            h = end - prev
            step = math.sqrt(h) * rng.standard_normal((m, n))
            u = rng.random(m)
            new = pos + step
            a = np.linalg.norm(pos, axis=1) - e
            bb = np.linalg.norm(new, axis=1) - e
            with np.errstate(over="ignore", invalid="ignore"):
                cross = (bb <= 0) | (u < np.exp(-2 * np.maximum(a, 0) * np.maximum(bb, 0) / h))
            dead = alive & cross
            kt[dead] = prev + h * np.where(bb[dead] <= 0, a[dead] / (a[dead] - bb[dead]), 0.5)
            alive &= ~cross
            pos = np.where(alive[:, None], new, pos)
            prev = end
        positions[lo:hi] = pos
        terminal[lo:hi] = np.where(alive, np.linalg.norm(pos, axis=1) - e, 0.0)
        hit_time[lo:hi] = kt
        killed[lo:hi] = ~alive
    side_sign = 1.0 if x0.part is Part.SIDE_D else -1.0
    return PathEnsemble(t, side_sign * radial_excess(x0, params), terminal, hit_time, killed,
                        cfg.seed, cfg, params, positions=positions)


ENSEMBLE_COLUMNS = ("path_id", "terminal", "hit_time_or_nan", "killed_flag")
ENSEMBLE_FORMAT_VERSION = 1


def write_ensemble_csv(path, ens: PathEnsemble) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version={ENSEMBLE_FORMAT_VERSION} seed={ens.seed} t={ens.t} y0={ens.y0}\n")
        w = csv.writer(fh)
        w.writerow(ENSEMBLE_COLUMNS)
        for i in range(ens.n_paths):
            w.writerow([i, repr(float(ens.terminal[i])), repr(float(ens.hit_time[i])), int(ens.killed[i])])

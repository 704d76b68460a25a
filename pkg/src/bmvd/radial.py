"""Finite-volume Crank-Nicolson solver for the signed radial process.

The signed radial process lives on the real line: ``y > 0`` is the
d-dimensional part, ``y < 0`` the d'-dimensional part and ``y = 0`` the
junction.  Its generator is ``(1/2) w^{-1} (w u')'`` with the speed weight

    w(y) = omega_d (y + eps)^(d-1)                 for y > 0
    w(y) = p omega_d' (|y| + eps')^(d'-1)          for y < 0

and the jump of ``w`` at 0 produces the skew reflection at the junction.
The discretization is vertex centred: every node carries the ``w``-mass of
its dual cell and neighbours are coupled through interface conductances, so
the weighted generator ``M A`` is a symmetric matrix by construction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.linalg import lapack

from bmvd.space import GluedPoint, Part, SpaceParams, signed_radial


class SolverError(RuntimeError):
    pass


def speed_weight(y, params: SpaceParams):
    y = np.asarray(y, dtype=float)
    pos = params.omega_d * (y + params.eps) ** (params.d - 1) if params.d > 1 else np.ones_like(y)
    if params.d_prime > 1:
        neg = params.p * params.omega_dp * (np.abs(y) + params.eps_prime) ** (params.d_prime - 1)
    else:
        neg = np.full_like(y, params.p)
    return np.where(y >= 0, pos, neg)


def _antiderivative(y, params: SpaceParams):
    """W with W(0) = 0 and W' = w, evaluated side by side in closed form."""
    y = np.asarray(y, dtype=float)
    a = np.maximum(y, 0.0)
    b = np.maximum(-y, 0.0)
    if params.d > 1:
        e, n = params.eps, params.d
        pos = params.omega_d * ((a + e) ** n - e**n) / n
    else:
        pos = a
    if params.d_prime > 1:
        e, n = params.eps_prime, params.d_prime
        neg = params.p * params.omega_dp * ((b + e) ** n - e**n) / n
    else:
        neg = params.p * b
    return pos - neg


def weight_integral(a, b, params: SpaceParams):
    """Closed-form integral of the speed weight over [a, b]."""
    return _antiderivative(b, params) - _antiderivative(a, params)


def _side_spacings(span: float, n: int, grading: str, h_min: float, ratio: float) -> np.ndarray:
    if grading == "uniform":
        return np.full(n, span / n)
    if grading != "geometric":
        raise ValueError(f"unknown grading {grading!r}")
    if h_min * n >= span:
        return np.full(n, span / n)

    def cells(h_max):
        k = max(int(math.ceil(math.log(h_max / h_min) / math.log(ratio))), 0) if h_max > h_min else 0
        k = min(k, n)
        geo = h_min * ratio ** np.arange(k)
        rest = np.full(n - k, h_max)
        return np.concatenate([geo, rest])

    lo, hi = h_min, span
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if cells(mid).sum() > span:
            hi = mid
        else:
            lo = mid
    h = cells(lo)
    return h * (span / h.sum())


@dataclass(frozen=True)
class RadialGrid:
    params: SpaceParams
    nodes: np.ndarray
    masses: np.ndarray
    conductances: np.ndarray
    zero_index: int
    boundary: str = "absorbing"
    meta: dict = field(default_factory=dict)

    @property
    def n_cells(self) -> int:
        return len(self.nodes) - 1

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])

    @property
    def cell_edges(self) -> np.ndarray:
        """Dual-cell boundaries: the node masses are the w-measure between consecutive edges."""
        return np.concatenate([[self.nodes[0]], self.midpoints, [self.nodes[-1]]])

    def nearest_node(self, y: float) -> int:
        return int(np.argmin(np.abs(self.nodes - y)))

    def node_of(self, x: GluedPoint) -> int:
        return self.nearest_node(signed_radial(x, self.params))

    def with_boundary(self, boundary: str) -> "RadialGrid":
        return RadialGrid(self.params, self.nodes, self.masses, self.conductances,
                          self.zero_index, boundary, dict(self.meta))

    def weighted_generator(self) -> np.ndarray:
        """Dense ``M A`` (reflecting form, all nodes); symmetric by construction."""
        n = len(self.nodes)
        half_k = 0.5 * self.conductances
        out = np.zeros((n, n))
        idx = np.arange(n - 1)
        out[idx, idx + 1] = half_k
        out[idx + 1, idx] = half_k
        diag = np.zeros(n)
        diag[:-1] -= half_k
        diag[1:] -= half_k
        out[np.arange(n), np.arange(n)] = diag
        return out


def _grid_from_nodes(params: SpaceParams, nodes: np.ndarray, boundary: str, meta: dict) -> RadialGrid:
    zero = int(np.flatnonzero(nodes == 0.0)[0])
    mids = 0.5 * (nodes[1:] + nodes[:-1])
    edges = np.concatenate([[nodes[0]], mids, [nodes[-1]]])
    masses = weight_integral(edges[:-1], edges[1:], params)
    conductances = speed_weight(mids, params) / np.diff(nodes)
    if np.any(masses <= 0) or np.any(conductances <= 0):
        raise SolverError("degenerate grid: non-positive cell mass or conductance")
    return RadialGrid(params, nodes, masses, conductances, zero, boundary, meta)


def build_grid(params: SpaceParams, R_minus: float, R_plus: float, n_cells: int = 4096,
               grading: str = "geometric", h_min: float = 1e-3, ratio: float = 1.05,
               boundary: str = "absorbing") -> RadialGrid:
    """Grid on [-R_minus, R_plus] with a node at the junction.

    Geometric grading starts at ``h_min`` next to 0 and grows by ``ratio``
    until the cells reach the uniform far-field size.
    """
    if R_minus <= 0 or R_plus <= 0:
        raise ValueError("grid spans must be positive")
    if n_cells < 64:
        raise ValueError("n_cells must be at least 64")
    if boundary not in ("absorbing", "reflecting"):
        raise ValueError(f"unknown boundary {boundary!r}")
    n_plus = int(round(n_cells * R_plus / (R_plus + R_minus)))
    n_plus = min(max(n_plus, 16), n_cells - 16)
    n_minus = n_cells - n_plus
    h_plus = _side_spacings(R_plus, n_plus, grading, h_min, ratio)
    h_minus = _side_spacings(R_minus, n_minus, grading, h_min, ratio)
    right = np.cumsum(h_plus)
    left = -np.cumsum(h_minus)[::-1]
    nodes = np.concatenate([left, [0.0], right])
    meta = {"R_minus": R_minus, "R_plus": R_plus, "n_cells": n_cells, "grading": grading,
            "h_min": h_min, "ratio": ratio}
    return _grid_from_nodes(params, nodes, boundary, meta)


def default_span(t_max: float, reach: float = 0.0) -> float:
    """Span rule: the furthest radius of interest plus eight diffusion lengths."""
    return reach + 8.0 * math.sqrt(t_max)


def refine(grid: RadialGrid) -> RadialGrid:
    """Insert every midpoint: the same geometry with twice the cells."""
    nodes = np.empty(2 * len(grid.nodes) - 1)
    nodes[0::2] = grid.nodes
    nodes[1::2] = grid.midpoints
    meta = dict(grid.meta, n_cells=2 * grid.n_cells, refined=grid.meta.get("refined", 0) + 1)
    return _grid_from_nodes(grid.params, nodes, grid.boundary, meta)


@dataclass
class KernelField:
    t: float
    source: int | None
    u: np.ndarray
    leak: float


@dataclass
class RunResult:
    times: np.ndarray
    fields: list
    step_times: np.ndarray
    probes: np.ndarray | None
    zero_flux: np.ndarray | None
    absorbed_zero: np.ndarray | None
    n_steps: int


class Propagator:
    """Time stepper for ``M du/dt = -L u`` on a fixed grid.

    ``absorb_zero`` pins the junction node to 0 (used for hitting times);
    the end nodes are pinned according to ``grid.boundary``.
    """

    def __init__(self, grid: RadialGrid, absorb_zero: bool = False):
        self.grid = grid
        n = len(grid.nodes)
        fixed = np.zeros(n, dtype=bool)
        if grid.boundary == "absorbing":
            fixed[0] = fixed[-1] = True
        if absorb_zero:
            fixed[grid.zero_index] = True
        self.absorb_zero = absorb_zero
        self.free = np.flatnonzero(~fixed)
        half_k = 0.5 * grid.conductances
        stiff_diag = np.zeros(n)
        stiff_diag[:-1] += half_k
        stiff_diag[1:] += half_k
        f = self.free
        self.m = grid.masses[f]
        self.l_diag = stiff_diag[f]
        adjacent = np.diff(f) == 1
        self.l_off = np.where(adjacent, -half_k[f[:-1]], 0.0)
        self._factors: dict[float, tuple] = {}
        z = grid.zero_index
        if absorb_zero:
            pos = np.searchsorted(f, [z - 1, z + 1])
            self._zero_nbrs = [(int(pos[0]), half_k[z - 1]) if f[pos[0]] == z - 1 else None,
                               (int(pos[1]), half_k[z]) if pos[1] < len(f) and f[pos[1]] == z + 1 else None]

    def _factor(self, a: float, theta: str):
        key = (a, theta)
        fac = self._factors.get(key)
        if fac is None:
            c = a if theta == "cn" else 2 * a
            dl = c * self.l_off.copy()
            d = self.m + c * self.l_diag
            du = dl.copy()
            dl_f, d_f, du_f, du2, ipiv, info = lapack.dgttrf(dl, d, du)
            if info != 0:
                raise SolverError(f"singular tridiagonal system (info={info})")
            fac = (dl_f, d_f, du_f, du2, ipiv)
            if len(self._factors) > 64:
                self._factors.clear()
            self._factors[key] = fac
        return fac

    def _apply_l(self, v: np.ndarray) -> np.ndarray:
        out = self.l_diag * v
        out[:-1] += self.l_off * v[1:]
        out[1:] += self.l_off * v[:-1]
        return out

    def _step(self, v: np.ndarray, dt: float, scheme: str) -> np.ndarray:
        if scheme == "cn":
            rhs = self.m * v - 0.5 * dt * self._apply_l(v)
        else:
            rhs = self.m * v
        dl, d, du, du2, ipiv = self._factor(0.5 * dt, scheme)
        x, info = lapack.dgttrs(dl, d, du, du2, ipiv, rhs)
        if info != 0:
            raise SolverError(f"tridiagonal solve failed (info={info})")
        return x

    def _zero_rate(self, v: np.ndarray) -> float:
        r = 0.0
        for nb in self._zero_nbrs:
            if nb is not None:
                r += nb[1] * v[nb[0]]
        return r

    def run(self, u0: np.ndarray, times, dt0: float | None = None, steps_per_decade: float = 2048,
            probes=(), fixed_dt: float | None = None, startup_steps: int = 4,
            keep_fields: bool = True) -> RunResult:
        """Evolve ``u0`` and return the fields at ``times``.

        By default the step grows with time (doubling whenever it falls
        below ``t ln10 / steps_per_decade`` by a factor of two) starting from
        ``dt0``; ``fixed_dt`` switches to a constant step.  The first step is
        replaced by ``startup_steps`` backward-Euler substeps to damp the
        stiff modes excited by point-mass data.
        """
        times = np.sort(np.atleast_1d(np.asarray(times, dtype=float)))
        if np.any(times < 0):
            raise ValueError("times must be non-negative")
        grid = self.grid
        f = self.free
        v = np.asarray(u0, dtype=float)[f].copy()
        probes = [int(p) for p in probes]
        probe_pos = [int(np.searchsorted(f, p)) if p in set(f.tolist()) else -1 for p in probes]
        growth = math.log(10.0) / steps_per_decade
        if fixed_dt is not None:
            dt = fixed_dt
        elif dt0 is not None:
            dt = dt0
        else:
            first = times[times > 0][0] if np.any(times > 0) else 1.0
            h_min = float(np.min(np.diff(grid.nodes)))
            dt = growth * min(first, h_min**2)
        step_t = [0.0]
        probe_rec = [[v[q] if q >= 0 else 0.0 for q in probe_pos]] if probes else None
        flux_rec = [self._zero_rate(v)] if self.absorb_zero else None
        absorbed = [0.0] if self.absorb_zero else None
        fields = []
        t = 0.0
        n_steps = 0
        started = startup_steps <= 0

        def full(vec):
            out = np.zeros(len(grid.nodes))
            out[f] = vec
            return out

        for t_out in times:
            while t < t_out - 1e-14 * max(t_out, 1.0):
                if fixed_dt is None:
                    while 2 * dt <= growth * t:
                        dt *= 2
                h = min(dt, t_out - t)
                v_old = v
                if not started:
                    sub = h / startup_steps
                    for _ in range(startup_steps):
                        v = self._step(v, sub, "be")
                    started = True
                    rate_avg = self._zero_rate(v) if self.absorb_zero else 0.0
                else:
                    v = self._step(v, h, "cn")
                    if self.absorb_zero:
                        rate_avg = 0.5 * (self._zero_rate(v_old) + self._zero_rate(v))
                t += h
                n_steps += 1
                step_t.append(t)
                if probes:
                    probe_rec.append([v[q] if q >= 0 else 0.0 for q in probe_pos])
                if self.absorb_zero:
                    flux_rec.append(self._zero_rate(v))
                    absorbed.append(absorbed[-1] + h * rate_avg)
            if keep_fields:
                u = full(v)
                fields.append(KernelField(t_out, None, u, 1.0 - float(grid.masses @ u)))
        return RunResult(times, fields, np.array(step_t),
                         np.array(probe_rec) if probes else None,
                         np.array(flux_rec) if self.absorb_zero else None,
                         np.array(absorbed) if self.absorb_zero else None, n_steps)


def point_mass(grid: RadialGrid, j: int) -> np.ndarray:
    """Initial data whose w-weighted mass is a unit point mass at node j."""
    u0 = np.zeros(len(grid.nodes))
    u0[j] = 1.0 / grid.masses[j]
    return u0


def evolve(grid: RadialGrid, initial: np.ndarray, t: float, dt: float | None = None,
           steps_per_decade: float = 2048, fixed_dt: bool = False) -> KernelField:
    """Crank-Nicolson evolution of ``initial`` to time ``t``.

    ``dt`` is the first step of the doubling schedule, or the constant step
    when ``fixed_dt`` is set.
    """
    if dt is not None and dt <= 0:
        raise ValueError("dt must be positive")
    if t == 0:
        u = np.asarray(initial, dtype=float).copy()
        return KernelField(0.0, None, u, 1.0 - float(grid.masses @ u))
    prop = Propagator(grid)
    res = prop.run(initial, [t], dt0=None if fixed_dt else dt,
                   fixed_dt=dt if fixed_dt else None, steps_per_decade=steps_per_decade)
    return res.fields[0]


def kernel_column(grid: RadialGrid, j: int, times, **kw) -> list[KernelField]:
    """p_w(t, ., y_j) at each requested time from a single run."""
    res = Propagator(grid).run(point_mass(grid, j), times, **kw)
    for fld in res.fields:
        fld.source = j
    return res.fields


def kernel(grid: RadialGrid, t: float, i: int, j: int, dt: float | None = None, **kw) -> float:
    """Speed-measure kernel p_w(t, y_i, y_j)."""
    return float(kernel_column(grid, j, [t], dt0=dt, **kw)[0].u[i])


def ondiag_series(grid: RadialGrid, times, **kw) -> np.ndarray:
    """p(t, a*, a*) = p_w(t, 0, 0) on a time grid."""
    fields = kernel_column(grid, grid.zero_index, times, **kw)
    return np.array([fld.u[grid.zero_index] for fld in fields])


@dataclass
class HittingRun:
    start: int
    step_times: np.ndarray
    density: np.ndarray
    cdf: np.ndarray

    def density_at(self, s) -> np.ndarray:
        return np.interp(s, self.step_times, self.density)

    def cdf_at(self, s) -> np.ndarray:
        return np.interp(s, self.step_times, self.cdf)


def hitting_run(grid: RadialGrid, a: int, t_max: float, **kw) -> HittingRun:
    """Hitting law of the junction from node ``a`` with the junction absorbing.

    The density is the probability flux into the junction node; the CDF is
    the time-integrated flux, consistent with the scheme's mass balance.
    """
    if a == grid.zero_index:
        raise ValueError("start node must differ from the junction")
    prop = Propagator(grid, absorb_zero=True)
    res = prop.run(point_mass(grid, a), [t_max], keep_fields=False, **kw)
    return HittingRun(a, res.step_times, res.zero_flux, res.absorbed_zero)


def hitting_density_numeric(grid: RadialGrid, a: int, s_grid, **kw) -> np.ndarray:
    s_grid = np.asarray(s_grid, dtype=float)
    run = hitting_run(grid, a, float(s_grid.max()), **kw)
    return run.density_at(s_grid)


def _conv_grid(t: float, n: int = 2000, s_min_frac: float = 1e-9) -> np.ndarray:
    """Quadrature nodes on [0, t], geometric toward both ends."""
    half = np.geomspace(s_min_frac * t, 0.5 * t, n // 2)
    s = np.concatenate([[0.0], half, t - half[::-1], [t]])
    return np.unique(s)


def bar_kernel_from_series(t: float, hit: HittingRun, tau: np.ndarray, p0y: np.ndarray,
                           n_quad: int = 2000) -> float:
    """Trapezoid rule for int_0^t p_w(t - s, 0, y) h(s) ds."""
    s = _conv_grid(t, n_quad)
    h = hit.density_at(s)
    p = np.interp(t - s, tau, p0y)
    return float(integrate.trapezoid(h * p, s))


def same_part_kernel_bar(grid: RadialGrid, t: float, x: GluedPoint, y: GluedPoint,
                         dt: float | None = None, n_quad: int = 2000, **kw) -> float:
    """Through-junction part of the same-part kernel, p_bar(t, x, y).

    p_bar is the convolution of the hitting density of the junction from x
    with the kernel started at the junction and read at |y|_rho.
    """
    params = grid.params
    if x.is_junction and y.is_junction:
        return kernel(grid, t, grid.zero_index, grid.zero_index, dt=dt, **kw)
    if not (x.is_junction or y.is_junction) and x.part is not y.part:
        raise ValueError("p_bar is defined for points on the same part")
    if x.is_junction:
        x, y = y, x
    i, j = grid.node_of(x), grid.node_of(y)
    col = Propagator(grid).run(point_mass(grid, grid.zero_index), [t], dt0=dt, probes=[j],
                               keep_fields=False, **kw)
    hit = hitting_run(grid, i, t, dt0=dt, **kw)
    if np.max(np.diff(hit.step_times)) > t / 8:
        warnings.warn("hitting density under-resolved relative to the convolution window")
    return bar_kernel_from_series(t, hit, col.step_times, col.probes[:, 0], n_quad)


def bar_kernel_by_difference(grid: RadialGrid, t: float, i: int, j: int, **kw) -> float:
    """p_bar as the full radial kernel minus the kernel killed at the junction."""
    full = kernel_column(grid, j, [t], **kw)[0].u[i]
    killed = Propagator(grid, absorb_zero=True).run(point_mass(grid, j), [t], **kw).fields[0].u[i]
    return float(full - killed)


def field_table(grid: RadialGrid, fld: KernelField) -> np.ndarray:
    """Columns (y_i, M_i, u_i) for CSV export."""
    return np.column_stack([grid.nodes, grid.masses, fld.u])

import csv
import math

import numpy as np
import pytest
from scipy import stats

from bmvd import montecarlo as mc
from bmvd.montecarlo import MCConfig, block_generator, estimate_density, sample_killed_exterior, sample_paths
from bmvd.radial import build_grid, default_span, hitting_run
from bmvd.space import GluedPoint, Part, SpaceParams

from oracles import gaussian_kernel, hit_cdf_3d, skew_bm_cdf

D, DP = Part.SIDE_D, Part.SIDE_D_PRIME


def ks_pvalue(sample, cdf):
    return stats.kstest(sample, cdf).pvalue


def test_config_validation():
    with pytest.raises(ValueError):
        MCConfig(dt=0.0)
    with pytest.raises(ValueError):
        MCConfig(n_paths=0)
    with pytest.raises(ValueError):
        MCConfig(dt=1e-2, band=0.1)
    with pytest.raises(ValueError):
        MCConfig(scheme="euler")
    assert MCConfig(dt=1e-2).delta == pytest.approx(0.4)


def test_reproducible_and_block_prefix_stable():
    params = SpaceParams(3, 2, p=2.0)
    cfg = MCConfig(n_paths=3000, dt=0.01, seed=11, block_size=1000)
    a = sample_paths(0.3, 0.5, cfg, params)
    b = sample_paths(0.3, 0.5, cfg, params)
    assert np.array_equal(a.terminal, b.terminal)
    assert np.array_equal(a.hit_time, b.hit_time, equal_nan=True)
    short = sample_paths(0.3, 0.5, MCConfig(n_paths=2000, dt=0.01, seed=11, block_size=1000), params)
    assert np.array_equal(short.terminal, a.terminal[:2000])
    other = sample_paths(0.3, 0.5, MCConfig(n_paths=3000, dt=0.01, seed=12, block_size=1000), params)
    assert not np.array_equal(other.terminal, a.terminal)


@pytest.mark.parametrize("params", [SpaceParams(3, 2, p=0.3), SpaceParams(3, 1, p=4 * math.pi),
                                    SpaceParams(2, 2, eps=0.5, p=5.0)])
def test_junction_sign_law(params):
    n = 100_000
    z, hit, _ = mc.step_radial(np.zeros(n), 1e-4, params, block_generator(5, 0))
    assert hit.all()
    q = 0.5 * (1 + params.beta)
    frac = (z > 0).mean()
    assert abs(frac - q) <= 3 * math.sqrt(q * (1 - q) / n)


def test_degenerate_skew_never_goes_negative():
    params = SpaceParams(3, 3, p=1e-12)
    assert params.beta > 1 - 1e-10
    z, _, _ = mc.step_radial(np.zeros(100_000), 1e-3, params, block_generator(1, 0))
    assert (z < 0).sum() == 0


def test_one_step_law_is_exact_skew_bm():
    params = SpaceParams(1, 1, p=2.5)
    dt = 0.04
    for y0 in (0.0, 0.1, -0.15):
        z, _, _ = mc.step_radial(np.full(50_000, y0), dt, params, block_generator(3, 0))
        # sign convention: the d'-side carries negative signed radius
        assert ks_pvalue(z, lambda v: skew_bm_cdf(dt, y0, v, params.beta)) > 0.01


def test_multi_step_law_is_exact_skew_bm():
    params = SpaceParams(1, 1, p=0.4)
    ens = sample_paths(0.3, 1.0, MCConfig(n_paths=20_000, dt=0.01, seed=9), params)
    assert ks_pvalue(ens.terminal, lambda v: skew_bm_cdf(1.0, 0.3, v, params.beta)) > 0.01


def test_neutral_line_is_gaussian():
    params = SpaceParams(1, 1, p=1.0)
    ens = sample_paths(0.5, 1.0, MCConfig(n_paths=20_000, dt=0.01, seed=2), params)
    assert ks_pvalue(ens.terminal, stats.norm(0.5, 1.0).cdf) > 0.01


def test_small_time_concentration():
    params = SpaceParams(3, 2)
    t = 1e-3
    ens = sample_paths(2.0, t, MCConfig(n_paths=10_000, dt=1e-4, seed=4), params)
    assert ens.terminal.var() <= 2 * t
    with pytest.raises(ValueError):
        sample_paths(2.0, 0.0, MCConfig(), params)
    with pytest.raises(ValueError):
        sample_paths(2.0, 1.0, MCConfig(n_paths=1000), params, snapshots=[2.0])


def test_drift_is_bounded():
    params = SpaceParams(4, 3, eps=0.5, eps_prime=0.2)
    mags = np.linspace(0, 50, 101)
    assert np.all(mc.side_drift(np.ones(101), mags, params) <= 3 / (2 * 0.5))
    assert np.all(mc.side_drift(-np.ones(101), mags, params) <= 2 / (2 * 0.2))


def test_density_estimates():
    params = SpaceParams(1, 1, p=1.0)
    ens = sample_paths(0.0, 1.0, MCConfig(n_paths=40_000, dt=0.01, seed=21), params, snapshots=[0.5])
    edges = np.linspace(-6, 6, 25)
    total = 0.0
    bad = 0
    for a, b in zip(edges[:-1], edges[1:]):
        est, se = estimate_density(ens, (a, b), params)
        total += est * (b - a)
        exact = stats.norm.cdf(b) - stats.norm.cdf(a)
        # binomial error under the exact law, so empty tail cells are judged fairly
        se_exact = math.sqrt(exact * (1 - exact) / ens.n_paths)
        bad += abs(est * (b - a) - exact) > 3 * se_exact
    assert total <= 1 + 1e-12
    assert bad <= 1
    est, se = estimate_density(ens, (-0.25, 0.25), params, time=0.5)
    exact = (stats.norm.cdf(0.25 / math.sqrt(0.5)) - stats.norm.cdf(-0.25 / math.sqrt(0.5))) / 0.5
    assert abs(est - exact) <= 3 * se
    with pytest.raises(ValueError):
        estimate_density(ens, (0.3, 0.3), params)
    with pytest.raises(ValueError):
        ens.values_at(0.7)
    small = sample_paths(0.0, 0.1, MCConfig(n_paths=500, dt=0.01), params)
    with pytest.raises(ValueError):
        estimate_density(small, (0, 1), params)


def test_killed_exterior_far_start_survives():
    params = SpaceParams(3, 3)
    x0 = GluedPoint.at_radius(D, 10.0, params)
    ens = sample_killed_exterior(x0, 1.0, MCConfig(n_paths=5000, dt=0.01, seed=3), params)
    assert ens.n_surviving / ens.n_paths >= 0.999
    assert ens.n_killed + ens.n_surviving == ens.n_paths
    with pytest.raises(ValueError):
        sample_killed_exterior(GluedPoint.junction(), 1.0, MCConfig(), params)
    q = SpaceParams(3, 1)
    with pytest.raises(ValueError):
        sample_killed_exterior(GluedPoint.on_side(DP, (1.0,)), 1.0, MCConfig(), q)


def test_killed_exterior_matches_radial_hitting():
    params = SpaceParams(3, 3)
    t = 1.0
    x0 = GluedPoint.at_radius(D, 1.0, params)  # |x| = 2
    kex = sample_killed_exterior(x0, t, MCConfig(n_paths=20_000, dt=2e-3, seed=8), params)
    rad = sample_paths(1.0, t, MCConfig(n_paths=20_000, dt=2e-3, seed=18), params, stop_at_hit=True)
    pk = kex.n_killed / kex.n_paths
    pr = rad.n_killed / rad.n_paths
    se = math.sqrt(pk * (1 - pk) / kex.n_paths + pr * (1 - pr) / rad.n_paths)
    assert abs(pk - pr) <= 3 * se
    exact = float(hit_cdf_3d(t, 2.0, 1.0))
    assert abs(pk - exact) <= 3 * math.sqrt(exact * (1 - exact) / kex.n_paths)
    frac, fse = rad.hit_cdf(t)
    assert frac[0] == pytest.approx(pr)


def test_radial_hitting_matches_pde_and_oracle():
    params = SpaceParams(3, 3)
    span = default_span(10.0, 4.0)
    g = build_grid(params, span, span, n_cells=4096)
    a = g.nearest_node(1.0)
    run = hitting_run(g, a, 10.0)
    ens = sample_paths(float(g.nodes[a]), 10.0, MCConfig(n_paths=20_000, dt=0.01, seed=33), params,
                       stop_at_hit=True)
    s = np.array([1.0, 2.0, 5.0, 10.0])
    frac, se = ens.hit_cdf(s)
    assert np.all(np.abs(frac - run.cdf_at(s)) <= 3 * se)
    assert np.all(np.abs(frac - hit_cdf_3d(s, 1.0 + g.nodes[a], 1.0)) <= 3 * se)


def test_dt_halving_is_within_two_standard_errors():
    params = SpaceParams(3, 2, p=1.5)
    probs = []
    for dt in (0.02, 0.01):
        ens = sample_paths(0.8, 2.0, MCConfig(n_paths=20_000, dt=dt, seed=77), params)
        frac, se = ens.hit_cdf([0.5, 2.0])
        side = (ens.terminal > 0).mean()
        probs.append((frac, se, side))
    (f1, s1, p1), (f2, s2, p2) = probs
    assert np.all(np.abs(f1 - f2) <= 2 * np.sqrt(s1**2 + s2**2))
    sp = math.sqrt(p1 * (1 - p1) / 20_000 + p2 * (1 - p2) / 20_000)
    assert abs(p1 - p2) <= 2 * sp


def test_hitting_probability_matches_decay_shape():
    # P(sigma <= t) |x|^{d-2} exp(|x|_rho^2 / t) stays bounded for t in {2, 10, 100}
    params = SpaceParams(3, 3)
    ens = sample_paths(1.0, 100.0, MCConfig(n_paths=5000, dt=0.02, seed=5), params, stop_at_hit=True)
    ts = np.array([2.0, 10.0, 100.0])
    frac, se = ens.hit_cdf(ts)
    scaled = frac * 2.0 * np.exp(1.0 / ts)
    assert np.all(scaled > 0.3) and np.all(scaled < 3.0)
    assert scaled.max() / scaled.min() < 3.0


def test_csv_export(tmp_path):
    params = SpaceParams(3, 2)
    ens = sample_paths(0.2, 0.1, MCConfig(n_paths=1000, dt=0.01, seed=1), params, stop_at_hit=True)
    path = tmp_path / "ens.csv"
    mc.write_ensemble_csv(path, ens)
    with open(path) as fh:
        head = fh.readline()
        rows = list(csv.DictReader(fh))
    assert head.startswith(f"# format_version={mc.ENSEMBLE_FORMAT_VERSION}")
    assert tuple(rows[0]) == mc.ENSEMBLE_COLUMNS
    assert len(rows) == 1000
    assert sum(int(r["killed_flag"]) for r in rows) == ens.n_killed
    assert gaussian_kernel(1.0, 0.0, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))

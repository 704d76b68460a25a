"""Campaign configuration files (INI ``key = value`` sections)."""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from bmvd.space import SpaceParams

# desk-scale caps
MAX_N_PATHS = 2_000_000
MAX_N_CELLS = 65_536
MAX_TIMES = 512

ENV_SEED = "BMVD_SEED"
ENV_N_PATHS = "BMVD_N_PATHS"


class ConfigError(ValueError):
    pass


@dataclass
class CampaignConfig:
    params: SpaceParams
    experiment: str = "sandwich"
    theorem: str = ""
    times: np.ndarray = field(default_factory=lambda: np.geomspace(64.0, 1e4, 32))
    radii: tuple = (0.1, 0.5, 1.0, 2.0, 4.0, 8.0)
    sqrt_t_radii: tuple = (0.5, 1.0, 2.0)
    angles: tuple = (0.0, 0.5 * np.pi, np.pi)
    e_lower: float = 2.0
    e_upper: float = 0.5
    relax: float = 0.10
    uniformity: float = 4.0
    max_exponent: float = 25.0
    slope_tol: float | None = None
    band_max: float = 6.0
    n_checks: int = 20
    n_cells: int = 4096
    steps_per_decade: float = 2048
    h_min: float = 1e-3
    n_paths: int = 100_000
    mc_dt: float = 1e-3
    seed: int = 20240601
    out_dir: str = "out"
    source_hash: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size == 0:
            raise ConfigError("time grid is empty")
        if np.any(np.diff(self.times) <= 0) or np.any(self.times <= 0):
            raise ConfigError("times must be positive and strictly increasing")
        if self.times.size > MAX_TIMES:
            raise ConfigError(f"at most {MAX_TIMES} times")
        if not self.radii:
            raise ConfigError("radius grid is empty")
        if not (64 <= self.n_cells <= MAX_N_CELLS):
            raise ConfigError(f"n_cells must lie in [64, {MAX_N_CELLS}]")
        if not (0 < self.n_paths <= MAX_N_PATHS):
            raise ConfigError(f"n_paths must lie in (0, {MAX_N_PATHS}]")

    def echo(self) -> dict:
        return {"params": self.params.to_dict(), "experiment": self.experiment, "theorem": self.theorem,
                "times": [float(t) for t in self.times], "radii": list(self.radii),
                "sqrt_t_radii": list(self.sqrt_t_radii), "angles": [float(a) for a in self.angles],
                "e_lower": self.e_lower, "e_upper": self.e_upper, "relax": self.relax,
                "uniformity": self.uniformity, "max_exponent": self.max_exponent,
                "slope_tol": self.slope_tol, "band_max": self.band_max, "n_checks": self.n_checks,
                "n_cells": self.n_cells, "steps_per_decade": self.steps_per_decade, "h_min": self.h_min,
                "n_paths": self.n_paths, "mc_dt": self.mc_dt, "seed": self.seed}


def content_hash(data: bytes) -> str:
    """Git blob id of the bytes."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def parse_times(text: str) -> np.ndarray:
    """Either an explicit list or ``logspace <lo> <hi> <n>``."""
    words = text.split()
    if words and words[0] == "logspace":
        if len(words) != 4:
            raise ConfigError("logspace needs lo, hi and n")
        return np.geomspace(float(words[1]), float(words[2]), int(words[3]))
    return np.asarray(_floats(text))


def parse_config(text: str, env=None) -> CampaignConfig:
    env = os.environ if env is None else env
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if not cp.has_section("params"):
        raise ConfigError("missing [params] section")
    pr = cp["params"]
    try:
        params = SpaceParams(pr.getint("d"), pr.getint("d_prime"), pr.getfloat("eps", 1.0),
                             pr.getfloat("eps_prime", 1.0), pr.getfloat("p", 1.0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [params]: {exc}") from exc
    kw = {}
    if cp.has_section("campaign"):
        c = cp["campaign"]
        kw["experiment"] = c.get("id", "sandwich")
        kw["theorem"] = c.get("theorem", "")
    if cp.has_section("grid"):
        g = cp["grid"]
        if "times" in g:
            kw["times"] = parse_times(g["times"])
        if "radii" in g:
            kw["radii"] = _floats(g["radii"])
        if "sqrt_t_radii" in g:
            kw["sqrt_t_radii"] = _floats(g["sqrt_t_radii"])
        if "angles" in g:
            kw["angles"] = _floats(g["angles"])
    if cp.has_section("tolerances"):
        tl = cp["tolerances"]
        for key in ("e_lower", "e_upper", "relax", "uniformity", "max_exponent", "slope_tol", "band_max"):
            if key in tl:
                kw[key] = tl.getfloat(key)
        if "n_checks" in tl:
            kw["n_checks"] = tl.getint("n_checks")
    if cp.has_section("solver"):
        s = cp["solver"]
        if "n_cells" in s:
            kw["n_cells"] = s.getint("n_cells")
        for key in ("steps_per_decade", "h_min"):
            if key in s:
                kw[key] = s.getfloat(key)
    if cp.has_section("mc"):
        m = cp["mc"]
        if "n_paths" in m:
            kw["n_paths"] = m.getint("n_paths")
        if "dt" in m:
            kw["mc_dt"] = m.getfloat("dt")
        if "seed" in m:
            kw["seed"] = m.getint("seed")
    if cp.has_section("output") and "dir" in cp["output"]:
        kw["out_dir"] = cp["output"]["dir"]
    # only seed and budget may come from the environment
    if env.get(ENV_SEED):
        kw["seed"] = int(env[ENV_SEED])
    if env.get(ENV_N_PATHS):
        kw["n_paths"] = int(env[ENV_N_PATHS])
    cfg = CampaignConfig(params=params, **kw)
    cfg.source_hash = content_hash(text.encode())
    return cfg


def load_config(path, env=None) -> CampaignConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, env)


def with_overrides(cfg: CampaignConfig, **kw) -> CampaignConfig:
    return replace(cfg, **kw)

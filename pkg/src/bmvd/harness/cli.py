"""Command line entry point: ``bmvd <campaign> --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from bmvd.harness import campaigns
from bmvd.harness.config import CampaignConfig, ConfigError, load_config
from bmvd.space import SpaceParams

log = logging.getLogger("bmvd")

COMMANDS = ("ondiag", "sandwich", "hitting", "consistency", "vd-check", "mc-vs-pde")


def _defaults(command: str, theorem: str | None) -> CampaignConfig:
    """Built-in configuration used when --config is omitted."""
    if command == "sandwich":
        return campaigns.default_config(theorem or "large-d-dp")
    if command == "ondiag":
        return CampaignConfig(SpaceParams(3, 3), experiment="ondiag", times=np.geomspace(1e2, 1e4, 32))
    if command == "hitting":
        return CampaignConfig(SpaceParams(3, 3), experiment="hitting", radii=(1.0, 2.0, 4.0),
                              times=np.array([2.0, 10.0, 100.0]), n_paths=20_000, mc_dt=1e-2)
    if command == "consistency":
        return CampaignConfig(SpaceParams(3, 1), experiment="consistency")
    if command == "vd-check":
        return CampaignConfig(SpaceParams(3, 1), experiment="vd-check")
    return CampaignConfig(SpaceParams(3, 1), experiment="mc-vs-pde", times=np.array([0.25, 0.5, 1.0]))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bmvd", description="Heat-kernel verification campaigns.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI file with [params], [grid], [tolerances], [solver], [mc] sections")
        sp.add_argument("--out", help="output directory (default: [output] dir of the config)")
        if name == "sandwich":
            sp.add_argument("--theorem", help="estimate family, optionally with cases, e.g. large-2-2:ii")
    return ap


def run(command: str, cfg: CampaignConfig, out_dir, theorem=None) -> dict:
    if command == "ondiag":
        return campaigns.ondiag_campaign(cfg, out_dir)
    if command == "sandwich":
        return campaigns.sandwich_campaign(cfg, theorem or cfg.theorem, out_dir)
    if command == "hitting":
        return campaigns.hitting_campaign(cfg, out_dir)
    if command == "consistency":
        return campaigns.consistency_campaign(cfg, out_dir)
    if command == "vd-check":
        return campaigns.vd_check_campaign(cfg, out_dir)
    if command == "mc-vs-pde":
        return campaigns.mc_vs_pde_campaign(cfg, out_dir)
    raise ValueError(command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    theorem = getattr(args, "theorem", None)
    try:
        cfg = load_config(args.config) if args.config else _defaults(args.command, theorem)
        out = args.out or cfg.out_dir
        log.info("running %s into %s", args.command, out)
        summary = run(args.command, cfg, out, theorem)
    except ConfigError as exc:
        print(f"bmvd: config error: {exc}", file=sys.stderr)
        return 2
    summary.pop("_reports", None)
    brief = {k: summary[k] for k in ("campaign", "passed", "runtime_s") if k in summary}
    print(json.dumps(campaigns._jsonable(brief)))
    return 0 if summary.get("passed") else 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: validate / train / infer / sweep / ablate-lstm /
plot, JSON config in, CSV/SVG/summary out."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import (Topology, desk_config, paper_scale_config,
                     validate_config)
from .harness import Campaign, load_campaign_file, run_campaign, sweep_plots


def _load(args) -> tuple:
    if args.config:
        cfg, topo, campaign = load_campaign_file(args.config)
    else:
        cfg = paper_scale_config() if args.paper_scale else desk_config()
        topo = Topology.full(cfg.n_agents)
        campaign = Campaign()
    if args.config and args.paper_scale:
        base = paper_scale_config()
        cfg = replace(cfg, n_agents=base.n_agents, horizon=base.horizon,
                      size_set=base.size_set)
        topo = Topology.full(cfg.n_agents)
    if args.seed is not None:
        campaign = replace(campaign, seeds=[args.seed])
        cfg = replace(cfg, rng_seed=args.seed)
    if args.policy:
        campaign = replace(campaign, policies=list(args.policy))
    if args.out:
        campaign = replace(campaign, out_dir=args.out)
    return cfg, topo, campaign


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override: use this single seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--policy", action="append",
                   help="policy name (repeatable): rp lop coo eeo rro mleo "
                        "learned learned-delay learned-energy")
    p.add_argument("--paper-scale", action="store_true",
                   help="use the full-size parameterization (20 agents)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgesim",
        description="Edge-cloud placement simulator and experiment runner")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, help_text in (
            ("validate", "check a config against all invariants"),
            ("train", "train the learned placement agents"),
            ("infer", "evaluate policies at a fixed operating point"),
            ("sweep", "evaluate policies across a parameter sweep"),
            ("ablate-lstm", "compare load-forecasting variants"),
            ("plot", "render SVG charts from a metrics CSV")):
        p = sub.add_parser(verb, help=help_text)
        _add_common(p)
        if verb == "plot":
            p.add_argument("--csv", required=True, help="metrics CSV to plot")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, topo, campaign = _load(args)
        if args.verb == "validate":
            errs = validate_config(cfg, topo) + campaign.validate()
            if errs:
                for e in errs:
                    print(f"invalid: {e}", file=sys.stderr)
                return 1
            print("config ok")
            return 0
        if args.verb == "plot":
            for path in sweep_plots(args.csv, campaign.out_dir):
                print(f"wrote {path}")
            return 0
        campaign = replace(campaign, mode=args.verb)
        for path in run_campaign(cfg, topo, campaign):
            print(f"wrote {path}")
        return 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Campaign orchestration: training runs, inference evaluations, parameter
sweeps and the forecasting ablation, with CSV/summary/SVG emission.

A campaign is described by the same JSON document as the system config,
plus an optional "campaign" section (mode, policies, sweep axis/values,
episode counts, seeds, output directory).
"""
from __future__ import annotations

import csv
import json
import os
import statistics
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .agent import LearnedPolicy, MultiAgentTrainer, TrainingParams
from .config import (Path, Status, SystemConfig, Topology, Weights,
                     config_from_dict, validate_config)
from .env import ContinuumEnv, drain, run_episode
from .policies import POLICY_NAMES, make_policy

CSV_HEADER = ("policy,sweep_axis,sweep_value,seed,mean_delay_s,drop_rate_pct,"
              "total_energy_j,frac_local,frac_horizontal,frac_vertical")

SWEEP_AXES = ("arrival_prob", "n_agents", "cpu", "timeout", "rate_h", "weights")

# learned-policy variants understood next to the rule-based baselines:
#   "learned"        cost weights from the config (w_d = w_e = 0.5 default)
#   "learned-delay"  delay-only cost (w_d=1, w_e=0)
#   "learned-energy" energy-only cost (w_d=0, w_e=1)
LEARNED_NAMES = ("learned", "learned-delay", "learned-energy")


@dataclass
class Campaign:
    mode: str = "sweep"
    policies: Sequence[str] = POLICY_NAMES
    sweep_axis: str = "arrival_prob"
    sweep_values: Sequence[float] = (0.1, 0.5, 0.9)
    episodes: int = 20            # inference episodes per cell
    train_episodes: int = 300
    seeds: Sequence[int] = (0, 1, 2, 3, 4)
    out_dir: str = "out"

    def validate(self) -> List[str]:
        errs = []
        if self.mode not in ("train", "infer", "sweep", "ablate-lstm"):
            errs.append(f"unknown mode '{self.mode}'")
        if self.sweep_axis not in SWEEP_AXES:
            errs.append(f"unknown sweep axis '{self.sweep_axis}'")
        vals = list(self.sweep_values)
        if not vals or any(not np.isfinite(v) for v in vals):
            errs.append("sweep values must be finite and non-empty")
        elif vals != sorted(vals):
            errs.append("sweep values must be ordered")
        if len(set(self.seeds)) != len(list(self.seeds)):
            errs.append("seeds must be distinct")
        for p in self.policies:
            if p not in POLICY_NAMES and p not in LEARNED_NAMES:
                errs.append(f"unknown policy '{p}'")
        return errs


@dataclass
class MetricsRow:
    policy: str
    sweep_axis: str
    sweep_value: float
    seed: int
    mean_delay_s: float
    drop_rate_pct: float
    total_energy_j: float
    frac_local: float
    frac_horizontal: float
    frac_vertical: float

    def csv_line(self) -> str:
        return (f"{self.policy},{self.sweep_axis},{self.sweep_value:g},"
                f"{self.seed},{self.mean_delay_s:.6f},{self.drop_rate_pct:.6f},"
                f"{self.total_energy_j:.6f},{self.frac_local:.6f},"
                f"{self.frac_horizontal:.6f},{self.frac_vertical:.6f}")


# -- sweep application -------------------------------------------------------

def apply_sweep(cfg: SystemConfig, topo: Topology, axis: str, value) -> tuple:
    """New (config, topology) with one swept parameter."""
    if axis == "arrival_prob":
        return replace(cfg, arrival_prob=float(value)), topo
    if axis == "n_agents":
        n = int(value)
        return replace(cfg, n_agents=n), Topology.full(n)
    if axis == "cpu":
        return replace(cfg, cpu_private=float(value), cpu_public_edge=float(value)), topo
    if axis == "timeout":
        return replace(cfg, timeout=int(value)), topo
    if axis == "rate_h":
        return replace(cfg, rate_horizontal=float(value)), topo
    if axis == "weights":
        w_d = float(value)
        return replace(cfg, weights=Weights(w_d=w_d, w_e=1.0 - w_d)), topo
    raise ValueError(f"unknown sweep axis '{axis}'")


# -- evaluation --------------------------------------------------------------

class _CountingPolicy:
    """Wraps any policy to tally decision path fractions."""

    def __init__(self, inner, cfg: SystemConfig):
        self.inner = inner
        self.cloud = cfg.cloud
        self.counts = {"local": 0, "horizontal": 0, "vertical": 0}

    def decide(self, ea, w, env, t):
        d = self.inner.decide(ea, w, env, t)
        if d.local_flag:
            self.counts["local"] += 1
        elif d.destination == self.cloud:
            self.counts["vertical"] += 1
        else:
            self.counts["horizontal"] += 1
        return d


def evaluate_policy(policy, name: str, cfg: SystemConfig, topo: Topology,
                    seed: int, episodes: int, sweep_axis: str = "none",
                    sweep_value: float = 0.0) -> MetricsRow:
    """Run `episodes` inference episodes and aggregate the section-level
    metrics: mean processed delay, drop percentage, per-episode energy."""
    counter = _CountingPolicy(policy, cfg)
    env = ContinuumEnv(cfg, topo, seed=seed)
    delays: List[int] = []
    resolved_total = 0
    dropped_total = 0
    energy_total = 0.0
    for ep in range(episodes):
        env.reset(seed=seed * 9176 + 31 * ep + 1)
        if hasattr(policy, "reset"):
            policy.reset()
        run_episode(env, counter.decide)
        drain(env)   # resolve late arrivals so the metrics cover everything
        for o in env.outcomes.values():
            resolved_total += 1
            energy_total += o.total_energy_j
            if o.status is Status.DROPPED:
                dropped_total += 1
            else:
                delays.append(o.total_delay_slots)
    decided = max(1, sum(counter.counts.values()))
    return MetricsRow(
        policy=name, sweep_axis=sweep_axis, sweep_value=float(sweep_value),
        seed=seed,
        mean_delay_s=(float(np.mean(delays)) * cfg.slot_duration) if delays else 0.0,
        drop_rate_pct=100.0 * dropped_total / max(1, resolved_total),
        total_energy_j=energy_total / max(1, episodes),
        frac_local=counter.counts["local"] / decided,
        frac_horizontal=counter.counts["horizontal"] / decided,
        frac_vertical=counter.counts["vertical"] / decided,
    )


def train_learned(cfg: SystemConfig, topo: Topology, seed: int,
                  episodes: int, weights: Optional[Weights] = None,
                  forecaster: str = "lstm", **param_overrides):
    """Train one multi-agent learner and return (trainer, result)."""
    if weights is not None:
        cfg = replace(cfg, weights=weights)
    params = TrainingParams(episodes=episodes, seed=seed,
                            forecaster=forecaster, **param_overrides)
    trainer = MultiAgentTrainer(cfg, topo, params)
    result = trainer.train()
    return trainer, result


def _learned_weights(name: str, cfg: SystemConfig) -> Weights:
    if name == "learned-delay":
        return Weights(w_d=1.0, w_e=0.0)
    if name == "learned-energy":
        return Weights(w_d=0.0, w_e=1.0)
    return cfg.weights


def build_policy(name: str, cfg: SystemConfig, topo: Topology, seed: int,
                 train_episodes: int = 300, forecaster: str = "lstm"):
    """Instantiate a baseline by name, or train a learned variant."""
    if name in POLICY_NAMES:
        return make_policy(name, np.random.default_rng(seed * 613 + 7))
    if name in LEARNED_NAMES:
        trainer, _ = train_learned(cfg, topo, seed, train_episodes,
                                   weights=_learned_weights(name, cfg),
                                   forecaster=forecaster)
        return LearnedPolicy(trainer)
    raise ValueError(f"unknown policy '{name}'")


# -- campaign driver ---------------------------------------------------------

def _write_rows(path: str, rows: List[MetricsRow]) -> None:
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in rows:
            fh.write(r.csv_line() + "\n")


def _write_summary(path: str, rows: List[MetricsRow]) -> None:
    groups: Dict[tuple, List[MetricsRow]] = {}
    for r in rows:
        groups.setdefault((r.policy, r.sweep_value), []).append(r)
    lines = ["policy  sweep_value  metric  mean  std"]
    for (policy, value), rs in groups.items():
        for metric in ("mean_delay_s", "drop_rate_pct", "total_energy_j"):
            vals = [getattr(r, metric) for r in rs]
            mean = statistics.fmean(vals)
            std = statistics.pstdev(vals) if len(vals) > 1 else 0.0
            lines.append(f"{policy}  {value:g}  {metric}  {mean:.6f} ± {std:.6f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_curve(path: str, result) -> None:
    with open(path, "w") as fh:
        fh.write("episode,mean_cost,epsilon,buffer_fill\n")
        for i, (c, e, f) in enumerate(zip(result.episode_cost, result.epsilons,
                                          result.buffer_fill), start=1):
            fh.write(f"{i},{c:.6f},{e:.6f},{f}\n")


def run_campaign(cfg: SystemConfig, topo: Topology, campaign: Campaign) -> List[str]:
    """Execute a campaign; returns the list of files written."""
    errs = validate_config(cfg, topo) + campaign.validate()
    if errs:
        raise ValueError("; ".join(errs))
    os.makedirs(campaign.out_dir, exist_ok=True)
    written: List[str] = []
    rows: List[MetricsRow] = []

    if campaign.mode == "train":
        for seed in campaign.seeds:
            trainer, result = train_learned(cfg, topo, seed, campaign.train_episodes)
            curve = os.path.join(campaign.out_dir, f"training_curve_seed{seed}.csv")
            _write_curve(curve, result)
            written.append(curve)
        return written

    if campaign.mode == "infer":
        for name in campaign.policies:
            for seed in campaign.seeds:
                policy = build_policy(name, cfg, topo, seed,
                                      train_episodes=campaign.train_episodes)
                rows.append(evaluate_policy(policy, name, cfg, topo, seed,
                                            campaign.episodes,
                                            sweep_axis=campaign.sweep_axis,
                                            sweep_value=cfg.arrival_prob))

    elif campaign.mode == "sweep":
        for value in campaign.sweep_values:
            c2, t2 = apply_sweep(cfg, topo, campaign.sweep_axis, value)
            for name in campaign.policies:
                for seed in campaign.seeds:
                    policy = build_policy(name, c2, t2, seed,
                                          train_episodes=campaign.train_episodes)
                    rows.append(evaluate_policy(policy, name, c2, t2, seed,
                                                campaign.episodes,
                                                sweep_axis=campaign.sweep_axis,
                                                sweep_value=value))

    elif campaign.mode == "ablate-lstm":
        for fc, label in (("lstm", "learned+forecast"),
                          ("none", "learned-noforecast"),
                          ("peek", "learned+oracle")):
            for seed in campaign.seeds:
                trainer, _ = train_learned(cfg, topo, seed,
                                           campaign.train_episodes, forecaster=fc)
                policy = LearnedPolicy(trainer)
                rows.append(evaluate_policy(policy, label, cfg, topo, seed,
                                            campaign.episodes,
                                            sweep_axis="arrival_prob",
                                            sweep_value=cfg.arrival_prob))

    metrics = os.path.join(campaign.out_dir, "metrics.csv")
    summary = os.path.join(campaign.out_dir, "summary.txt")
    _write_rows(metrics, rows)
    _write_summary(summary, rows)
    return written + [metrics, summary]


# -- plotting ----------------------------------------------------------------

_METRIC_LABELS = {
    "mean_delay_s": "mean processing delay (s)",
    "drop_rate_pct": "drop rate (%)",
    "total_energy_j": "energy per episode (J)",
}


def sweep_plots(csv_path: str, out_dir: str) -> List[str]:
    """One SVG line chart per metric, one series per policy."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(csv_path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER.split(","):
            raise ValueError(f"unexpected CSV schema in {csv_path}")
        data = list(reader)
    if not data:
        raise ValueError(f"no data rows in {csv_path}")
    os.makedirs(out_dir, exist_ok=True)
    axis = data[0]["sweep_axis"]
    policies = sorted({r["policy"] for r in data})
    written = []
    for metric, label in _METRIC_LABELS.items():
        fig, ax = plt.subplots(figsize=(6, 4))
        for policy in policies:
            pts: Dict[float, List[float]] = {}
            for r in data:
                if r["policy"] == policy:
                    pts.setdefault(float(r["sweep_value"]), []).append(float(r[metric]))
            xs = sorted(pts)
            ys = [statistics.fmean(pts[x]) for x in xs]
            ax.plot(xs, ys, marker="o", label=policy)
        ax.set_xlabel(axis)
        ax.set_ylabel(label)
        ax.legend(fontsize=8)
        fig.tight_layout()
        out = os.path.join(out_dir, f"{metric}.svg")
        fig.savefig(out)
        plt.close(fig)
        written.append(out)
    return written


# -- config plumbing ---------------------------------------------------------

def load_campaign_file(path: str) -> tuple:
    """Parse a JSON config into (SystemConfig, Topology, Campaign)."""
    with open(path) as fh:
        doc = json.load(fh)
    camp_doc = doc.pop("campaign", {})
    cfg, topo = config_from_dict(doc)
    campaign = Campaign(**{k: v for k, v in camp_doc.items()
                           if k in Campaign.__dataclass_fields__})
    return cfg, topo, campaign

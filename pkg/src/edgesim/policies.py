"""Rule-based placement baselines behind the same decision interface as
the learned agent: ``decide(ea, workload, env, t) -> PlacementDecision``."""
from __future__ import annotations

import math
from typing import List, Optional

import numpy as np

from .config import PlacementDecision, SystemConfig, Workload
from .env import ContinuumEnv

POLICY_NAMES = ("rp", "lop", "coo", "eeo", "rro", "mleo")


def _connected(env: ContinuumEnv, ea: int) -> List[int]:
    return env.topo.neighbors(ea)


class LocalOnlyPolicy:
    def decide(self, ea: int, w: Workload, env: ContinuumEnv, t: int) -> PlacementDecision:
        return PlacementDecision.local()


class CloudOnlyPolicy:
    def decide(self, ea: int, w: Workload, env: ContinuumEnv, t: int) -> PlacementDecision:
        return PlacementDecision.offload(env.cfg.cloud)


class RandomPolicy:
    """Uniform over local, cloud and every connected EA."""

    def __init__(self, rng: Optional[np.random.Generator] = None):
        self.rng = rng or np.random.default_rng()

    def decide(self, ea, w, env, t):
        options = [None, env.cfg.cloud] + _connected(env, ea)
        pick = options[int(self.rng.integers(len(options)))]
        return PlacementDecision.local() if pick is None else PlacementDecision.offload(pick)


class EdgeOnlyPolicy:
    """Uniform over connected EAs; falls back to the cloud for isolated EAs."""

    def __init__(self, rng: Optional[np.random.Generator] = None):
        self.rng = rng or np.random.default_rng()

    def decide(self, ea, w, env, t):
        peers = _connected(env, ea)
        if not peers:
            return PlacementDecision.offload(env.cfg.cloud)
        return PlacementDecision.offload(int(self.rng.choice(peers)))


class RoundRobinPolicy:
    """Cycles local -> cloud -> connected EAs in ascending id, per agent."""

    def __init__(self):
        self._cursor = {}

    def options(self, env: ContinuumEnv, ea: int) -> list:
        return [None, env.cfg.cloud] + _connected(env, ea)

    def decide(self, ea, w, env, t):
        opts = self.options(env, ea)
        i = self._cursor.get(ea, 0) % len(opts)
        self._cursor[ea] = i + 1
        pick = opts[i]
        return PlacementDecision.local() if pick is None else PlacementDecision.offload(pick)


def estimate_delay(env: ContinuumEnv, ea: int, w: Workload,
                   dest: Optional[int]) -> int:
    """Model-predicted completion delay (slots) for one placement option,
    holding the current contention level frozen."""
    cfg = env.cfg
    t = env.t
    if dest is None:
        exec_slots = math.ceil(w.size_bits * w.density_cpb / (cfg.f_private * cfg.slot_duration))
        return env.private_wait(ea, t) + exec_slots
    tran = math.ceil(w.size_bits / (cfg.link_rate_bps(dest) * cfg.slot_duration))
    loads = env.current_loads()
    a_k = max(1.0, loads[dest])  # the stack our workload joins counts itself
    share = cfg.slot_duration * cfg.f_public(dest) / (w.density_cpb * a_k)
    hosts = [k for k in range(cfg.n_nodes) if k != ea]
    length = env.source_public_lengths(ea)[hosts.index(dest)]
    queue_wait = math.ceil(length / share) if length > 0 else 0
    exec_slots = math.ceil(w.size_bits / share)
    return env.offload_wait(ea, t) + tran + queue_wait + exec_slots


class MinLatencyPolicy:
    """Picks the option with the smallest estimated completion delay;
    ties go to the earliest option in (local, EAs ascending, cloud)."""

    def decide(self, ea, w, env, t):
        options = [None] + _connected(env, ea) + [env.cfg.cloud]
        estimates = [estimate_delay(env, ea, w, d) for d in options]
        pick = options[int(np.argmin(estimates))]
        return PlacementDecision.local() if pick is None else PlacementDecision.offload(pick)


def make_policy(name: str, rng: Optional[np.random.Generator] = None):
    name = name.lower()
    if name == "rp":
        return RandomPolicy(rng)
    if name == "lop":
        return LocalOnlyPolicy()
    if name == "coo":
        return CloudOnlyPolicy()
    if name == "eeo":
        return EdgeOnlyPolicy(rng)
    if name == "rro":
        return RoundRobinPolicy()
    if name == "mleo":
        return MinLatencyPolicy()
    raise ValueError(f"unknown policy '{name}'")

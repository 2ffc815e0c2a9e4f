"""Domain types, configuration, topology and unit conventions.

Everything downstream works in SI base units (bits, cycles, seconds,
Joules, slots).  Configuration is written in the mixed units common in
the literature (Mbits, GHz, Mbps, gigacycles/Mbit); this module is the
single conversion boundary.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

# -- unit conversion helpers ------------------------------------------------

def unit_bits(size_mbits: float) -> float:
    """Mbits -> bits."""
    return size_mbits * 1e6


def unit_cycles(size_bits: float, density_cycles_per_bit: float) -> float:
    """bits -> CPU cycles at the given per-bit processing density."""
    return size_bits * density_cycles_per_bit


def density_cycles_per_bit(density_gcycles_per_mbit: float) -> float:
    """gigacycles/Mbit -> cycles/bit."""
    return density_gcycles_per_mbit * 1e9 / 1e6


def ghz(freq_ghz: float) -> float:
    return freq_ghz * 1e9


def mbps(rate_mbps: float) -> float:
    return rate_mbps * 1e6


# -- configuration ----------------------------------------------------------

@dataclass
class PowerProfile:
    """Per-slot power draws (Watts) for each workload stage."""
    p_priv: float = 0.1       # waiting in the private stack
    p_off: float = 0.1        # waiting in the offloading stack
    p_pub: float = 0.1        # waiting in a public stack
    p_tran: float = 0.2       # transferring over a link
    p_exec_edge: float = 1.0  # executing on an edge CPU (private or public)
    p_exec_cloud: float = 2.0  # executing on the cloud CPU


@dataclass
class Weights:
    w_d: float = 0.5
    w_e: float = 0.5


@dataclass
class SystemConfig:
    """Environment parameterization.  Units follow the config convention:
    sizes in Mbits, rates in Mbps, CPU speeds in GHz, density in
    gigacycles/Mbit, slot_duration in seconds."""
    n_agents: int = 4
    slot_duration: float = 0.1
    horizon: int = 60
    drain_slots: int = 10
    arrival_prob: float = 0.7
    size_set: tuple = (2.0, 3.0, 4.0, 5.0)
    density: float = 0.297
    timeout: int = 20
    rate_horizontal: float = 30.0
    rate_vertical: float = 10.0
    cpu_private: float = 5.0
    cpu_public_edge: float = 5.0
    cpu_public_cloud: float = 30.0
    powers: PowerProfile = field(default_factory=PowerProfile)
    weights: Weights = field(default_factory=Weights)
    drop_penalty: float = 40.0
    rng_seed: int = 0

    # derived, SI units
    @property
    def n_nodes(self) -> int:
        return self.n_agents + 1

    @property
    def cloud(self) -> int:
        """Node index of the cloud agent (0-based; edge agents are 0..N-1)."""
        return self.n_agents

    @property
    def size_set_bits(self) -> np.ndarray:
        return np.array([unit_bits(s) for s in self.size_set])

    @property
    def density_cpb(self) -> float:
        return density_cycles_per_bit(self.density)

    @property
    def rate_h_bps(self) -> float:
        return mbps(self.rate_horizontal)

    @property
    def rate_v_bps(self) -> float:
        return mbps(self.rate_vertical)

    @property
    def f_private(self) -> float:
        return ghz(self.cpu_private)

    @property
    def f_public_edge(self) -> float:
        return ghz(self.cpu_public_edge)

    @property
    def f_public_cloud(self) -> float:
        return ghz(self.cpu_public_cloud)

    def f_public(self, node: int) -> float:
        return self.f_public_cloud if node == self.cloud else self.f_public_edge

    def p_exec(self, node: int) -> float:
        return self.powers.p_exec_cloud if node == self.cloud else self.powers.p_exec_edge

    def link_rate_bps(self, dest: int) -> float:
        return self.rate_v_bps if dest == self.cloud else self.rate_h_bps


@dataclass
class Topology:
    """Binary symmetric edge-layer connectivity matrix.  The cloud (index
    n_agents) is reachable from every edge agent and is not part of g."""
    g: np.ndarray

    @property
    def n(self) -> int:
        return self.g.shape[0]

    def connected(self, i: int, j: int) -> bool:
        return bool(self.g[i, j])

    def neighbors(self, i: int) -> list:
        return [j for j in range(self.n) if self.g[i, j]]

    @staticmethod
    def full(n: int) -> "Topology":
        g = np.ones((n, n), dtype=np.int8)
        np.fill_diagonal(g, 0)
        return Topology(g)

    @staticmethod
    def ring(n: int, hops: int = 1) -> "Topology":
        g = np.zeros((n, n), dtype=np.int8)
        for i in range(n):
            for h in range(1, hops + 1):
                g[i, (i + h) % n] = 1
                g[(i + h) % n, i] = 1
        np.fill_diagonal(g, 0)
        return Topology(g)


def desk_config(**overrides) -> SystemConfig:
    """Small configuration that runs end-to-end in minutes on a laptop."""
    return replace(SystemConfig(), **overrides)


def paper_scale_config(**overrides) -> SystemConfig:
    """Full-size parameterization (20 agents, 110-slot episodes)."""
    cfg = SystemConfig(
        n_agents=20,
        horizon=110,
        drain_slots=10,
        size_set=tuple(round(2.0 + 0.1 * i, 1) for i in range(31)),
    )
    return replace(cfg, **overrides)


# -- workloads and decisions ------------------------------------------------

@dataclass(frozen=True)
class Workload:
    """One atomic task.  id 0 is the null workload (no arrival)."""
    id: int
    source: int
    arrival_slot: int
    size_bits: float
    density_cpb: float
    deadline_slot: int
    arrival_flag: int

    @staticmethod
    def null(source: int, t: int) -> "Workload":
        return Workload(0, source, t, 0.0, 0.0, 0, 0)

    @property
    def is_null(self) -> bool:
        return self.id == 0

    @property
    def timeout_slots(self) -> int:
        return self.deadline_slot - self.arrival_slot + 1


@dataclass(frozen=True)
class PlacementDecision:
    """Placement triplet: local execution, or offload to one destination."""
    local_flag: int
    offload_flag: int
    destination: Optional[int] = None

    @staticmethod
    def local() -> "PlacementDecision":
        return PlacementDecision(1, 0, None)

    @staticmethod
    def offload(dest: int) -> "PlacementDecision":
        return PlacementDecision(0, 1, dest)

    def validate(self, source: int, cfg: SystemConfig, topo: Topology) -> list:
        errs = []
        if self.local_flag not in (0, 1) or self.offload_flag not in (0, 1):
            errs.append("flags must be binary")
        if self.local_flag and (self.offload_flag or self.destination is not None):
            errs.append("local decision must carry no destination")
        if self.offload_flag:
            d = self.destination
            if d is None or d == source:
                errs.append("offload destination must differ from source")
            elif d < cfg.cloud and not topo.connected(source, d):
                errs.append(f"no link between {source} and {d}")
            elif d > cfg.cloud:
                errs.append(f"destination {d} out of range")
        if not self.local_flag and not self.offload_flag:
            errs.append("decision must either execute locally or offload")
        return errs


class Status(str, Enum):
    PROCESSED = "processed"
    DROPPED = "dropped"


class Path(str, Enum):
    LOCAL = "local"
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


@dataclass(frozen=True)
class WorkloadOutcome:
    """Ledger entry for one resolved workload."""
    id: int
    source: int
    status: Status
    path: Path
    destination: Optional[int]
    arrival_slot: int
    completion_slot: int
    total_delay_slots: int
    total_energy_j: float


# -- validation -------------------------------------------------------------

def validate_config(cfg: SystemConfig, topo: Topology) -> list:
    """Returns a list of human-readable invariant violations (empty if valid)."""
    v = []
    if cfg.n_agents < 1:
        v.append("n_agents must be >= 1")
    if cfg.slot_duration <= 0:
        v.append("slot_duration must be positive")
    if cfg.horizon < 1:
        v.append("horizon must be >= 1")
    if not 0 <= cfg.arrival_prob <= 1:
        v.append("arrival_prob must lie in [0, 1]")
    if not cfg.size_set or any(s <= 0 for s in cfg.size_set):
        v.append("size_set entries must be positive")
    if cfg.density <= 0:
        v.append("density must be positive")
    if cfg.timeout < 1:
        v.append("timeout must be >= 1 slot")
    for name in ("rate_horizontal", "rate_vertical", "cpu_private",
                 "cpu_public_edge", "cpu_public_cloud"):
        if getattr(cfg, name) <= 0:
            v.append(f"{name} must be positive")
    for name in ("p_priv", "p_off", "p_pub", "p_tran", "p_exec_edge", "p_exec_cloud"):
        if getattr(cfg.powers, name) <= 0:
            v.append(f"powers.{name} must be positive")
    if cfg.weights.w_d < 0 or cfg.weights.w_e < 0:
        v.append("weights must be nonnegative")
    if cfg.drop_penalty <= 0:
        v.append("drop_penalty must be positive")
    if cfg.rate_horizontal <= cfg.rate_vertical:
        v.append("rate_horizontal > rate_vertical required")
    if cfg.cpu_public_cloud <= cfg.cpu_public_edge:
        v.append("cpu_public_cloud > cpu_public_edge required")
    if cfg.drain_slots >= cfg.horizon:
        v.append("drain_slots must be smaller than horizon")
    g = topo.g
    if g.shape != (cfg.n_agents, cfg.n_agents):
        v.append("topology shape must be n_agents x n_agents")
        return v
    if not np.array_equal(g, g.T):
        v.append("G symmetric required")
    if np.any(np.diag(g) != 0):
        v.append("G diagonal must be zero")
    if not np.all(np.isin(g, (0, 1))):
        v.append("G entries must be binary")
    return v


# -- JSON round-trip --------------------------------------------------------

def config_to_dict(cfg: SystemConfig, topo: Topology) -> dict:
    d = {
        "n_agents": cfg.n_agents,
        "slot_duration": cfg.slot_duration,
        "horizon": cfg.horizon,
        "drain_slots": cfg.drain_slots,
        "arrival_prob": cfg.arrival_prob,
        "size_set": list(cfg.size_set),
        "density": cfg.density,
        "timeout": cfg.timeout,
        "rate_horizontal": cfg.rate_horizontal,
        "rate_vertical": cfg.rate_vertical,
        "cpu_private": cfg.cpu_private,
        "cpu_public_edge": cfg.cpu_public_edge,
        "cpu_public_cloud": cfg.cpu_public_cloud,
        "powers": vars(cfg.powers).copy(),
        "weights": vars(cfg.weights).copy(),
        "drop_penalty": cfg.drop_penalty,
        "rng_seed": cfg.rng_seed,
        "g": topo.g.tolist(),
    }
    return d


def config_from_dict(d: dict) -> tuple:
    d = dict(d)
    g = d.pop("g", None)
    powers = PowerProfile(**d.pop("powers", {}))
    weights = Weights(**d.pop("weights", {}))
    known = {f for f in SystemConfig.__dataclass_fields__}
    kwargs = {k: v for k, v in d.items() if k in known}
    if "size_set" in kwargs:
        kwargs["size_set"] = tuple(kwargs["size_set"])
    cfg = SystemConfig(powers=powers, weights=weights, **kwargs)
    if g is None:
        topo = Topology.full(cfg.n_agents)
    else:
        topo = Topology(np.asarray(g, dtype=np.int8))
    return cfg, topo


def load_config(path: str) -> tuple:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def save_config(path: str, cfg: SystemConfig, topo: Topology) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg, topo), fh, indent=2)

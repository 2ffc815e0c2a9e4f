"""Time-slotted edge-cloud environment engine.

One instance owns the full simulation truth for a single episode: FIFO
workload stacks, the processor-sharing public CPUs, per-workload delay
and energy ledgers, and the RNG stream.  Slots are 1-based.  Node
indices are 0-based: edge agents 0..N-1, cloud N.

Completion-slot bookkeeping for the private and offloading stacks is
closed-form (waiting time from the latest prior completion slot, then a
ceiling on the work/capacity ratio).  Public stacks are served head-only
with an equal split of the host CPU across active stacks, frozen at slot
start; deliveries during slot t join at t+1.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .config import (PlacementDecision, Path, Status, SystemConfig, Topology,
                     Workload, WorkloadOutcome)

# relative slack on the completion test so exact-multiple budgets complete
# on the intended slot despite accumulated float error
_COMPLETION_RTOL = 1e-12


@dataclass
class SlotReport:
    t: int
    arrivals: dict
    resolved: list          # WorkloadOutcome resolved this slot
    loads: np.ndarray       # A_k(t) per node, frozen at slot start
    lengths: dict           # (source, host) -> bits at slot end


@dataclass
class _Lane:
    """Private or offloading stack of one EA; only the latest scheduled
    completion slot matters for the waiting-time recursion."""
    max_psi: int = 0


@dataclass
class _PubItem:
    w: Workload
    dest: int
    processed_bits: float = 0.0
    insert_slot: int = 0
    start_slot: Optional[int] = None
    tau_off: int = 0
    tau_ho: int = 0

    @property
    def residual_bits(self) -> float:
        return max(0.0, self.w.size_bits - self.processed_bits)


@dataclass
class _PublicStack:
    items: deque = field(default_factory=deque)
    next_start: int = 0     # earliest slot the current head may begin service
    dropped_bits_slot: float = 0.0  # m-bits removed this slot

    @property
    def length_bits(self) -> float:
        return sum(it.residual_bits for it in self.items)


class ContinuumEnv:
    def __init__(self, cfg: SystemConfig, topo: Topology, seed: Optional[int] = None):
        self.cfg = cfg
        self.topo = topo
        self._seed = cfg.rng_seed if seed is None else seed
        self.reset()

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed: Optional[int] = None) -> None:
        if seed is not None:
            self._seed = seed
        cfg = self.cfg
        self.rng = np.random.default_rng(self._seed)
        self.t = 1
        self._next_id = 1
        self._arrivals: Optional[dict] = None
        self._private = [_Lane() for _ in range(cfg.n_agents)]
        self._offload = [_Lane() for _ in range(cfg.n_agents)]
        # (source, host) -> stack; created lazily
        self._public: Dict[tuple, _PublicStack] = {}
        # slot -> list of scheduled private/offload resolution events
        self._events: Dict[int, list] = {}
        # slot -> list of (workload, dest, tau_off, tau_ho) deliveries
        self._deliveries: Dict[int, list] = {}
        self.outcomes: Dict[int, WorkloadOutcome] = {}
        self.loads_history: List[np.ndarray] = []  # A_k(t) per completed slot
        self._lengths_prev: Dict[tuple, float] = {}  # end of previous slot
        self.arrived_count = 0

    # -- queries used by agents and policies --------------------------------

    def private_wait(self, ea: int, t: Optional[int] = None) -> int:
        """Slots a workload placed now would wait in the private stack."""
        t = self.t if t is None else t
        return max(0, self._private[ea].max_psi - t + 1)

    def offload_wait(self, ea: int, t: Optional[int] = None) -> int:
        t = self.t if t is None else t
        return max(0, self._offload[ea].max_psi - t + 1)

    def source_public_lengths(self, ea: int) -> np.ndarray:
        """End-of-previous-slot lengths (bits) of the public stacks holding
        this EA's offloads, one entry per other node in ascending index."""
        hosts = [k for k in range(self.cfg.n_nodes) if k != ea]
        return np.array([self._lengths_prev.get((ea, k), 0.0) for k in hosts])

    def current_loads(self) -> np.ndarray:
        """A_k as it would be counted right now (residuals from last slot)."""
        loads = np.zeros(self.cfg.n_nodes)
        for (n, k), stack in self._public.items():
            if stack.items:
                loads[k] += 1
        return loads

    @property
    def in_flight(self) -> int:
        pending = sum(len(evts) for evts in self._events.values())
        pending += sum(len(d) for d in self._deliveries.values())
        pending += sum(len(s.items) for s in self._public.values())
        return pending

    # -- arrivals ------------------------------------------------------------

    def sample_arrivals(self, t: int) -> dict:
        """Bernoulli arrival per EA with uniform size from the size set.
        Arrivals stop during the drain window at the end of the episode."""
        assert t == self.t, "arrivals must be sampled for the current slot"
        if self._arrivals is not None:
            return self._arrivals
        cfg = self.cfg
        arrivals = {}
        active = t <= cfg.horizon - cfg.drain_slots
        for ea in range(cfg.n_agents):
            if active and self.rng.random() < cfg.arrival_prob:
                size = float(self.rng.choice(cfg.size_set_bits))
                w = Workload(
                    id=self._next_id, source=ea, arrival_slot=t,
                    size_bits=size, density_cpb=cfg.density_cpb,
                    deadline_slot=t + cfg.timeout - 1, arrival_flag=1,
                )
                self._next_id += 1
                arrivals[ea] = w
                self.arrived_count += 1
        self._arrivals = arrivals
        return arrivals

    # -- placements ----------------------------------------------------------

    def _place_local(self, w: Workload, t: int) -> int:
        cfg = self.cfg
        if w.is_null:
            raise ValueError("cannot place a null workload")
        lane = self._private[w.source]
        tau = max(0, lane.max_psi - t + 1)
        exec_slots = math.ceil(w.size_bits * w.density_cpb / (cfg.f_private * cfg.slot_duration))
        finish = t + tau + exec_slots - 1
        psi = min(finish, w.deadline_slot)
        lane.max_psi = max(lane.max_psi, psi)
        tmax = w.timeout_slots
        if finish <= w.deadline_slot:
            ev = ("local", w, Status.PROCESSED, tau, exec_slots)
        elif tau >= tmax:
            ev = ("local", w, Status.DROPPED, tmax, 0)
        else:
            ev = ("local", w, Status.DROPPED, tau, tmax - tau)
        self._events.setdefault(psi, []).append(ev)
        return psi

    def _place_offload(self, w: Workload, dest: int, t: int) -> int:
        cfg = self.cfg
        if w.is_null:
            raise ValueError("cannot place a null workload")
        if dest == w.source:
            raise ValueError("cannot offload to self")
        if dest < cfg.cloud and not self.topo.connected(w.source, dest):
            raise ValueError(f"no link from {w.source} to {dest}")
        lane = self._offload[w.source]
        tau = max(0, lane.max_psi - t + 1)
        tran_slots = math.ceil(w.size_bits / (cfg.link_rate_bps(dest) * cfg.slot_duration))
        finish = t + tau + tran_slots - 1
        psi = min(finish, w.deadline_slot)
        lane.max_psi = max(lane.max_psi, psi)
        tmax = w.timeout_slots
        if finish < w.deadline_slot:
            # transfer succeeds with at least one public slot left
            self._deliveries.setdefault(psi + 1, []).append((w, dest, tau, tran_slots))
        elif tau >= tmax:
            self._events.setdefault(psi, []).append(("offload", w, dest, tmax, 0))
        else:
            # includes the boundary where the transfer lands exactly on the
            # deadline slot: delivered too late to ever be processed
            self._events.setdefault(psi, []).append(
                ("offload", w, dest, tau, min(tran_slots, tmax - tau)))
        return psi

    # -- energy --------------------------------------------------------------

    def _energy_local(self, wait: int, exec_slots: int) -> float:
        p = self.cfg.powers
        return self.cfg.slot_duration * (p.p_priv * wait + p.p_exec_edge * exec_slots)

    def _energy_offload_stage(self, wait: int, tran: int) -> float:
        p = self.cfg.powers
        return self.cfg.slot_duration * (p.p_off * wait + p.p_tran * tran)

    def _energy_public(self, host: int, tau_off: int, tau_ho: int,
                       pub_wait: int, exec_slots: int) -> float:
        p = self.cfg.powers
        return self.cfg.slot_duration * (
            p.p_off * tau_off + p.p_tran * tau_ho
            + p.p_pub * pub_wait + self.cfg.p_exec(host) * exec_slots)

    def _record(self, outcome: WorkloadOutcome) -> None:
        self.outcomes[outcome.id] = outcome

    @staticmethod
    def _path_of(dest: Optional[int], cloud: int) -> Path:
        if dest is None:
            return Path.LOCAL
        return Path.VERTICAL if dest == cloud else Path.HORIZONTAL

    # -- slot step -----------------------------------------------------------

    def step(self, decisions: Dict[int, PlacementDecision]) -> SlotReport:
        cfg = self.cfg
        t = self.t
        arrivals = self.sample_arrivals(t)
        for ea in decisions:
            if ea not in arrivals:
                raise ValueError(f"decision supplied for EA {ea} with no arrival at slot {t}")

        resolved: List[WorkloadOutcome] = []

        # 1. deliveries scheduled for this slot join the public stacks
        inserted = set()
        for (w, dest, tau_off, tau_ho) in self._deliveries.pop(t, []):
            key = (w.source, dest)
            stack = self._public.setdefault(key, _PublicStack())
            item = _PubItem(w=w, dest=dest, insert_slot=t, tau_off=tau_off, tau_ho=tau_ho)
            if not stack.items:
                stack.next_start = max(stack.next_start, t)
            stack.items.append(item)
            inserted.add(key)

        # 2. apply placement decisions for this slot's arrivals
        for ea, w in arrivals.items():
            dec = decisions.get(ea)
            if dec is None:
                raise ValueError(f"arrival at EA {ea} slot {t} requires a decision")
            if dec.local_flag:
                self._place_local(w, t)
            else:
                self._place_offload(w, dec.destination, t)

        # 3. freeze active sets: a stack is active if it has residual bits
        #    from t-1 or an insertion at t (both mean a nonempty deque here)
        loads = np.zeros(cfg.n_nodes)
        for (n, k), stack in self._public.items():
            if stack.items:
                loads[k] += 1

        # 4. processor-sharing tick: each active stack's head gets an equal
        #    share of the host CPU for the whole slot
        for (n, k), stack in self._public.items():
            stack.dropped_bits_slot = 0.0
            if not stack.items or t < stack.next_start:
                continue
            head = stack.items[0]
            if head.start_slot is None:
                head.start_slot = t
            budget = cfg.slot_duration * cfg.f_public(k) / (head.w.density_cpb * loads[k])
            head.processed_bits += budget
            if head.processed_bits >= head.w.size_bits * (1.0 - _COMPLETION_RTOL):
                stack.items.popleft()
                stack.next_start = t + 1
                pub_wait = head.start_slot - head.insert_slot
                exec_slots = t - head.start_slot + 1
                w = head.w
                resolved.append(WorkloadOutcome(
                    id=w.id, source=w.source, status=Status.PROCESSED,
                    path=self._path_of(k, cfg.cloud), destination=k,
                    arrival_slot=w.arrival_slot, completion_slot=t,
                    total_delay_slots=t - w.arrival_slot + 1,
                    total_energy_j=self._energy_public(
                        k, head.tau_off, head.tau_ho, pub_wait, exec_slots),
                ))

        # 5. private/offload-stage events scheduled for this slot
        for ev in self._events.pop(t, []):
            if ev[0] == "local":
                _, w, status, wait, exec_slots = ev
                delay = (t - w.arrival_slot + 1) if status is Status.PROCESSED else w.timeout_slots
                resolved.append(WorkloadOutcome(
                    id=w.id, source=w.source, status=status, path=Path.LOCAL,
                    destination=None, arrival_slot=w.arrival_slot,
                    completion_slot=t, total_delay_slots=delay,
                    total_energy_j=self._energy_local(wait, exec_slots)))
            else:
                _, w, dest, wait, tran = ev
                resolved.append(WorkloadOutcome(
                    id=w.id, source=w.source, status=Status.DROPPED,
                    path=self._path_of(dest, cfg.cloud), destination=dest,
                    arrival_slot=w.arrival_slot, completion_slot=t,
                    total_delay_slots=w.timeout_slots,
                    total_energy_j=self._energy_offload_stage(wait, tran)))

        # 6. deadline sweep over public stacks (completions above took
        #    precedence for same-slot complete-and-expire)
        for (n, k), stack in self._public.items():
            while True:
                expired = None
                for it in stack.items:
                    if it.w.deadline_slot <= t:
                        expired = it
                        break
                if expired is None:
                    break
                was_head = stack.items[0] is expired
                stack.items.remove(expired)
                stack.dropped_bits_slot += expired.residual_bits
                if was_head:
                    stack.next_start = t + 1
                if expired.start_slot is None:
                    pub_wait = t - expired.insert_slot + 1
                    exec_slots = 0
                else:
                    pub_wait = expired.start_slot - expired.insert_slot
                    exec_slots = t - expired.start_slot + 1
                w = expired.w
                resolved.append(WorkloadOutcome(
                    id=w.id, source=w.source, status=Status.DROPPED,
                    path=self._path_of(k, cfg.cloud), destination=k,
                    arrival_slot=w.arrival_slot, completion_slot=t,
                    total_delay_slots=w.timeout_slots,
                    total_energy_j=self._energy_public(
                        k, expired.tau_off, expired.tau_ho, pub_wait, exec_slots)))

        for out in resolved:
            self._record(out)

        lengths = {key: s.length_bits for key, s in self._public.items()}
        self._lengths_prev = lengths
        self.loads_history.append(loads)
        self._arrivals = None
        self.t += 1
        return SlotReport(t=t, arrivals=arrivals, resolved=resolved,
                          loads=loads, lengths=lengths)

    # -- summaries -----------------------------------------------------------

    def counts(self) -> dict:
        processed = sum(1 for o in self.outcomes.values() if o.status is Status.PROCESSED)
        dropped = sum(1 for o in self.outcomes.values() if o.status is Status.DROPPED)
        return {"arrived": self.arrived_count, "processed": processed,
                "dropped": dropped, "in_flight": self.arrived_count - processed - dropped}


def run_episode(env: ContinuumEnv, decide, horizon: Optional[int] = None) -> List[SlotReport]:
    """Drive one episode.  `decide(ea, workload, env, t) -> PlacementDecision`
    is called for every arrival; reports are returned in slot order."""
    horizon = env.cfg.horizon if horizon is None else horizon
    reports = []
    for t in range(1, horizon + 1):
        arrivals = env.sample_arrivals(t)
        decisions = {ea: decide(ea, w, env, t) for ea, w in arrivals.items()}
        reports.append(env.step(decisions))
    return reports


def drain(env: ContinuumEnv, max_extra_slots: Optional[int] = None) -> List[SlotReport]:
    """Step arrival-free slots past the horizon until every workload has
    resolved.  The in-episode drain window can be shorter than the
    timeout, so late arrivals may still be in flight at the horizon; the
    timeout bounds how much longer they can survive."""
    max_extra_slots = env.cfg.timeout if max_extra_slots is None else max_extra_slots
    reports = []
    for _ in range(max_extra_slots):
        if env.in_flight == 0:
            break
        reports.append(env.step({}))
    return reports

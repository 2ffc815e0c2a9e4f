"""Per-EA learner: state construction, action codec, delayed-cost replay,
dueling double Q-network and the training/inference loops."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .config import (PlacementDecision, Status, SystemConfig, Topology,
                     WorkloadOutcome)
from .env import ContinuumEnv
from .forecaster import LoadForecaster, PeekForecaster, ReactiveForecaster, collect_load_traces
from .nn import Adam, Dense, mse
from .telemetry import TelemetryService


# -- state construction ------------------------------------------------------

@dataclass(frozen=True)
class AgentObservation:
    """State vector of one EA at one slot: workload size, the two local
    waiting times, the lengths of its remote public stacks, and the
    predicted next-slot loads.  `norm` is the network-ready copy."""
    vec: np.ndarray
    norm: np.ndarray


class ObservationBuilder:
    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg
        self.max_size = float(np.max(cfg.size_set_bits))
        # a public stack rarely holds more than a few workloads at once
        self.len_scale = 4.0 * self.max_size
        self.dim = 2 * cfg.n_agents + 4

    def build(self, ea: int, env: ContinuumEnv, telemetry: TelemetryService,
              forecast: np.ndarray, size_bits: float = 0.0) -> AgentObservation:
        cfg = self.cfg
        t = env.t
        forecast = np.asarray(forecast, dtype=float)
        if forecast.shape != (cfg.n_nodes,):
            raise ValueError(f"forecast must have {cfg.n_nodes} entries")
        lengths = env.source_public_lengths(ea)
        vec = np.concatenate([
            [size_bits, env.private_wait(ea, t), env.offload_wait(ea, t)],
            lengths, forecast])
        norm = np.concatenate([
            [size_bits / self.max_size,
             min(env.private_wait(ea, t), cfg.timeout) / cfg.timeout,
             min(env.offload_wait(ea, t), cfg.timeout) / cfg.timeout],
            np.minimum(lengths / self.len_scale, 1.0),
            forecast / max(1, cfg.n_agents)])
        return AgentObservation(vec=vec, norm=norm)


# -- actions ----------------------------------------------------------------

class ActionCodec:
    """Bijection between the N+1 discrete actions of one EA and placement
    triplets: index 0 local, 1..N-1 the other EAs in ascending id, N the
    cloud.  Unreachable EAs are masked out."""

    def __init__(self, ea: int, cfg: SystemConfig, topo: Topology):
        self.ea = ea
        self.cfg = cfg
        others = [j for j in range(cfg.n_agents) if j != ea]
        self.destinations: List[Optional[int]] = [None] + others + [cfg.cloud]
        self.n_actions = len(self.destinations)
        mask = [True] + [bool(topo.g[ea, j]) for j in others] + [True]
        self.feasible = np.array(mask)

    def decode(self, action: int) -> PlacementDecision:
        if not self.feasible[action]:
            raise ValueError(f"action {action} is masked for EA {self.ea}")
        dest = self.destinations[action]
        return PlacementDecision.local() if dest is None else PlacementDecision.offload(dest)

    def encode(self, decision: PlacementDecision) -> int:
        dest = None if decision.local_flag else decision.destination
        return self.destinations.index(dest)


# -- network ----------------------------------------------------------------

class DuelingQNet:
    """ReLU trunk with separate state-value and advantage heads; advantages
    are centred on the feasible-action mean."""

    def __init__(self, n_in: int, n_actions: int, hidden, feasible: np.ndarray,
                 rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        self.feasible = feasible.astype(bool)
        self.n_feasible = int(self.feasible.sum())
        sizes = [n_in] + list(hidden)
        self.trunk = [Dense(sizes[i], sizes[i + 1], relu=True, rng=rng)
                      for i in range(len(sizes) - 1)]
        self.v_head = Dense(sizes[-1], 1, rng=rng)
        self.a_head = Dense(sizes[-1], n_actions, rng=rng)

    def forward(self, x: np.ndarray):
        x = np.atleast_2d(x)
        caches = []
        h = x
        for layer in self.trunk:
            h, c = layer.forward(h)
            caches.append(c)
        v, vc = self.v_head.forward(h)
        a, ac = self.a_head.forward(h)
        mean_feas = a[:, self.feasible].mean(axis=1, keepdims=True)
        q = v + a - mean_feas
        return q, (caches, vc, ac)

    def masked(self, q: np.ndarray) -> np.ndarray:
        """Copy with infeasible actions at +inf so argmin skips them."""
        out = q.copy()
        out[..., ~self.feasible] = np.inf
        return out

    def backward(self, dq: np.ndarray, cache) -> List[np.ndarray]:
        caches, vc, ac = cache
        total = dq.sum(axis=1, keepdims=True)
        dv = total
        da = dq - self.feasible[None, :] * (total / self.n_feasible)
        dh_v, v_grads = self.v_head.backward(dv, vc)
        dh_a, a_grads = self.a_head.backward(da, ac)
        dh = dh_v + dh_a
        trunk_grads = []
        for layer, c in zip(reversed(self.trunk), reversed(caches)):
            dh, g = layer.backward(dh, c)
            trunk_grads = g + trunk_grads
        return trunk_grads + v_grads + a_grads

    def params(self) -> List[np.ndarray]:
        out = []
        for layer in self.trunk:
            out += layer.params()
        return out + self.v_head.params() + self.a_head.params()

    def copy_from(self, other: "DuelingQNet") -> None:
        for p, q in zip(self.params(), other.params()):
            p[...] = q

    def clone(self) -> "DuelingQNet":
        import copy
        return copy.deepcopy(self)


def select_action(net: DuelingQNet, obs: AgentObservation, epsilon: float,
                  rng: np.random.Generator) -> int:
    """epsilon-greedy over feasible actions; exploitation is the cost
    argmin with ties resolved to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        feasible = np.flatnonzero(net.feasible)
        return int(feasible[rng.integers(len(feasible))])
    q, _ = net.forward(obs.norm)
    return int(np.argmin(net.masked(q)[0]))


def epsilon_schedule(episode: int, n_episodes: int) -> float:
    """Linear 1 -> 0 over the first half of training, then 0."""
    if not 1 <= episode:
        raise ValueError("episodes are 1-based")
    if episode > n_episodes / 2:
        return 0.0
    return max(0.0, 1.0 - 2.0 * (episode - 1) / n_episodes)


# -- costs and targets -------------------------------------------------------

def outcome_cost(outcome: WorkloadOutcome, cfg: SystemConfig) -> float:
    """Delay/energy weighted cost for processed workloads, flat penalty
    for drops."""
    if outcome.status is Status.DROPPED:
        return float(cfg.drop_penalty)
    return (cfg.weights.w_d * outcome.total_delay_slots
            + cfg.weights.w_e * outcome.total_energy_j)


def td_targets(costs: np.ndarray, next_states: np.ndarray, terminal: np.ndarray,
               net: DuelingQNet, target_net: DuelingQNet, gamma: float) -> np.ndarray:
    """Double-Q targets: the online net selects the next action, the
    target net evaluates it; terminal rows keep the bare cost."""
    y = costs.astype(float).copy()
    live = ~terminal
    if np.any(live):
        q_online, _ = net.forward(next_states[live])
        sel = np.argmin(net.masked(q_online), axis=1)
        q_target, _ = target_net.forward(next_states[live])
        y[live] = costs[live] + gamma * q_target[np.arange(len(sel)), sel]
    return y


# -- replay ------------------------------------------------------------------

@dataclass
class PendingExperience:
    state: np.ndarray
    action: int
    decision_slot: int
    terminal: bool
    next_state: Optional[np.ndarray] = None
    cost: Optional[float] = None

    @property
    def complete(self) -> bool:
        return self.next_state is not None and self.cost is not None


class ReplayBuffer:
    """Ring of (s, a, c, s', terminal) tuples."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._rows: list = []
        self._head = 0

    def push(self, row: tuple) -> None:
        if len(self._rows) < self.capacity:
            self._rows.append(row)
        else:
            self._rows[self._head] = row
            self._head = (self._head + 1) % self.capacity

    def __len__(self):
        return len(self._rows)

    def sample(self, n: int, rng: np.random.Generator) -> list:
        idx = rng.choice(len(self._rows), size=n, replace=False)
        return [self._rows[i] for i in idx]


# -- training ----------------------------------------------------------------

@dataclass
class TrainingParams:
    episodes: int = 300
    lr: float = 5e-4
    gamma: float = 0.99
    batch_size: int = 32
    replay_size: int = 10000
    copy_every: int = 500
    copy_unit: str = "updates"   # or "episodes"
    hidden: tuple = (128, 128)
    window: int = 10
    forecaster: str = "lstm"     # lstm | none | peek
    forecaster_epochs: int = 15
    warmup_episodes: int = 8
    update_stride: int = 1
    seed: int = 0


@dataclass
class TrainingResult:
    episode_cost: List[float]
    epsilons: List[float]
    buffer_fill: List[int]
    copy_events: List[tuple]     # (unit_count, episode)


class AgentRuntime:
    """Everything one EA owns: its networks, optimizer, replay ring and
    the bookkeeping for reward-delayed experiences."""

    def __init__(self, ea: int, cfg: SystemConfig, topo: Topology,
                 params: TrainingParams, obs_dim: int, rng: np.random.Generator):
        self.ea = ea
        self.codec = ActionCodec(ea, cfg, topo)
        self.net = DuelingQNet(obs_dim, self.codec.n_actions, params.hidden,
                               self.codec.feasible, rng=rng)
        self.target = self.net.clone()
        self.opt = Adam(self.net.params(), lr=params.lr)
        self.buffer = ReplayBuffer(params.replay_size)
        self.pending: Dict[int, PendingExperience] = {}
        self.update_count = 0

    def attach_next_states(self, t: int, obs: AgentObservation) -> None:
        for exp in self.pending.values():
            if exp.next_state is None and exp.decision_slot == t - 1:
                exp.next_state = obs.norm
        self._flush()

    def on_resolved(self, workload_id: int, cost: float) -> None:
        exp = self.pending.get(workload_id)
        if exp is not None:
            exp.cost = cost
            self._flush()

    def _flush(self) -> None:
        done = [wid for wid, e in self.pending.items() if e.complete]
        for wid in done:
            e = self.pending.pop(wid)
            self.buffer.push((e.state, e.action, e.cost, e.next_state, e.terminal))

    def drop_unresolved(self) -> None:
        self.pending.clear()

    def learn_step(self, params: TrainingParams, rng: np.random.Generator) -> bool:
        if len(self.buffer) < params.batch_size:
            return False
        rows = self.buffer.sample(params.batch_size, rng)
        states = np.array([r[0] for r in rows])
        actions = np.array([r[1] for r in rows])
        costs = np.array([r[2] for r in rows])
        next_states = np.array([r[3] for r in rows])
        terminal = np.array([r[4] for r in rows])
        y = td_targets(costs, next_states, terminal, self.net, self.target, params.gamma)
        q, cache = self.net.forward(states)
        z = q[np.arange(len(rows)), actions]
        dq = np.zeros_like(q)
        dq[np.arange(len(rows)), actions] = 2.0 * (z - y) / len(rows)
        grads = self.net.backward(dq, cache)
        self.opt.step(grads)
        self.update_count += 1
        return True

    def sync_target(self) -> None:
        self.target.copy_from(self.net)


class MultiAgentTrainer:
    """Trains one learner per EA against a shared environment, with a
    shared frozen load forecaster."""

    def __init__(self, cfg: SystemConfig, topo: Topology, params: TrainingParams):
        self.cfg = cfg
        self.topo = topo
        self.params = params
        self.rng = np.random.default_rng(params.seed)
        self.env = ContinuumEnv(cfg, topo, seed=params.seed)
        self.obs_builder = ObservationBuilder(cfg)
        self.agents = [AgentRuntime(ea, cfg, topo, params, self.obs_builder.dim, self.rng)
                       for ea in range(cfg.n_agents)]
        self.forecaster = self._make_forecaster()
        self.copy_events: List[tuple] = []

    # forecaster setup ------------------------------------------------------

    def _make_forecaster(self):
        p = self.params
        if p.forecaster == "none":
            return ReactiveForecaster(self.cfg.n_nodes)
        if p.forecaster == "peek":
            return PeekForecaster(self.env)
        if p.forecaster == "lstm":
            fc = LoadForecaster(self.cfg.n_nodes, p.window, seed=p.seed)
            traces = collect_load_traces(
                lambda: ContinuumEnv(self.cfg, self.topo, seed=p.seed),
                n_episodes=p.warmup_episodes, seed=p.seed)
            fc.fit(traces, epochs=p.forecaster_epochs, seed=p.seed)
            return fc
        raise ValueError(f"unknown forecaster mode '{p.forecaster}'")

    # episode machinery -----------------------------------------------------

    def _forecast(self, telemetry: TelemetryService) -> np.ndarray:
        pred = self.forecaster.predict(telemetry.loads.matrix)
        return np.clip(np.asarray(pred, dtype=float), 0.0, self.cfg.n_agents)

    def _build_all(self, telemetry, arrivals) -> list:
        forecast = self._forecast(telemetry)
        return [self.obs_builder.build(
                    ea, self.env, telemetry, forecast,
                    size_bits=arrivals[ea].size_bits if ea in arrivals else 0.0)
                for ea in range(self.cfg.n_agents)]

    def run_episode(self, episode_seed: int, epsilon: float, learn: bool = True) -> dict:
        cfg, p = self.cfg, self.params
        env = self.env
        env.reset(seed=episode_seed)
        telemetry = TelemetryService(p.window, env)
        for rt in self.agents:
            rt.drop_unresolved()
        costs: List[float] = []
        stats = {"local": 0, "horizontal": 0, "vertical": 0,
                 "delay_slots": [], "energy_j": 0.0}
        for t in range(1, cfg.horizon + 1):
            arrivals = env.sample_arrivals(t)
            observations = self._build_all(telemetry, arrivals)
            for rt in self.agents:
                rt.attach_next_states(t, observations[rt.ea])
            decisions = {}
            for ea, w in arrivals.items():
                rt = self.agents[ea]
                a = select_action(rt.net, observations[ea], epsilon, self.rng)
                decisions[ea] = rt.codec.decode(a)
                rt.pending[w.id] = PendingExperience(
                    state=observations[ea].norm, action=a, decision_slot=t,
                    terminal=(t == cfg.horizon))
                if decisions[ea].local_flag:
                    stats["local"] += 1
                elif decisions[ea].destination == cfg.cloud:
                    stats["vertical"] += 1
                else:
                    stats["horizontal"] += 1
            report = env.step(decisions)
            for out in report.resolved:
                c = outcome_cost(out, cfg)
                costs.append(c)
                self.agents[out.source].on_resolved(out.id, c)
                stats["energy_j"] += out.total_energy_j
                if out.status is Status.PROCESSED:
                    stats["delay_slots"].append(out.total_delay_slots)
            telemetry.on_slot_end(report.loads, t)
            if learn and t % p.update_stride == 0:
                for rt in self.agents:
                    if rt.learn_step(p, self.rng) and p.copy_unit == "updates" \
                            and rt.update_count % p.copy_every == 0:
                        rt.sync_target()
                        if rt.ea == 0:
                            self.copy_events.append(("updates", rt.update_count))
        # one last observation so slot-T decisions get their next state
        final_obs = self._build_all(telemetry, {})
        for rt in self.agents:
            rt.attach_next_states(cfg.horizon + 1, final_obs[rt.ea])
            rt.drop_unresolved()   # in-flight at cutoff: no cost will ever come
        stats["counts"] = env.counts()
        stats["mean_cost"] = float(np.mean(costs)) if costs else 0.0
        return stats

    def train(self) -> TrainingResult:
        p = self.params
        curve, eps_log, fill = [], [], []
        for ep in range(1, p.episodes + 1):
            eps = epsilon_schedule(ep, p.episodes)
            stats = self.run_episode(p.seed * 100003 + ep, eps, learn=True)
            if p.copy_unit == "episodes" and ep % p.copy_every == 0:
                for rt in self.agents:
                    rt.sync_target()
                self.copy_events.append(("episodes", ep))
            curve.append(stats["mean_cost"])
            eps_log.append(eps)
            fill.append(len(self.agents[0].buffer))
        return TrainingResult(curve, eps_log, fill, list(self.copy_events))


# -- inference ---------------------------------------------------------------

class LearnedPolicy:
    """Greedy inference wrapper exposing the baseline decision interface.
    Keeps its own telemetry in sync with the episode lazily."""

    def __init__(self, trainer: MultiAgentTrainer):
        self.trainer = trainer
        self._telemetry: Optional[TelemetryService] = None
        self._synced_slot = 0
        self._forecast_cache = (None, None)

    def reset(self) -> None:
        self._telemetry = None
        self._synced_slot = 0
        self._forecast_cache = (None, None)

    def _sync(self, env: ContinuumEnv) -> TelemetryService:
        if self._telemetry is None or env.t <= self._synced_slot:
            self._telemetry = TelemetryService(self.trainer.params.window, env)
            self._synced_slot = 0
        tel = self._telemetry
        for slot in range(self._synced_slot + 1, env.t):
            tel.on_slot_end(env.loads_history[slot - 1], slot)
        self._synced_slot = env.t - 1
        return tel

    def decide(self, ea, w, env, t) -> PlacementDecision:
        tel = self._sync(env)
        if self._forecast_cache[0] != t:
            forecaster = self.trainer.forecaster
            if isinstance(forecaster, PeekForecaster):
                forecaster.env = env   # peek at the episode being evaluated
            pred = forecaster.predict(tel.loads.matrix)
            pred = np.clip(np.asarray(pred, dtype=float), 0.0, env.cfg.n_agents)
            self._forecast_cache = (t, pred)
        forecast = self._forecast_cache[1]
        obs = self.trainer.obs_builder.build(ea, env, tel, forecast,
                                             size_bits=w.size_bits)
        rt = self.trainer.agents[ea]
        action = select_action(rt.net, obs, 0.0, self.trainer.rng)
        return rt.codec.decode(action)

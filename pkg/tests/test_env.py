import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import edgesim as es
from edgesim.config import Status, Workload
from edgesim.env import ContinuumEnv, drain, run_episode
from reference_sim import compare, record_trace, simulate


def _mk_env(**over):
    cfg = es.desk_config(**over)
    topo = es.Topology.full(cfg.n_agents)
    return cfg, topo, ContinuumEnv(cfg, topo, seed=0)


def _workload(cfg, wid, source, t, size_mbits, timeout=None):
    timeout = cfg.timeout if timeout is None else timeout
    return Workload(id=wid, source=source, arrival_slot=t,
                    size_bits=size_mbits * 1e6, density_cpb=cfg.density_cpb,
                    deadline_slot=t + timeout - 1, arrival_flag=1)


def _run_empty(env, n):
    for _ in range(n):
        env.step({})


# -- waiting times -----------------------------------------------------------

def test_private_wait_worked_example_direct():
    _, _, env = _mk_env(arrival_prob=0.0)
    env._private[0].max_psi = 12   # completion history {3,4,5,12}
    assert env.private_wait(0, 5) == 8


def test_private_wait_worked_example_end_to_end():
    # place four workloads whose completions land on slots 3, 4, 5, 12
    cfg, _, env = _mk_env(arrival_prob=0.0, timeout=30,
                          size_set=(1.0, 2.0, 5.0, 11.0))
    env._place_local(_workload(cfg, 1, 0, 1, 5.0), 1)    # 3 exec slots -> 3
    env.step({})
    env._place_local(_workload(cfg, 2, 0, 2, 1.0), 2)    # wait 2 + 1 -> 4
    env.step({})
    env._place_local(_workload(cfg, 3, 0, 3, 1.0), 3)    # wait 2 + 1 -> 5
    env.step({})
    env._place_local(_workload(cfg, 4, 0, 4, 11.0), 4)   # wait 2 + 7 -> 12
    env.step({})
    assert env.t == 5
    assert env.private_wait(0, 5) == 8


def test_private_wait_empty_history():
    _, _, env = _mk_env(arrival_prob=0.0)
    assert env.private_wait(0, 1) == 0
    assert env.private_wait(3, 17) == 0


def test_private_wait_past_completion():
    _, _, env = _mk_env(arrival_prob=0.0)
    env._private[0].max_psi = 2
    assert env.private_wait(0, 5) == 0   # max{0, 2-5+1}


# -- local placement ---------------------------------------------------------

def test_place_local_two_slot_fixture():
    cfg, _, env = _mk_env(arrival_prob=0.0)
    psi = env._place_local(_workload(cfg, 1, 0, 1, 2.0), 1)
    assert psi == 2   # ceil(5.94e8 / 5e8) = 2 processing slots


def test_place_local_with_wait():
    cfg, _, env = _mk_env(arrival_prob=0.0)
    env._private[0].max_psi = 8   # tau = 8 at t = 1
    psi = env._place_local(_workload(cfg, 1, 0, 1, 2.0), 1)
    assert psi == 10   # min{1+8+2-1, 1+20-1}


def test_place_local_deadline_branch_drops():
    cfg, _, env = _mk_env(arrival_prob=0.0)
    env._private[0].max_psi = cfg.timeout   # tau = T_max at t = 1
    w = _workload(cfg, 1, 0, 1, 2.0)
    psi = env._place_local(w, 1)
    assert psi == w.deadline_slot == 20
    _run_empty(env, 20)
    out = env.outcomes[1]
    assert out.status is Status.DROPPED
    assert out.total_delay_slots == cfg.timeout


def test_place_local_rejects_null():
    cfg, _, env = _mk_env(arrival_prob=0.0)
    with pytest.raises(ValueError):
        env._place_local(Workload.null(0, 1), 1)


# -- offload placement -------------------------------------------------------

def test_place_offload_horizontal_fixture():
    cfg, _, env = _mk_env(arrival_prob=0.0)
    psi = env._place_offload(_workload(cfg, 1, 0, 1, 3.0), 1, 1)
    assert psi == 1   # ceil(3e6 / 3e6) = 1 transfer slot
    assert env._deliveries[2][0][0].id == 1   # lands in the public stack at 2


def test_place_offload_vertical_fixture():
    cfg, _, env = _mk_env(arrival_prob=0.0)
    psi = env._place_offload(_workload(cfg, 1, 0, 1, 5.0), cfg.cloud, 1)
    assert psi == 5   # ceil(5e6 / 1e6) = 5 transfer slots


def test_place_offload_full_wait_drops_without_transfer():
    cfg, _, env = _mk_env(arrival_prob=0.0)
    env._offload[0].max_psi = cfg.timeout
    w = _workload(cfg, 1, 0, 1, 3.0)
    env._place_offload(w, 1, 1)
    _run_empty(env, 20)
    out = env.outcomes[1]
    assert out.status is Status.DROPPED
    # dropped while still waiting: energy is pure offload-stack waiting
    assert out.total_energy_j == pytest.approx(
        cfg.slot_duration * cfg.powers.p_off * cfg.timeout)


def test_place_offload_rejects_unlinked():
    cfg = es.desk_config(arrival_prob=0.0)
    topo = es.Topology(np.zeros((cfg.n_agents, cfg.n_agents), dtype=np.int8))
    env = ContinuumEnv(cfg, topo, seed=0)
    with pytest.raises(ValueError):
        env._place_offload(_workload(cfg, 1, 0, 1, 3.0), 1, 1)
    with pytest.raises(ValueError):
        env._place_offload(_workload(cfg, 2, 0, 1, 3.0), 0, 1)


# -- public processor sharing ------------------------------------------------

def test_public_single_stack_rate_fixture():
    # 3 Mbit alone at an edge host: ~1.6835 Mbit/slot -> 2 execution slots
    cfg, _, env = _mk_env(arrival_prob=0.0)
    env._place_offload(_workload(cfg, 1, 0, 1, 3.0), 1, 1)
    _run_empty(env, 3)
    out = env.outcomes[1]
    assert out.status is Status.PROCESSED
    assert out.completion_slot == 3          # transfer 1, serve slots 2-3
    assert out.total_delay_slots == 3
    budget = cfg.slot_duration * cfg.f_public_edge / cfg.density_cpb
    assert budget == pytest.approx(1.6835e6, rel=1e-4)


def test_public_residual_after_one_slot():
    cfg, _, env = _mk_env(arrival_prob=0.0)
    env._place_offload(_workload(cfg, 1, 0, 1, 3.0), 1, 1)
    _run_empty(env, 2)   # slots 1 (transfer) and 2 (first service slot)
    lengths = env.source_public_lengths(0)   # hosts 1, 2, 3, cloud
    assert lengths[0] == pytest.approx(1.3165e6, rel=1e-3)


def test_public_two_stacks_halve_the_rate():
    cfg, _, env = _mk_env(arrival_prob=0.0)
    env._place_offload(_workload(cfg, 1, 0, 1, 3.0), 2, 1)
    env._place_offload(_workload(cfg, 2, 1, 1, 3.0), 2, 1)
    _run_empty(env, 6)
    for wid in (1, 2):
        out = env.outcomes[wid]
        assert out.status is Status.PROCESSED
        assert out.completion_slot == 5      # 1 transfer + 4 shared slots


def test_public_fifo_within_stack():
    # two workloads from the same source to the same host: strict FIFO
    cfg, _, env = _mk_env(arrival_prob=0.0, timeout=20)
    env._place_offload(_workload(cfg, 1, 0, 1, 3.0), 1, 1)
    env.step({})
    env._place_offload(_workload(cfg, 2, 0, 2, 2.0), 1, 2)
    _run_empty(env, 8)
    assert env.outcomes[1].completion_slot < env.outcomes[2].completion_slot


def test_public_deadline_drop_mid_processing():
    cfg, _, env = _mk_env(arrival_prob=0.0, timeout=3)
    w = _workload(cfg, 1, 0, 1, 5.0, timeout=3)
    env._place_offload(w, 1, 1)   # 1 transfer slot, deadline at slot 3
    _run_empty(env, 4)
    out = env.outcomes[1]
    assert out.status is Status.DROPPED
    assert out.completion_slot == 3
    assert out.total_delay_slots == 3


def test_complete_and_expire_same_slot_counts_processed():
    cfg, _, env = _mk_env(arrival_prob=0.0, timeout=3)
    # 1 transfer slot + 2 service slots finishes exactly on the deadline slot
    env._place_offload(_workload(cfg, 1, 0, 1, 3.0, timeout=3), 1, 1)
    _run_empty(env, 4)
    assert env.outcomes[1].status is Status.PROCESSED


# -- energy fixtures ---------------------------------------------------------

def test_energy_local_processed_fixture():
    cfg, _, env = _mk_env(arrival_prob=0.0)
    env._place_local(_workload(cfg, 1, 0, 1, 2.0), 1)
    _run_empty(env, 2)
    assert env.outcomes[1].total_energy_j == pytest.approx(0.2)   # 0.1*(0+1*2)


def test_energy_local_dropped_before_start_fixture():
    cfg, _, env = _mk_env(arrival_prob=0.0)
    env._private[0].max_psi = cfg.timeout
    env._place_local(_workload(cfg, 1, 0, 1, 2.0), 1)
    _run_empty(env, 20)
    # full timeout spent waiting at p_priv: 0.1 * 0.1 * 20
    assert env.outcomes[1].total_energy_j == pytest.approx(0.2)


def test_energy_offload_fixture():
    # 1 transfer slot + 2 edge execution slots, no waiting: 0.1*(0.2+2) = 0.22
    cfg, _, env = _mk_env(arrival_prob=0.0)
    env._place_offload(_workload(cfg, 1, 0, 1, 3.0), 1, 1)
    _run_empty(env, 3)
    assert env.outcomes[1].total_energy_j == pytest.approx(0.22)


# -- arrivals ----------------------------------------------------------------

def test_no_arrivals_at_zero_probability():
    _, _, env = _mk_env(arrival_prob=0.0)
    for t in range(1, 11):
        assert env.sample_arrivals(t) == {}
        env.step({})


def test_arrivals_every_slot_at_probability_one():
    cfg, _, env = _mk_env(arrival_prob=1.0)
    seen = []
    for t in range(1, cfg.horizon - cfg.drain_slots + 1):
        arrivals = env.sample_arrivals(t)
        assert set(arrivals) == set(range(cfg.n_agents))
        seen += [w.id for w in arrivals.values()]
        env.step({ea: es.PlacementDecision.local() for ea in arrivals})
    assert seen == sorted(seen)   # ids strictly increasing in issue order


def test_arrival_rate_matches_probability():
    cfg, _, env = _mk_env(arrival_prob=0.7, n_agents=4, horizon=2000,
                          drain_slots=0)
    count = 0
    slots = 1500
    for t in range(1, slots + 1):
        arrivals = env.sample_arrivals(t)
        count += len(arrivals)
        env.step({ea: es.PlacementDecision.local() for ea in arrivals})
    rate = count / (slots * cfg.n_agents)
    assert abs(rate - 0.7) < 0.02


def test_arrivals_stop_in_drain_window():
    cfg, _, env = _mk_env(arrival_prob=1.0)
    pol = es.make_policy("lop")
    run_episode(env, pol.decide)
    last_arrival = max(o.arrival_slot for o in env.outcomes.values())
    assert last_arrival <= cfg.horizon - cfg.drain_slots


def test_sizes_come_from_the_size_set():
    cfg, _, env = _mk_env(arrival_prob=1.0)
    sizes = set()
    for t in range(1, 30):
        arrivals = env.sample_arrivals(t)
        sizes |= {w.size_bits for w in arrivals.values()}
        env.step({ea: es.PlacementDecision.local() for ea in arrivals})
    assert sizes <= set(cfg.size_set_bits.tolist())


# -- step contract -----------------------------------------------------------

def test_step_rejects_decision_without_arrival():
    _, _, env = _mk_env(arrival_prob=0.0)
    with pytest.raises(ValueError):
        env.step({0: es.PlacementDecision.local()})


def test_step_requires_decision_for_arrival():
    _, _, env = _mk_env(arrival_prob=1.0)
    with pytest.raises(ValueError):
        env.step({})


def test_null_step_keeps_system_empty():
    _, _, env = _mk_env(arrival_prob=0.0)
    rep = env.step({})
    assert rep.resolved == [] and rep.arrivals == {}
    assert np.all(rep.loads == 0)


def test_determinism_same_seed():
    def run(seed):
        cfg, topo, _ = _mk_env()
        env = ContinuumEnv(cfg, topo, seed=seed)
        pol = es.make_policy("rp", np.random.default_rng(99))
        run_episode(env, pol.decide)
        drain(env)
        return {i: (o.status, o.completion_slot, o.total_energy_j)
                for i, o in env.outcomes.items()}
    assert run(5) == run(5)
    assert run(5) != run(6)


def test_drain_resolves_everything():
    cfg, _, env = _mk_env()
    pol = es.make_policy("rp", np.random.default_rng(1))
    run_episode(env, pol.decide)
    drain(env)
    c = env.counts()
    assert c["in_flight"] == 0
    assert c["arrived"] == c["processed"] + c["dropped"]


def test_throughput_matches_private_capacity():
    # single EA, local-only, saturated arrivals, no deadline pressure:
    # steady-state throughput equals the private CPU's slot capacity
    cfg, topo, _ = _mk_env(n_agents=1, arrival_prob=1.0, horizon=400,
                           drain_slots=0, timeout=10 ** 6, size_set=(2.0,))
    env = ContinuumEnv(cfg, topo, seed=3)
    pol = es.make_policy("lop")
    run_episode(env, pol.decide)
    done = [o for o in env.outcomes.values() if o.status is Status.PROCESSED]
    # 2 slots per workload -> about horizon/2 completions
    assert abs(len(done) - cfg.horizon / 2) <= 2


# -- oracle equivalence and properties ---------------------------------------

@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n_agents=st.integers(1, 3),
       policy=st.sampled_from(["rp", "rro", "mleo"]))
def test_matches_reference_simulation(seed, n_agents, policy):
    cfg = es.desk_config(n_agents=n_agents, horizon=25, drain_slots=5, timeout=8)
    topo = es.Topology.full(cfg.n_agents)
    env = ContinuumEnv(cfg, topo, seed=seed)
    pol = es.make_policy(policy, np.random.default_rng(seed + 77))
    trace = record_trace(env, pol)
    drain(env)
    ref = simulate(cfg, topo, trace, cfg.horizon + cfg.timeout)
    assert compare(env, ref) == []


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10 ** 6),
       prob=st.floats(0.1, 1.0),
       policy=st.sampled_from(["rp", "coo", "eeo", "rro", "mleo"]))
def test_conservation_and_bounds(seed, prob, policy):
    cfg = es.desk_config(arrival_prob=prob, horizon=30, drain_slots=5)
    topo = es.Topology.full(cfg.n_agents)
    env = ContinuumEnv(cfg, topo, seed=seed)
    pol = es.make_policy(policy, np.random.default_rng(seed))
    reports = run_episode(env, pol.decide)
    reports += drain(env)
    c = env.counts()
    assert c["arrived"] == c["processed"] + c["dropped"]
    for o in env.outcomes.values():
        assert 1 <= o.total_delay_slots <= cfg.timeout
        assert o.total_energy_j >= 0.0
    for rep in reports:
        assert np.all(rep.loads >= 0)
        assert all(v >= 0.0 for v in rep.lengths.values())

import logging
import math

import numpy as np
import pytest

from ltcr.agent import AgentConfig, CategoricalAgent, EpsilonSchedule
from ltcr.distributional import kl_divergence
from ltcr.envs import CartPoleEnv, SoloTeam
from ltcr.errors import ConfigError, ContractViolation
from ltcr.network import forward
from ltcr.protocol import (
    Demonstration,
    FeatureVector,
    PhaseSchedule,
    SharedMemory,
    pairwise_kl,
    phase_communicate,
    phase_digest,
    phase_explore,
    phase_revisit,
    run_round,
    soft_target,
    teammate_kl,
)

CFG = AgentConfig(hidden=(16,), warmup=50, batch_size=8, epsilon=EpsilonSchedule(horizon=500))


def make_team(n=2, seed=0, cfg=CFG):
    ss = np.random.SeedSequence(seed)
    a_ss, e_ss = ss.spawn(2)
    env = SoloTeam(CartPoleEnv, n, e_ss)
    agents = [CategoricalAgent(i, cfg, 4, 2, s) for i, s in enumerate(a_ss.spawn(n))]
    return agents, env


def snapshot(agent):
    return [a.copy() for a in agent.params.arrays()]


def same(agent, snap):
    return all(np.array_equal(a, b) for a, b in zip(agent.params.arrays(), snap))


def test_schedule_presets():
    assert PhaseSchedule.from_preset("9-1").revisit_steps == 9
    s = PhaseSchedule.from_preset("7-3", unit=2)
    assert (s.revisit_steps, s.digest_steps) == (14, 6)
    assert PhaseSchedule.from_preset("baseline").digest_steps == 0
    assert PhaseSchedule.from_preset("3:2").digest_steps == 2
    with pytest.raises(ConfigError):
        PhaseSchedule.from_preset("nine-one")
    with pytest.raises(ConfigError):
        PhaseSchedule(revisit_steps=-1)


def test_explore_zero_frames():
    agents, env = make_team()
    shared = SharedMemory(seed=0)
    phase_explore(agents, env, 0, shared)
    assert len(agents[0].replay) == 0 and len(shared) == 0


def test_explore_counts():
    agents, env = make_team(n=1)
    shared = SharedMemory(seed=0)
    phase_explore(agents, env, 100, shared, upload_rate=0.1)
    assert len(agents[0].replay) == 100
    assert agents[0].frame == 100
    # Binomial(100, 0.1): mean 10, sd 3.
    assert 1 <= len(shared) <= 22


def test_explore_attributes_both_agents():
    agents, env = make_team()
    shared = SharedMemory(seed=0)
    phase_explore(agents, env, 200, shared, upload_rate=0.2)
    assert shared.owners() == {0, 1}


def test_shared_memory_reservoir(caplog):
    shared = SharedMemory(capacity=3, seed=0)
    with caplog.at_level(logging.WARNING, logger="ltcr.protocol"):
        for i in range(5):
            shared.upload(0, np.array([float(i)]), 0)
    assert len(shared) == 3 and shared.uploaded == 5 and shared.evicted == 2
    assert "reservoir" in caplog.text


def test_reservoir_keeps_uniform_sample():
    # Every one of 50 uploads should survive with probability 10/50.
    kept = np.zeros(50)
    trials = 2_000
    for seed in range(trials):
        shared = SharedMemory(capacity=10, seed=seed)
        for i in range(50):
            shared.upload(0, np.array([float(i)]), 0)
        for f, _ in shared.features:
            kept[int(f.state[0])] += 1
    freq = kept / trials
    sd = np.sqrt(0.2 * 0.8 / trials)
    assert np.all(np.abs(freq - 0.2) < 5 * sd)
    assert abs(freq[:25].mean() - freq[25:].mean()) < 0.02


def fill(shared, n=20, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    for i in range(n):
        shared.upload(i % 2, rng.normal(size=dim), int(rng.integers(2)))


def test_communicate_single_feature_matches_forward():
    agents, _ = make_team()
    shared = SharedMemory(seed=1)
    fill(shared)
    demos = phase_communicate(agents[0], shared, 1)
    assert len(demos) == 1
    d = demos[0]
    np.testing.assert_array_equal(d.dist, forward(agents[0].params, d.feature.state)[d.feature.action])


def test_communicate_shared_subset_and_distinct_teachers():
    agents, _ = make_team()
    shared = SharedMemory(seed=1)
    fill(shared)
    d0 = phase_communicate(agents[0], shared, 8)
    d1 = phase_communicate(agents[1], shared, 8)
    assert [d.feature.key() for d in d0] == [d.feature.key() for d in d1]
    assert any(not np.allclose(a.dist, b.dist) for a, b in zip(d0, d1))


def test_communicate_empty_memory_is_noop():
    agents, _ = make_team()
    shared = SharedMemory(seed=0)
    assert phase_communicate(agents[0], shared, 4) == []
    assert shared.noops


def test_soft_target():
    f = FeatureVector(np.zeros(2), 0)
    a = Demonstration(f, 0, np.array([1.0, 0.0]), 0)
    b = Demonstration(f, 1, np.array([0.0, 1.0]), 0)
    np.testing.assert_array_equal(soft_target([a, b]), [0.5, 0.5])
    np.testing.assert_array_equal(soft_target([a]), [1.0, 0.0])
    rng = np.random.default_rng(0)
    ds = [Demonstration(f, i, rng.dirichlet(np.ones(6)), 0) for i in range(3)]
    assert abs(soft_target(ds).sum() - 1.0) < 1e-9
    with pytest.raises(ContractViolation):
        soft_target([])


def committed_from(teachers, shared, n=16):
    for t in teachers:
        phase_communicate(t, shared, n)
    shared.commit()


def test_digest_excludes_own_demonstrations():
    agents, _ = make_team()
    shared = SharedMemory(seed=2)
    fill(shared)
    committed_from([agents[0]], shared)
    snap = snapshot(agents[0])
    assert math.isnan(phase_digest(agents[0], shared, 3))
    assert same(agents[0], snap)
    assert any("no foreign" in n for n in shared.noops)


def test_digest_hand_three_atom_case():
    cfg = AgentConfig(v_min=0.0, v_max=2.0, atoms=3, hidden=(4,))
    student = CategoricalAgent(0, cfg, 2, 2, 0)
    shared = SharedMemory(seed=0)
    f = FeatureVector(np.array([0.2, -0.4]), 1)
    target = np.array([0.1, 0.6, 0.3])
    shared.publish([Demonstration(f, 1, target, 0)])
    shared.commit()
    want = kl_divergence(target, forward(student.params, f.state)[1])
    assert phase_digest(student, shared, 1) == pytest.approx(want, abs=1e-12)
    assert student.distill_updates == 1


def test_digest_zero_loss_when_matched():
    agents, _ = make_team()
    clone = CategoricalAgent(1, CFG, 4, 2, 0)
    clone.params = agents[0].params.copy()
    shared = SharedMemory(seed=3)
    fill(shared)
    committed_from([clone], shared)
    snap = snapshot(agents[0])
    assert phase_digest(agents[0], shared, 1) < 1e-12
    for a, b in zip(agents[0].params.arrays(), snap):
        np.testing.assert_allclose(a, b, atol=1e-9)


def test_digest_converges_to_frozen_teacher_and_leaves_it_untouched():
    cfg = AgentConfig(hidden=(32,), lr=1e-3)
    student = CategoricalAgent(0, cfg, 4, 2, 0)
    teacher = CategoricalAgent(1, cfg, 4, 2, 1)
    shared = SharedMemory(seed=4)
    fill(shared, n=64)
    committed_from([teacher], shared, n=32)
    teacher_snap = snapshot(teacher)
    phase_digest(student, shared, 3_000)
    assert same(teacher, teacher_snap)
    probe = [d.feature for d in shared.committed()]
    assert teammate_kl(teacher, student, probe, symmetric=False) < 1e-3


def test_revisit_zero_epochs_and_insufficient_replay():
    agents, env = make_team()
    snap = snapshot(agents[0])
    assert phase_revisit(agents[0], 5) == ([], 0)  # empty replay
    phase_explore(agents, env, 100, None)
    trace, steps = phase_revisit(agents[0], 0)
    assert steps == 0 and same(agents[0], snap)
    trace, steps = phase_revisit(agents[0], 4)
    assert steps == 4 and all(math.isfinite(x) for x in trace)


def test_round_cadence_nine_one():
    agents, env = make_team()
    shared = SharedMemory(seed=0)
    sched = PhaseSchedule.from_preset("9-1", comm_period=100)
    reports = [run_round(agents, env, sched, shared, i) for i in range(30)]
    # Frames 10..300: communication at frames 100, 200 and 300.
    assert [r.frame for r in reports if r.communicated] == [100, 200, 300]
    warm = [r for r in reports if r.frame >= CFG.warmup]
    assert all(r.c51_steps[0] == 9 for r in warm)
    # Digest runs once per round after the first committed round.
    assert agents[0].distill_updates == 30 - 9
    assert agents[0].c51_updates == 9 * len(warm)


def test_pairwise_kl_counts():
    agents, env = make_team(2)
    shared = SharedMemory(seed=0)
    probe = [FeatureVector(np.zeros(4), 0), FeatureVector(np.ones(4), 1)]
    r = run_round(agents, env, PhaseSchedule(), shared, probe=probe)
    assert list(r.teammate_kl) == [(0, 1)]
    agents4, _ = make_team(4)
    assert len(pairwise_kl(agents4, probe)) == 6


def test_teammate_kl_properties():
    a, b = make_team(2)[0]
    probe = [FeatureVector(np.random.default_rng(i).normal(size=4), i % 2) for i in range(10)]
    clone = CategoricalAgent(5, CFG, 4, 2, 0)
    clone.params = a.params.copy()
    assert teammate_kl(a, clone, probe) == 0.0
    assert teammate_kl(a, b, probe) == teammate_kl(b, a, probe)
    assert teammate_kl(a, b, probe) > 0
    with pytest.raises(ContractViolation):
        teammate_kl(a, b, [])


def test_failed_communication_aborts_round(monkeypatch):
    agents, env = make_team()
    shared = SharedMemory(seed=0)
    sched = PhaseSchedule.from_preset("9-1", comm_period=10)
    run_round(agents, env, sched, shared)
    first = shared.committed()
    assert shared.round == 1 and first

    import ltcr.protocol as proto

    real = proto.forward_batch

    def flaky(params, states):
        if params is agents[1].params:
            raise RuntimeError("agent 1 crashed")
        return real(params, states)

    monkeypatch.setattr(proto, "forward_batch", flaky)
    with pytest.raises(RuntimeError):
        run_round(agents, env, sched, shared)
    assert shared.round == 1
    assert shared.committed() is first
    monkeypatch.setattr(proto, "forward_batch", real)
    run_round(agents, env, sched, shared)
    assert shared.round == 2
    assert {d.teacher_id for d in shared.committed()} == {0, 1}


def test_digest_zero_reduces_to_plain_c51():
    """A digest-free schedule trains exactly like a hand-written independent learner loop."""
    agents, env = make_team(seed=7)
    shared = SharedMemory(seed=0)
    sched = PhaseSchedule(revisit_steps=9, digest_steps=0)
    for i in range(40):
        run_round(agents, env, sched, shared, i)

    ref_agents, ref_env = make_team(seed=7)
    from ltcr.agent import Transition

    for _ in range(40):
        for _ in range(10):
            obs = ref_env.observations()
            acts = [a.act(o) for a, o in zip(ref_agents, obs)]
            res = ref_env.step(acts)
            for a, o, act, r in zip(ref_agents, obs, acts, res):
                a.frame += 1
                a.upload_rng.random()  # the upload coin is its own stream; draw to mirror the count
                a.remember(Transition(o, act, r.reward, r.observation, r.terminal and not r.truncated))
        for a in ref_agents:
            if len(a.replay) >= max(a.config.batch_size, a.config.warmup):
                a.maybe_sync_target()
                for _ in range(9):
                    a.train_step(a.replay.sample(a.config.batch_size))
    for a, b in zip(agents, ref_agents):
        for x, y in zip(a.params.arrays(), b.params.arrays()):
            assert x.tobytes() == y.tobytes()
    assert shared.round == 0 and all(a.distill_updates == 0 for a in agents)

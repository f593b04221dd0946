"""Peer teaching by distilling categorical value distributions.

A round runs four phases for the whole team, with a barrier between phases:

* Explore     - act, fill private replay, upload a fraction of visited (s, a)
                features to the shared memory.
* Communicate - every ``comm_period`` frames, draw a feature subset from the
                shared memory; each agent publishes its distribution at every
                feature; the round is committed atomically.
* Digest      - ``digest_steps`` distillation steps towards the average of
                the teammates' (never one's own) published distributions.
* Revisit     - ``revisit_steps`` C51 steps on private replay.

With ``digest_steps == 0`` the loop is exactly independent C51 learning.
"""
from __future__ import annotations

import itertools
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .agent import CategoricalAgent, Transition
from .distributional import kl_rows
from .errors import ConfigError, ContractViolation
from .network import forward_batch, kl_loss_and_grad, optimize_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureVector:
    state: np.ndarray
    action: int

    def key(self) -> tuple[bytes, int]:
        return np.asarray(self.state, dtype=np.float64).tobytes(), int(self.action)


@dataclass(frozen=True)
class Demonstration:
    feature: FeatureVector
    teacher_id: int
    dist: np.ndarray
    round: int


PRESETS = {
    "baseline": (9, 0),
    "9-1": (9, 1),
    "7-3": (7, 3),
    "5-5": (5, 5),
}


@dataclass(frozen=True)
class PhaseSchedule:
    revisit_steps: int = 9
    digest_steps: int = 1
    explore_frames: int = 10
    comm_period: int = 1_000

    def __post_init__(self) -> None:
        if self.revisit_steps < 0 or self.digest_steps < 0:
            raise ConfigError("revisit and digest step counts must be >= 0")
        if self.explore_frames < 1 or self.comm_period < 1:
            raise ConfigError("explore_frames and comm_period must be >= 1")

    @classmethod
    def from_preset(cls, name: str, unit: int = 1, **kw) -> "PhaseSchedule":
        """``baseline``, ``9-1``, ``7-3``, ``5-5`` or a custom ``revisit:digest``."""
        if name in PRESETS:
            revisit, digest = PRESETS[name]
        else:
            parts = name.replace("-", ":").split(":")
            try:
                revisit, digest = (int(p) for p in parts)
            except ValueError:
                raise ConfigError(f"unknown schedule {name!r}") from None
        return cls(revisit_steps=revisit * unit, digest_steps=digest * unit, **kw)


class SharedMemory:
    """The common store M0: uploaded features plus committed demonstration rounds.

    Features are a uniform reservoir sample of everything uploaded, at most
    ``capacity`` of them.  Demonstrations are staged by `publish` and only
    become visible through `committed` after `commit`, which swaps the whole
    round in under a lock.
    """

    def __init__(self, capacity: int = 10_000, seed: np.random.SeedSequence | int = 0):
        self.capacity = capacity
        self.features: list[tuple[FeatureVector, int]] = []
        self.uploaded = 0
        self.evicted = 0
        self.round = 0
        self.rng = np.random.default_rng(seed)
        self.noops: list[str] = []
        self._lock = threading.RLock()
        self._subset: list[FeatureVector] | None = None
        self._staged: list[Demonstration] = []
        self._committed: tuple[Demonstration, ...] = ()

    def __len__(self) -> int:
        return len(self.features)

    def upload(self, owner: int, state: np.ndarray, action: int) -> None:
        with self._lock:
            self.uploaded += 1
            s = np.array(state, dtype=np.float64)
            s.setflags(write=False)
            item = (FeatureVector(s, int(action)), owner)
            if len(self.features) < self.capacity:
                self.features.append(item)
                return
            # Reservoir step: keep the new feature with probability capacity / uploaded.
            self.evicted += 1
            if self.evicted == 1:
                log.warning("shared memory full (%d features); reservoir sampling from now on", self.capacity)
            j = int(self.rng.integers(self.uploaded))
            if j < self.capacity:
                self.features[j] = item

    def owners(self) -> set[int]:
        return {o for _, o in self.features}

    def round_subset(self, n: int) -> list[FeatureVector]:
        """The feature subset for the round being staged, drawn once per round."""
        with self._lock:
            if self._subset is None:
                if not self.features:
                    return []
                k = min(n, len(self.features))
                idx = np.sort(self.rng.choice(len(self.features), size=k, replace=False))
                self._subset = [self.features[i][0] for i in idx]
            return self._subset

    def publish(self, demos: Iterable[Demonstration]) -> None:
        with self._lock:
            self._staged.extend(demos)

    def commit(self) -> int:
        with self._lock:
            self._committed = tuple(self._staged)
            self._staged = []
            self._subset = None
            self.round += 1
            return self.round

    def abort(self) -> None:
        with self._lock:
            self._staged = []
            self._subset = None

    def committed(self) -> tuple[Demonstration, ...]:
        with self._lock:
            return self._committed


def soft_target(demos: Sequence[Demonstration]) -> np.ndarray:
    """Element-wise mean of the teachers' distributions for one feature."""
    if not demos:
        raise ContractViolation("soft_target needs at least one demonstration")
    if len(demos) == 1:
        return np.array(demos[0].dist, dtype=np.float64)
    return np.mean([d.dist for d in demos], axis=0)


def phase_explore(
    agents: Sequence[CategoricalAgent],
    env,
    frames: int,
    shared: SharedMemory | None,
    upload_rate: float = 0.1,
) -> None:
    """Act for ``frames`` team steps, storing transitions and uploading features."""
    for _ in range(frames):
        obs = env.observations()
        actions: list[int | None] = []
        for i, agent in enumerate(agents):
            actions.append(agent.act(obs[i]) if env.active(i) else None)
        results = env.step(actions)
        for i, agent in enumerate(agents):
            agent.frame += 1
            res = results[i]
            if res is None or actions[i] is None:
                continue
            agent.remember(
                Transition(obs[i], actions[i], res.reward, res.observation, res.terminal and not res.truncated)
            )
            if shared is not None and agent.upload_rng.random() < upload_rate:
                shared.upload(agent.agent_id, obs[i], actions[i])


def phase_communicate(agent: CategoricalAgent, shared: SharedMemory, subset_size: int) -> list[Demonstration]:
    """Publish the agent's distributions on this round's feature subset."""
    subset = shared.round_subset(subset_size)
    if not subset:
        shared.noops.append(f"round {shared.round}: empty shared memory, agent {agent.agent_id} skipped")
        return []
    states = np.stack([f.state for f in subset])
    actions = np.array([f.action for f in subset])
    probs = forward_batch(agent.params, states).probs[np.arange(len(subset)), actions]
    demos = []
    for f, p in zip(subset, probs):
        p = p.copy()
        p.setflags(write=False)
        demos.append(Demonstration(f, agent.agent_id, p, shared.round))
    shared.publish(demos)
    return demos


def digest_targets(agent_id: int, demos: Sequence[Demonstration]):
    """Stack (states, actions, soft targets) from foreign demonstrations, in first-seen order."""
    grouped: dict[tuple[bytes, int], list[Demonstration]] = {}
    for d in demos:
        if d.teacher_id == agent_id:
            continue
        grouped.setdefault(d.feature.key(), []).append(d)
    if not grouped:
        return None
    groups = list(grouped.values())
    states = np.stack([g[0].feature.state for g in groups])
    actions = np.array([g[0].feature.action for g in groups])
    targets = np.stack([soft_target(g) for g in groups])
    return states, actions, targets


def phase_digest(agent: CategoricalAgent, shared: SharedMemory, epochs: int) -> float:
    """Distil towards the teammates' committed demonstrations for ``epochs`` steps.

    Returns the mean KL(teacher || student) measured at the last step, or NaN
    when nothing was done.
    """
    if epochs <= 0:
        return math.nan
    data = digest_targets(agent.agent_id, shared.committed())
    if data is None:
        shared.noops.append(f"round {shared.round}: no foreign demonstrations for agent {agent.agent_id}")
        return math.nan
    states, actions, targets = data
    loss = math.nan
    for _ in range(epochs):
        losses, grads = kl_loss_and_grad(agent.params, states, actions, targets)
        optimize_step(agent.params, agent.opt, grads)
        agent.distill_updates += 1
        loss = float(losses.mean())
    return loss


def phase_revisit(agent: CategoricalAgent, epochs: int) -> tuple[list[float], int]:
    """Up to ``epochs`` C51 steps on private replay; returns (loss trace, steps done)."""
    cfg = agent.config
    if len(agent.replay) < max(cfg.batch_size, cfg.warmup):
        return [], 0
    agent.maybe_sync_target()
    trace = [agent.train_step(agent.replay.sample(cfg.batch_size)) for _ in range(epochs)]
    return trace, len(trace)


def teammate_kl(
    agent_a: CategoricalAgent,
    agent_b: CategoricalAgent,
    probe: Sequence[FeatureVector],
    symmetric: bool = True,
) -> float:
    """Mean KL between two agents' distributions over a fixed probe set."""
    if not probe:
        raise ContractViolation("teammate_kl needs a non-empty probe set")
    states = np.stack([f.state for f in probe])
    idx = np.arange(len(probe))
    actions = np.array([f.action for f in probe])
    pa = forward_batch(agent_a.params, states).probs[idx, actions]
    pb = forward_batch(agent_b.params, states).probs[idx, actions]
    ab = kl_rows(pa, pb).mean()
    if not symmetric:
        return float(ab)
    return float(0.5 * (ab + kl_rows(pb, pa).mean()))


def pairwise_kl(agents: Sequence[CategoricalAgent], probe: Sequence[FeatureVector]) -> dict[tuple[int, int], float]:
    return {
        (a.agent_id, b.agent_id): teammate_kl(a, b, probe)
        for a, b in itertools.combinations(agents, 2)
    }


@dataclass
class RoundReport:
    round_index: int
    frame: int
    communicated: bool
    c51_loss: dict[int, float] = field(default_factory=dict)
    c51_steps: dict[int, int] = field(default_factory=dict)
    distill_loss: dict[int, float] = field(default_factory=dict)
    episode_returns: dict[int, list[float]] = field(default_factory=dict)
    teammate_kl: dict[tuple[int, int], float] = field(default_factory=dict)


def run_round(
    agents: Sequence[CategoricalAgent],
    env,
    schedule: PhaseSchedule,
    shared: SharedMemory,
    round_index: int = 0,
    subset_size: int = 64,
    upload_rate: float = 0.1,
    probe: Sequence[FeatureVector] | None = None,
) -> RoundReport:
    """One Explore -> Communicate -> Digest -> Revisit pass for the whole team."""
    ids = [a.agent_id for a in agents]
    if len({a.grid.K for a in agents}) != 1 or len({(a.grid.v_min, a.grid.v_max) for a in agents}) != 1:
        raise ContractViolation("all agents in a team must share one support grid")
    start = agents[0].frame
    seen = [len(r) for r in env.episode_returns]

    phase_explore(agents, env, schedule.explore_frames, shared, upload_rate)

    end = agents[0].frame
    communicated = False
    if schedule.digest_steps > 0 and end // schedule.comm_period > start // schedule.comm_period:
        try:
            for a in agents:
                phase_communicate(a, shared, subset_size)
        except Exception:
            shared.abort()
            raise
        shared.commit()
        communicated = True

    report = RoundReport(round_index, end, communicated)
    for a in agents:
        report.distill_loss[a.agent_id] = phase_digest(a, shared, schedule.digest_steps)
    for a in agents:
        trace, steps = phase_revisit(a, schedule.revisit_steps)
        report.c51_loss[a.agent_id] = float(np.mean(trace)) if trace else math.nan
        report.c51_steps[a.agent_id] = steps
    for i, aid in enumerate(ids):
        report.episode_returns[aid] = list(env.episode_returns[i][seen[i]:])
    if probe:
        report.teammate_kl = pairwise_kl(agents, probe)
    return report

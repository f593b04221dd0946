"""Single Categorical DQN learner.

One frame is one environment step.  Acting, replay sampling and evaluation
draw from separate random streams so that adding or removing evaluation or
distillation never perturbs the training trajectory.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .distributional import SupportGrid, make_support, project_batch
from .errors import ContractViolation
from .network import (
    NetworkParams,
    OptimizerState,
    forward,
    forward_batch,
    init_params,
    kl_loss_and_grad,
    optimize_step,
    sync_target,
)


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling; oldest entries are evicted first."""

    def __init__(self, capacity: int, state_dim: int, rng: np.random.Generator):
        if capacity < 1:
            raise ContractViolation("replay capacity must be >= 1")
        self.capacity = capacity
        self.rng = rng
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.position = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self.position
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.terminals[i] = t.terminal
        self.position = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int):
        if self.size < batch_size:
            raise ContractViolation(f"cannot sample {batch_size} from a buffer holding {self.size}")
        idx = self.rng.integers(0, self.size, size=batch_size)
        return (
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.terminals[idx],
        )


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.01
    horizon: int = 10_000
    evaluation: float = 0.001

    def value(self, frame: int) -> float:
        if self.horizon <= 0 or frame >= self.horizon:
            return self.end
        return self.start + (self.end - self.start) * (frame / self.horizon)


@dataclass
class AgentConfig:
    v_min: float = 0.0
    v_max: float = 200.0
    atoms: int = 51
    hidden: Sequence[int] = (64, 64)
    lr: float = 1e-4
    gamma: float = 0.99
    batch_size: int = 32
    replay_capacity: int = 50_000
    target_sync_interval: int = 500
    warmup: int = 1_000
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)


class CategoricalAgent:
    def __init__(
        self,
        agent_id: int,
        config: AgentConfig,
        state_dim: int,
        action_count: int,
        seed: np.random.SeedSequence | int,
    ):
        if not 0.0 <= config.gamma <= 1.0:
            raise ContractViolation(f"discount must lie in [0, 1], got {config.gamma}")
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        init_ss, act_ss, replay_ss, upload_ss = ss.spawn(4)
        self.agent_id = agent_id
        self.config = config
        self.state_dim = state_dim
        self.action_count = action_count
        self.grid: SupportGrid = make_support(config.v_min, config.v_max, config.atoms)
        self.params: NetworkParams = init_params(
            state_dim, config.hidden, action_count, config.atoms, np.random.default_rng(init_ss)
        )
        self.target: NetworkParams = sync_target(self.params)
        self.opt = OptimizerState.for_params(self.params, lr=config.lr)
        self.rng = np.random.default_rng(act_ss)
        self.upload_rng = np.random.default_rng(upload_ss)
        self.replay = ReplayBuffer(config.replay_capacity, state_dim, np.random.default_rng(replay_ss))
        self.frame = 0
        self.last_sync_frame = 0
        self.c51_updates = 0
        self.distill_updates = 0

    @property
    def epsilon(self) -> float:
        return self.config.epsilon.value(self.frame)

    def act(
        self,
        state: np.ndarray,
        frame: int | None = None,
        evaluation: bool = False,
        rng: np.random.Generator | None = None,
    ) -> int:
        """Epsilon-greedy over mean action values."""
        rng = self.rng if rng is None else rng
        if evaluation:
            eps = self.config.epsilon.evaluation
        else:
            eps = self.config.epsilon.value(self.frame if frame is None else frame)
        if rng.random() < eps:
            return int(rng.integers(self.action_count))
        return self.greedy(state)

    def greedy(self, state: np.ndarray) -> int:
        dists = forward(self.params, state)
        return int(np.argmax(dists @ self.grid.atoms))

    def remember(self, t: Transition) -> None:
        self.replay.add(t)

    def maybe_sync_target(self) -> bool:
        if self.frame - self.last_sync_frame >= self.config.target_sync_interval:
            self.target = sync_target(self.params)
            self.last_sync_frame = self.frame
            return True
        return False

    def c51_targets(self, rewards, next_states, terminals) -> np.ndarray:
        probs = forward_batch(self.target, next_states).probs
        best = np.argmax(probs @ self.grid.atoms, axis=1)
        next_d = probs[np.arange(len(best)), best]
        return project_batch(self.grid, rewards, self.config.gamma, next_d, terminals)

    def train_step(self, batch) -> float:
        """One C51 update on ``batch``; returns the mean KL before the update."""
        states, actions, rewards, next_states, terminals = batch
        if len(actions) == 0:
            raise ContractViolation("train_step needs a non-empty batch")
        targets = self.c51_targets(np.asarray(rewards, dtype=np.float64), next_states, np.asarray(terminals))
        losses, grads = kl_loss_and_grad(self.params, states, np.asarray(actions), targets)
        optimize_step(self.params, self.opt, grads)
        self.c51_updates += 1
        return float(losses.mean())

    def train_on_transitions(self, transitions: Sequence[Transition]) -> float:
        if not transitions:
            raise ContractViolation("train_step needs a non-empty batch")
        batch = (
            np.stack([t.state for t in transitions]),
            np.array([t.action for t in transitions]),
            np.array([t.reward for t in transitions], dtype=np.float64),
            np.stack([t.next_state for t in transitions]),
            np.array([t.terminal for t in transitions]),
        )
        return self.train_step(batch)

    def evaluate(self, env, episodes: int, rng: np.random.Generator) -> float:
        """Mean undiscounted return of ``episodes`` evaluation-epsilon episodes.

        ``env`` needs ``reset(seed) -> obs`` and ``step(action) -> StepResult``.
        """
        returns = []
        for _ in range(episodes):
            obs = env.reset(int(rng.integers(2**31)))
            total = 0.0
            while True:
                res = env.step(self.act(obs, evaluation=True, rng=rng))
                total += res.reward
                obs = res.observation
                if res.terminal:
                    break
            returns.append(total)
        return float(np.mean(returns))

"""Uniform multi-agent stepping for the training loop.

`SoloTeam` gives every agent its own single-player environment; `BattleTeam`
puts every learner into one shared Space Battle world.  Both auto-reset
finished episodes from their own seed stream and expose the same surface:
``observations()``, ``active(i)``, ``step(actions)``.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .base import StepResult
from .cartpole import CartPoleEnv
from .spacebattle import SpaceBattleConfig, SpaceBattleEnv


def _next_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2**31))


class SoloTeam:
    def __init__(self, make_env: Callable[[], object], n_agents: int, seed: np.random.SeedSequence):
        self.envs = [make_env() for _ in range(n_agents)]
        self.rngs = [np.random.default_rng(s) for s in seed.spawn(n_agents)]
        self.obs = [env.reset(_next_seed(r)) for env, r in zip(self.envs, self.rngs)]
        self.episode_returns: list[list[float]] = [[] for _ in range(n_agents)]
        self._running = [0.0] * n_agents

    @property
    def n_agents(self) -> int:
        return len(self.envs)

    @property
    def obs_dim(self) -> int:
        return self.envs[0].obs_dim

    @property
    def action_count(self) -> int:
        return self.envs[0].action_count

    def observations(self) -> list[np.ndarray]:
        return list(self.obs)

    def active(self, i: int) -> bool:
        return True

    def step(self, actions: Sequence[int | None]) -> list[StepResult | None]:
        results = []
        for i, (env, a) in enumerate(zip(self.envs, actions)):
            res = env.step(a)
            self._running[i] += res.reward
            if res.terminal:
                self.episode_returns[i].append(self._running[i])
                self._running[i] = 0.0
                self.obs[i] = env.reset(_next_seed(self.rngs[i]))
            else:
                self.obs[i] = res.observation
            results.append(res)
        return results


class BattleTeam:
    def __init__(self, config: SpaceBattleConfig, seed: np.random.SeedSequence):
        self.env = SpaceBattleEnv(config)
        self.rng = np.random.default_rng(seed)
        self.obs = self.env.reset(_next_seed(self.rng))
        n = self.env.n_agents
        self.episode_returns: list[list[float]] = [[] for _ in range(n)]
        self._running = [0.0] * n
        self._alive = [True] * n

    @property
    def n_agents(self) -> int:
        return self.env.n_agents

    @property
    def obs_dim(self) -> int:
        return self.env.obs_dim

    @property
    def action_count(self) -> int:
        return self.env.action_count

    def observations(self) -> list[np.ndarray]:
        return list(self.obs)

    def active(self, i: int) -> bool:
        return self._alive[i]

    def step(self, actions: Sequence[int | None]) -> list[StepResult | None]:
        joint = [0 if a is None else a for a in actions]
        res = self.env.step(joint)
        out: list[StepResult | None] = []
        for i, r in enumerate(res):
            if not self._alive[i]:
                out.append(None)
                continue
            self._running[i] += r.reward
            self._alive[i] = self.env.alive(i)
            out.append(r)
        if self.env.world.done:
            for i in range(self.n_agents):
                self.episode_returns[i].append(self._running[i])
            self._running = [0.0] * self.n_agents
            self._alive = [True] * self.n_agents
            self.obs = self.env.reset(_next_seed(self.rng))
        else:
            self.obs = [r.observation for r in res]
        return out


def evaluate_team(agents, kind: str, env_config, episodes: int, rng: np.random.Generator) -> list[float]:
    """Mean evaluation-epsilon return per agent.

    Single-player agents are evaluated one after another on fresh CartPole
    instances; Space Battle learners play the same episodes together.
    """
    if kind == "cartpole":
        return [a.evaluate(CartPoleEnv(), episodes, rng) for a in agents]
    env = SpaceBattleEnv(env_config)
    totals = np.zeros(len(agents))
    for _ in range(episodes):
        obs = env.reset(_next_seed(rng))
        alive = [True] * len(agents)
        while True:
            acts = [a.act(o, evaluation=True, rng=rng) if alive[i] else 0 for i, (a, o) in enumerate(zip(agents, obs))]
            res = env.step(acts)
            for i, r in enumerate(res):
                if alive[i]:
                    totals[i] += r.reward
                    alive[i] = env.alive(i)
            obs = [r.observation for r in res]
            if env.world.done:
                break
    return list(totals / episodes)

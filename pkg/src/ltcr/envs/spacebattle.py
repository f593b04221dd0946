"""Two-team ship battle on a toroidal 2-D world.

Team 0 is driven by learners.  Team 1 is either a scripted patrol (default) or
external (its actions are passed to `spacebattle_step` after team 0's).

Headings are integer multiples of the turn angle, so turning is exact.
Actions: 0 turn counter-clockwise, 1 turn clockwise, 2 move, 3 fire.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ConfigError, ContractViolation
from .base import StepResult

TURN_CCW, TURN_CW, MOVE, FIRE = 0, 1, 2, 3
ACTION_COUNT = 4
OWN_DIM = 6
OTHER_DIM = 4  # body-frame dx, dy, relative heading, alive


@dataclass
class SpaceBattleConfig:
    team_size: int = 2
    world_size: float = 100.0
    headings: int = 32  # turn angle = 2*pi / headings = pi/16
    move_speed: float = 1.0
    move_fuel: float = 0.1
    projectile_speed: float = 3.0
    projectile_lifetime: int = 20
    projectile_damage: float = 10.0
    hit_radius: float = 2.0
    ram_radius: float = 2.0
    ram_damage: float = 5.0
    missiles: int = 50
    fuel: float = 500.0
    health: float = 100.0
    max_steps: int = 1000
    reward_hit: float = 5.0
    reward_ram: float = 1.0
    reward_hit_received: float = -5.0
    reward_elimination: float = 20.0
    enemy: str = "scripted"  # or "external"
    enemy_fire_range: float = 30.0
    enemy_fire_cone: float = math.pi / 12
    enemy_fire_cooldown: int = 10
    enemy_turn_period: int = 30

    def __post_init__(self) -> None:
        if self.team_size < 1:
            raise ConfigError("team_size must be >= 1")
        if self.enemy not in ("scripted", "external"):
            raise ConfigError(f"enemy must be 'scripted' or 'external', got {self.enemy!r}")
        if self.world_size <= 0 or self.headings < 4:
            raise ConfigError("world_size must be positive and headings >= 4")

    @property
    def turn_angle(self) -> float:
        return 2.0 * math.pi / self.headings

    @property
    def obs_dim(self) -> int:
        return OWN_DIM + (2 * self.team_size - 1) * OTHER_DIM


@dataclass
class Ship:
    team: int
    x: float
    y: float
    heading: int
    missiles: int
    fuel: float
    health: float
    cooldown: int = 0

    @property
    def alive(self) -> bool:
        return self.health > 0


@dataclass
class Projectile:
    x: float
    y: float
    heading: int
    owner: int
    ttl: int


@dataclass
class SpaceBattleWorld:
    config: SpaceBattleConfig
    ships: list[Ship]
    projectiles: list[Projectile] = field(default_factory=list)
    step_count: int = 0
    scores: list[float] = field(default_factory=lambda: [0.0, 0.0])
    done: bool = False
    rng: np.random.Generator = field(default_factory=np.random.default_rng, repr=False)

    @property
    def controlled(self) -> list[int]:
        M = self.config.team_size
        return list(range(M)) if self.config.enemy == "scripted" else list(range(2 * M))

    def theta(self, heading: int) -> float:
        return heading * self.config.turn_angle

    def team_alive(self, team: int) -> bool:
        return any(s.alive for s in self.ships if s.team == team)

    def snapshot(self) -> dict:
        return {
            "step": self.step_count,
            "ships": [asdict(s) for s in self.ships],
            "projectiles": [asdict(p) for p in self.projectiles],
            "scores": list(self.scores),
        }


def spacebattle_reset(config: SpaceBattleConfig, seed: int) -> SpaceBattleWorld:
    rng = np.random.default_rng(seed)
    L = config.world_size
    ships = []
    for team in (0, 1):
        lo = 0.1 * L if team == 0 else 0.6 * L
        for _ in range(config.team_size):
            ships.append(
                Ship(
                    team=team,
                    x=float(rng.uniform(lo, lo + 0.3 * L)),
                    y=float(rng.uniform(0.1 * L, 0.9 * L)),
                    heading=int(rng.integers(config.headings)),
                    missiles=config.missiles,
                    fuel=config.fuel,
                    health=config.health,
                )
            )
    return SpaceBattleWorld(config, ships, rng=rng)


def _wrap_delta(d: float, L: float) -> float:
    return (d + 0.5 * L) % L - 0.5 * L


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def observe(world: SpaceBattleWorld, agent_id: int) -> np.ndarray:
    """Own normalised 6-tuple, then (dx, dy, relative heading, alive) per other ship.

    Other ships are ordered teammates first, then enemies, by index.  Offsets
    are minimal-image vectors rotated into the observer's body frame.  A dead
    observer gets an all-zero vector (health 0 doubles as the dead flag).
    """
    cfg = world.config
    out = np.zeros(cfg.obs_dim)
    me = world.ships[agent_id]
    if not me.alive:
        return out
    L = cfg.world_size
    half = 0.5 * L
    my_theta = world.theta(me.heading)
    out[0] = me.x / half - 1.0
    out[1] = me.y / half - 1.0
    out[2] = _wrap_angle(my_theta) / math.pi
    out[3] = me.missiles / cfg.missiles if cfg.missiles else 0.0
    out[4] = me.fuel / cfg.fuel if cfg.fuel else 0.0
    out[5] = me.health / cfg.health
    c, s = math.cos(my_theta), math.sin(my_theta)
    scale = half * math.sqrt(2.0)
    others = [i for i, o in enumerate(world.ships) if i != agent_id]
    others.sort(key=lambda i: (world.ships[i].team != me.team, i))
    for slot, i in enumerate(others):
        o = world.ships[i]
        if not o.alive:
            continue
        dx = _wrap_delta(o.x - me.x, L)
        dy = _wrap_delta(o.y - me.y, L)
        base = OWN_DIM + slot * OTHER_DIM
        out[base] = (c * dx + s * dy) / scale
        out[base + 1] = (-s * dx + c * dy) / scale
        out[base + 2] = _wrap_angle(world.theta(o.heading - me.heading)) / math.pi
        out[base + 3] = 1.0
    return out


def _scripted_action(world: SpaceBattleWorld, i: int) -> int:
    cfg = world.config
    me = world.ships[i]
    theta = world.theta(me.heading)
    if me.missiles > 0 and me.cooldown == 0:
        for o in world.ships:
            if o.team == me.team or not o.alive:
                continue
            dx = _wrap_delta(o.x - me.x, cfg.world_size)
            dy = _wrap_delta(o.y - me.y, cfg.world_size)
            if math.hypot(dx, dy) <= cfg.enemy_fire_range:
                if abs(_wrap_angle(math.atan2(dy, dx) - theta)) <= cfg.enemy_fire_cone:
                    return FIRE
    if world.step_count % cfg.enemy_turn_period == 0:
        return TURN_CCW if world.rng.random() < 0.5 else TURN_CW
    return MOVE


def _segment_hit(px, py, vx, vy, tx, ty, L, radius) -> float | None:
    """Fraction along the move (px,py)->(px+vx,py+vy) where it first gets within radius of t."""
    dx = _wrap_delta(tx - px, L)
    dy = _wrap_delta(ty - py, L)
    vv = vx * vx + vy * vy
    t = 0.0 if vv == 0 else max(0.0, min(1.0, (dx * vx + dy * vy) / vv))
    cx, cy = dx - t * vx, dy - t * vy
    if cx * cx + cy * cy <= radius * radius:
        return t
    return None


def spacebattle_step(world: SpaceBattleWorld, actions: Sequence[int]) -> list[StepResult]:
    """Advance the world one step; returns one StepResult per controlled ship.

    ``actions`` has one entry per controlled ship (team 0, plus team 1 when the
    enemy is external).  Entries for dead ships are ignored.
    """
    if world.done:
        raise ContractViolation("cannot step a finished battle")
    cfg = world.config
    controlled = world.controlled
    if len(actions) != len(controlled):
        raise ContractViolation(f"expected {len(controlled)} actions, got {len(actions)}")
    for a in actions:
        if not 0 <= int(a) < ACTION_COUNT:
            raise ContractViolation(f"invalid space-battle action {a!r}")
    L = cfg.world_size
    n = len(world.ships)
    joint = [None] * n
    for i, a in zip(controlled, actions):
        joint[i] = int(a)
    for i in range(n):
        if joint[i] is None and world.ships[i].alive:
            joint[i] = _scripted_action(world, i)

    was_alive = [s.alive for s in world.ships]
    rewards = [0.0] * n

    for i, ship in enumerate(world.ships):
        if not ship.alive:
            continue
        if ship.cooldown > 0:
            ship.cooldown -= 1
        a = joint[i]
        if a == TURN_CCW:
            ship.heading = (ship.heading + 1) % cfg.headings
        elif a == TURN_CW:
            ship.heading = (ship.heading - 1) % cfg.headings
        elif a == MOVE:
            if ship.fuel >= cfg.move_fuel:
                th = world.theta(ship.heading)
                ship.x = (ship.x + cfg.move_speed * math.cos(th)) % L
                ship.y = (ship.y + cfg.move_speed * math.sin(th)) % L
                ship.fuel = max(0.0, ship.fuel - cfg.move_fuel)
        elif a == FIRE:
            if ship.missiles > 0:
                ship.missiles -= 1
                if i >= cfg.team_size and cfg.enemy == "scripted":
                    ship.cooldown = cfg.enemy_fire_cooldown
                world.projectiles.append(Projectile(ship.x, ship.y, ship.heading, i, cfg.projectile_lifetime))

    survivors = []
    for p in world.projectiles:
        th = world.theta(p.heading)
        vx, vy = cfg.projectile_speed * math.cos(th), cfg.projectile_speed * math.sin(th)
        owner_team = world.ships[p.owner].team
        best, target = None, None
        for j, t in enumerate(world.ships):
            if t.team == owner_team or not t.alive:
                continue
            frac = _segment_hit(p.x, p.y, vx, vy, t.x, t.y, L, cfg.hit_radius)
            if frac is not None and (best is None or frac < best):
                best, target = frac, j
        if target is not None:
            t = world.ships[target]
            t.health = max(0.0, t.health - cfg.projectile_damage)
            rewards[p.owner] += cfg.reward_hit
            rewards[target] += cfg.reward_hit_received
            continue
        p.x = (p.x + vx) % L
        p.y = (p.y + vy) % L
        p.ttl -= 1
        if p.ttl > 0:
            survivors.append(p)
    world.projectiles = survivors

    for i in range(n):
        a = world.ships[i]
        if not a.alive or a.team != 0:
            continue
        for j in range(n):
            b = world.ships[j]
            if b.team == 0 or not b.alive:
                continue
            dx = _wrap_delta(b.x - a.x, L)
            dy = _wrap_delta(b.y - a.y, L)
            if dx * dx + dy * dy <= cfg.ram_radius**2:
                a.health = max(0.0, a.health - cfg.ram_damage)
                b.health = max(0.0, b.health - cfg.ram_damage)
                for dealer, victim in ((i, j), (j, i)):
                    rewards[dealer] += cfg.reward_ram
                    rewards[victim] += cfg.reward_hit_received

    world.step_count += 1
    eliminated = [not world.team_alive(t) for t in (0, 1)]
    for team in (0, 1):
        if eliminated[1 - team] and not eliminated[team]:
            for i, s in enumerate(world.ships):
                if s.team == team:
                    rewards[i] += cfg.reward_elimination
    for i, s in enumerate(world.ships):
        world.scores[s.team] += rewards[i]
    world.done = any(eliminated) or world.step_count >= cfg.max_steps
    truncated = world.done and not any(eliminated)

    results = []
    for i in controlled:
        died = was_alive[i] and not world.ships[i].alive
        results.append(
            StepResult(
                observe(world, i),
                rewards[i],
                world.done or died,
                truncated and not died,
            )
        )
    return results


class SpaceBattleEnv:
    """Stateful wrapper: ``reset(seed)`` then ``step(actions)``."""

    action_count = ACTION_COUNT

    def __init__(self, config: SpaceBattleConfig | None = None):
        self.config = config or SpaceBattleConfig()
        self.world: SpaceBattleWorld | None = None
        self.trace: list[dict] | None = None

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    @property
    def n_agents(self) -> int:
        M = self.config.team_size
        return M if self.config.enemy == "scripted" else 2 * M

    def reset(self, seed: int) -> list[np.ndarray]:
        self.world = spacebattle_reset(self.config, seed)
        if self.trace is not None:
            self.trace = [self.world.snapshot()]
        return [observe(self.world, i) for i in self.world.controlled]

    def step(self, actions: Sequence[int]) -> list[StepResult]:
        if self.world is None:
            raise ContractViolation("reset() must be called before step()")
        res = spacebattle_step(self.world, actions)
        if self.trace is not None:
            self.trace.append(self.world.snapshot())
        return res

    def alive(self, agent_id: int) -> bool:
        return self.world is not None and self.world.ships[agent_id].alive

    def record_trace(self) -> None:
        self.trace = []

    def dump_trace(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for rec in self.trace or []:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

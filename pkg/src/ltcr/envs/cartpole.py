"""Pole-on-cart balancing with Euler integration.

Thresholds: episode ends when the pole leans more than 15 degrees, the cart
leaves [-2.4, 2.4], or after 200 steps (the last case is flagged
``truncated``).  Every executed step pays +1, so returns lie in [1, 200].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ContractViolation
from .base import StepResult

GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
TOTAL_MASS = MASS_CART + MASS_POLE
HALF_LENGTH = 0.5
POLE_MASS_LENGTH = MASS_POLE * HALF_LENGTH
FORCE = 10.0
TAU = 0.02
ANGLE_LIMIT = 15.0 * math.pi / 180.0
POSITION_LIMIT = 2.4
MAX_STEPS = 200

LEFT, RIGHT = 0, 1
ACTION_COUNT = 2
OBS_DIM = 4


@dataclass(frozen=True)
class CartPoleState:
    x: float
    x_dot: float
    theta: float
    theta_dot: float
    steps: int = 0
    done: bool = False

    def observation(self) -> np.ndarray:
        return np.array([self.x, self.x_dot, self.theta, self.theta_dot])


def cartpole_reset(seed: int) -> CartPoleState:
    x, x_dot, theta, theta_dot = np.random.default_rng(seed).uniform(-0.05, 0.05, size=4)
    return CartPoleState(float(x), float(x_dot), float(theta), float(theta_dot))


def cartpole_step(state: CartPoleState, action: int) -> tuple[CartPoleState, StepResult]:
    if state.done:
        raise ContractViolation("cannot step a terminal cart-pole state")
    if action not in (LEFT, RIGHT):
        raise ContractViolation(f"invalid cart-pole action {action!r}")
    force = FORCE if action == RIGHT else -FORCE
    cos_t = math.cos(state.theta)
    sin_t = math.sin(state.theta)
    temp = (force + POLE_MASS_LENGTH * state.theta_dot**2 * sin_t) / TOTAL_MASS
    theta_acc = (GRAVITY * sin_t - cos_t * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos_t**2 / TOTAL_MASS)
    )
    x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_t / TOTAL_MASS
    x = state.x + TAU * state.x_dot
    x_dot = state.x_dot + TAU * x_acc
    theta = state.theta + TAU * state.theta_dot
    theta_dot = state.theta_dot + TAU * theta_acc
    steps = state.steps + 1
    failed = abs(theta) > ANGLE_LIMIT or abs(x) > POSITION_LIMIT
    truncated = not failed and steps >= MAX_STEPS
    nxt = CartPoleState(x, x_dot, theta, theta_dot, steps, failed or truncated)
    return nxt, StepResult(nxt.observation(), 1.0, failed or truncated, truncated)


class CartPoleEnv:
    obs_dim = OBS_DIM
    action_count = ACTION_COUNT

    def __init__(self) -> None:
        self.state: CartPoleState | None = None

    def reset(self, seed: int) -> np.ndarray:
        self.state = cartpole_reset(seed)
        return self.state.observation()

    def step(self, action: int) -> StepResult:
        if self.state is None:
            raise ContractViolation("reset() must be called before step()")
        self.state, res = cartpole_step(self.state, action)
        return res

    def set_state(self, **fields) -> None:
        base = self.state or CartPoleState(0.0, 0.0, 0.0, 0.0)
        self.state = replace(base, **fields)

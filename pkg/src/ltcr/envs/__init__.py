from .base import StepResult
from .cartpole import CartPoleEnv, CartPoleState, cartpole_reset, cartpole_step
from .spacebattle import (
    SpaceBattleConfig,
    SpaceBattleEnv,
    SpaceBattleWorld,
    observe,
    spacebattle_reset,
    spacebattle_step,
)
from .team import BattleTeam, SoloTeam, evaluate_team

__all__ = [
    "StepResult",
    "CartPoleEnv",
    "CartPoleState",
    "cartpole_reset",
    "cartpole_step",
    "SpaceBattleConfig",
    "SpaceBattleEnv",
    "SpaceBattleWorld",
    "observe",
    "spacebattle_reset",
    "spacebattle_step",
    "BattleTeam",
    "SoloTeam",
    "evaluate_team",
]

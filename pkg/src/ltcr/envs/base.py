from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    terminal: bool
    # Set when the episode ended on a step cap rather than a failure; the
    # learner keeps bootstrapping through such transitions.
    truncated: bool = False

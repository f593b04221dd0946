"""Categorical value distributions on a fixed support.

Everything here is a pure function of its inputs.  The scalar forms
(`project`, `kl_divergence`, `mean_value`, `greedy_action`) follow the
single-transition contracts; the ``*_batch`` forms are the vectorised paths the
agent uses during training.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolation

EPSILON_KL = 1e-12
NORM_TOL = 1e-9


@dataclass(frozen=True)
class SupportGrid:
    v_min: float
    v_max: float
    atoms: np.ndarray

    @property
    def K(self) -> int:
        return int(self.atoms.shape[0])

    @property
    def delta(self) -> float:
        return (self.v_max - self.v_min) / (self.K - 1)


def make_support(v_min: float, v_max: float, K: int) -> SupportGrid:
    if not v_min < v_max:
        raise ConfigError(f"v_min must be < v_max, got {v_min} >= {v_max}")
    if int(K) != K or K < 2:
        raise ConfigError(f"atom count must be an integer >= 2, got {K}")
    K = int(K)
    step = (v_max - v_min) / (K - 1)
    atoms = v_min + np.arange(K, dtype=np.float64) * step
    atoms[-1] = v_max
    atoms.setflags(write=False)
    return SupportGrid(float(v_min), float(v_max), atoms)


def _check_dist(grid: SupportGrid, p: np.ndarray, name: str = "dist") -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (grid.K,):
        raise ContractViolation(f"{name} has shape {p.shape}, expected ({grid.K},)")
    if np.any(p < 0) or abs(p.sum() - 1.0) > NORM_TOL:
        raise ContractViolation(f"{name} is not a normalized distribution (sum={p.sum()!r})")
    return p


def project(
    grid: SupportGrid,
    reward: float,
    discount: float,
    next_dist: np.ndarray,
    terminal: bool = False,
) -> np.ndarray:
    """Project ``reward + discount * z`` weighted by ``next_dist`` back onto ``grid``.

    Each shifted atom is clamped to ``[v_min, v_max]`` and its mass split
    between the two neighbouring atoms by linear interpolation.  A terminal
    transition drops the bootstrap: all mass sits at ``clamp(reward)``.
    """
    p = _check_dist(grid, next_dist, "next_dist")
    if not 0.0 <= discount <= 1.0:
        raise ContractViolation(f"discount must lie in [0, 1], got {discount}")
    out = project_batch(
        grid,
        np.array([reward], dtype=np.float64),
        discount,
        p[None, :],
        np.array([bool(terminal)]),
    )
    return out[0]


def project_batch(
    grid: SupportGrid,
    rewards: np.ndarray,
    discount: float,
    next_dists: np.ndarray,
    terminals: np.ndarray,
) -> np.ndarray:
    """Vectorised `project` over a batch; no input validation."""
    K = grid.K
    B = rewards.shape[0]
    gamma = np.where(terminals, 0.0, discount)[:, None]
    tz = np.clip(rewards[:, None] + gamma * grid.atoms[None, :], grid.v_min, grid.v_max)
    b = (tz - grid.v_min) / grid.delta
    lower = np.floor(b)
    # Guard against b = K-1 + tiny rounding excess.
    lower = np.clip(lower, 0, K - 1)
    frac = np.clip(b - lower, 0.0, 1.0)
    lo = lower.astype(np.int64)
    hi = np.minimum(lo + 1, K - 1)
    # At the top atom hi == lo and frac == 0, so all mass lands on lo.
    rows = (np.arange(B) * K)[:, None]
    idx = np.concatenate([(rows + lo).ravel(), (rows + hi).ravel()])
    mass = np.concatenate([(next_dists * (1.0 - frac)).ravel(), (next_dists * frac).ravel()])
    return np.bincount(idx, weights=mass, minlength=B * K).reshape(B, K)


def kl_divergence(p: np.ndarray, q: np.ndarray, eps: float = EPSILON_KL) -> float:
    """KL(p || q) with ``0 log 0 = 0`` and ``q`` floored at ``eps``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ContractViolation(f"length mismatch: {p.shape} vs {q.shape}")
    return float(kl_rows(p[None, :], q[None, :], eps)[0])


def kl_rows(p: np.ndarray, q: np.ndarray, eps: float = EPSILON_KL) -> np.ndarray:
    """Row-wise KL(p_i || q_i) for 2-D arrays."""
    q = np.maximum(q, eps)
    mask = p > 0
    safe_p = np.where(mask, p, 1.0)
    terms = np.where(mask, p * (np.log(safe_p) - np.log(q)), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


def mean_value(grid: SupportGrid, dist: np.ndarray) -> float:
    return float(np.dot(grid.atoms, np.asarray(dist, dtype=np.float64)))


def greedy_action(grid: SupportGrid, dists_per_action) -> int:
    """Index of the action with the largest mean; ties go to the lowest index."""
    dists = np.asarray(dists_per_action, dtype=np.float64)
    if dists.ndim != 2 or dists.shape[0] == 0:
        raise ContractViolation("greedy_action needs a non-empty list of distributions")
    if dists.shape[1] != grid.K:
        raise ContractViolation(f"distributions have {dists.shape[1]} atoms, grid has {grid.K}")
    # np.argmax returns the first maximum.
    return int(np.argmax(dists @ grid.atoms))

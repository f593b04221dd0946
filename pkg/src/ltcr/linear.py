"""Distillation between linear categorical models.

A model is a K x d matrix W; its (possibly improper) output on feature phi is
``W @ phi``.  Distillation compares ``softmax(W phi)`` distributions, so the
student converges to the teacher up to the softmax's per-feature shift: from
``W(0) = 0`` every update has zero column sums, so the limit is the teacher
with column means removed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributional import kl_rows
from .errors import ContractViolation, StepsizeError
from .network import softmax


@dataclass
class LinearModel:
    W: np.ndarray  # (K, d)

    @property
    def K(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @classmethod
    def zeros(cls, K: int, d: int) -> "LinearModel":
        return cls(np.zeros((K, d)))


def linear_predict(model: LinearModel, phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (model.d,):
        raise ContractViolation(f"feature has shape {phi.shape}, model expects ({model.d},)")
    return model.W @ phi


def predictions(model: LinearModel, features: np.ndarray) -> np.ndarray:
    """softmax(W phi_n) for every row phi_n of ``features``; shape (N, K)."""
    return softmax(features @ model.W.T)


def mean_kl(teacher: LinearModel, student: LinearModel, features: np.ndarray) -> float:
    return float(kl_rows(predictions(teacher, features), predictions(student, features)).mean())


def centered(W: np.ndarray) -> np.ndarray:
    """W with each column's mean over atoms removed (softmax-equivalent representative)."""
    return W - W.mean(axis=0, keepdims=True)


def distill_flow(
    student: LinearModel,
    teacher: LinearModel,
    features: np.ndarray,
    stepsize: float = 1e-2,
    steps: int = 1_000,
    tol: float = 0.0,
) -> np.ndarray:
    """Gradient descent on mean KL(softmax(W_t phi) || softmax(W_s phi)).

    Updates ``student.W`` in place and returns the KL measured before each
    step (length ``steps`` unless it fell to ``tol`` earlier).  Raises
    `StepsizeError` if the KL grows tenfold over any 100-step window.
    """
    if steps < 1:
        raise ContractViolation("steps must be >= 1")
    if stepsize <= 0:
        raise ContractViolation("stepsize must be positive")
    phi = np.asarray(features, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[1] != student.d or teacher.W.shape != student.W.shape:
        raise ContractViolation("feature / model dimensions do not agree")
    p = predictions(teacher, phi)
    N = phi.shape[0]
    trace = np.empty(steps)
    W = student.W
    for t in range(steps):
        logits = phi @ W.T
        q = softmax(logits)
        trace[t] = kl_rows(p, q).mean()
        if t >= 100 and trace[t] > 10.0 * trace[t - 100] and trace[t] > 1e-12:
            raise StepsizeError(f"KL grew from {trace[t - 100]:.3g} to {trace[t]:.3g}; reduce stepsize {stepsize}")
        if not np.isfinite(trace[t]):
            raise StepsizeError(f"KL became non-finite at step {t}")
        if trace[t] <= tol:
            return trace[: t + 1]
        W -= stepsize * ((q - p).T @ phi) / N
    return trace


def smoothness_bound(features: np.ndarray) -> float:
    """Upper bound on the Lipschitz constant of the mean-KL gradient in W."""
    phi = np.asarray(features, dtype=np.float64)
    gram = phi.T @ phi / phi.shape[0]
    # softmax Jacobian has spectral norm <= 1/2
    return 0.5 * float(np.linalg.eigvalsh(gram).max())

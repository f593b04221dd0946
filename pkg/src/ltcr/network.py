"""A small numpy MLP producing one categorical distribution per action.

The trunk is ``state -> hidden -> ... -> action_count * K`` logits with ReLU
between hidden layers; a softmax is applied to each action's K logits.
Gradients are computed by hand.  Only the fixed MLP family is supported.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractViolation

CHECKPOINT_MAGIC = b"LTCRNET"
CHECKPOINT_VERSION = 1


@dataclass
class NetworkParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    action_count: int
    atom_count: int

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def arrays(self) -> list[np.ndarray]:
        """Parameters in optimizer order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.action_count,
            self.atom_count,
        )


# A frozen snapshot is the same structure; the alias documents intent.
TargetParams = NetworkParams


def init_params(
    input_dim: int,
    hidden: Sequence[int],
    action_count: int,
    atom_count: int,
    rng: np.random.Generator,
) -> NetworkParams:
    """Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    sizes = [input_dim, *hidden, action_count * atom_count]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return NetworkParams(weights, biases, action_count, atom_count)


def zero_params(input_dim: int, hidden: Sequence[int], action_count: int, atom_count: int) -> NetworkParams:
    sizes = [input_dim, *hidden, action_count * atom_count]
    return NetworkParams(
        [np.zeros((i, o)) for i, o in zip(sizes[:-1], sizes[1:])],
        [np.zeros(o) for o in sizes[1:]],
        action_count,
        atom_count,
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class ForwardCache:
    activations: list[np.ndarray]  # input, then each post-ReLU hidden layer
    logits: np.ndarray  # (B, A, K)
    probs: np.ndarray  # (B, A, K)


def forward_batch(params: NetworkParams, states: np.ndarray) -> ForwardCache:
    x = np.asarray(states, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ContractViolation(
            f"state batch has shape {x.shape}, network expects (B, {params.input_dim})"
        )
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
            acts.append(h)
    logits = h.reshape(x.shape[0], params.action_count, params.atom_count)
    return ForwardCache(acts, logits, softmax(logits))


def forward(params: NetworkParams, state: np.ndarray) -> np.ndarray:
    """Per-action distributions for a single state, shape (action_count, K)."""
    s = np.asarray(state, dtype=np.float64)
    if s.ndim != 1:
        raise ContractViolation(f"expected a 1-D state vector, got shape {s.shape}")
    return forward_batch(params, s[None, :]).probs[0]


def backward_logits(
    params: NetworkParams,
    cache: ForwardCache,
    actions: np.ndarray,
    grad_logits: np.ndarray,
) -> list[np.ndarray]:
    """Parameter gradients given d(loss)/d(logits) of the chosen action heads.

    ``grad_logits`` has shape (B, K); row ``i`` belongs to head ``actions[i]``.
    Other heads receive zero upstream gradient.
    """
    B = grad_logits.shape[0]
    A, K = params.action_count, params.atom_count
    full = np.zeros((B, A, K))
    full[np.arange(B), actions] = grad_logits
    delta = full.reshape(B, A * K)
    grads_w: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * len(params.weights)  # type: ignore[list-item]
    for i in range(len(params.weights) - 1, -1, -1):
        a_in = cache.activations[i]
        grads_w[i] = a_in.T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (cache.activations[i] > 0)
    out = []
    for gw, gb in zip(grads_w, grads_b):
        out.extend((gw, gb))
    return out


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Chain d(loss)/d(probs) through the softmax to d(loss)/d(logits)."""
    return probs * (grad_probs - (grad_probs * probs).sum(axis=-1, keepdims=True))


def backward(
    params: NetworkParams,
    state: np.ndarray,
    action: int,
    grad_wrt_probs: np.ndarray,
) -> list[np.ndarray]:
    """Gradients of a loss that depends only on ``forward(params, state)[action]``."""
    if not 0 <= action < params.action_count:
        raise ContractViolation(f"action {action} outside [0, {params.action_count})")
    g = np.asarray(grad_wrt_probs, dtype=np.float64)
    if g.shape != (params.atom_count,):
        raise ContractViolation(f"grad_wrt_probs has shape {g.shape}, expected ({params.atom_count},)")
    cache = forward_batch(params, np.asarray(state, dtype=np.float64)[None, :])
    p = cache.probs[0, action]
    grad_logits = softmax_backward(p[None, :], g[None, :])
    return backward_logits(params, cache, np.array([action]), grad_logits)


def kl_loss_and_grad(
    params: NetworkParams,
    states: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Per-row KL(target || prediction) and gradients of their mean.

    The loss goes through log-softmax, so no probability floor is needed here;
    d/d(logits) of KL(p || softmax(l)) is ``softmax(l) - p``.
    """
    cache = forward_batch(params, states)
    B = states.shape[0]
    idx = np.arange(B)
    logq = log_softmax(cache.logits[idx, actions])
    q = cache.probs[idx, actions]
    mask = targets > 0
    logp = np.log(np.where(mask, targets, 1.0))
    losses = np.where(mask, targets * (logp - logq), 0.0).sum(axis=1)
    grads = backward_logits(params, cache, actions, (q - targets) / B)
    return losses, grads


@dataclass
class OptimizerState:
    """Adam moments for every parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: NetworkParams, lr: float = 1e-4, **kw) -> "OptimizerState":
        if lr <= 0:
            raise ContractViolation(f"learning rate must be positive, got {lr}")
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], lr=lr, **kw)


def optimize_step(
    params: NetworkParams,
    state: OptimizerState,
    grads: list[np.ndarray],
) -> tuple[NetworkParams, OptimizerState]:
    """One Adam update, applied in place to ``params`` and ``state``."""
    arrays = params.arrays()
    if len(grads) != len(arrays) or any(g.shape != a.shape for g, a in zip(grads, arrays)):
        raise ContractViolation("gradient shapes do not match parameters")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    step_size = state.lr * np.sqrt(corr2) / corr1
    eps_hat = state.eps * np.sqrt(corr2)
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        a -= step_size * m / (np.sqrt(v) + eps_hat)
    return params, state


def sync_target(params: NetworkParams) -> TargetParams:
    return params.copy()


# -- checkpoints -------------------------------------------------------------
#
# Layout: b"LTCRNET" b"\n", one JSON header line
#   {"version": 1, "action_count": A, "atom_count": K, "shapes": [[r, c], [c], ...]}
# followed by every array in optimizer order as little-endian float64, C order.


def save_params(params: NetworkParams, path: str | Path) -> None:
    arrays = params.arrays()
    header = {
        "version": CHECKPOINT_VERSION,
        "action_count": params.action_count,
        "atom_count": params.atom_count,
        "shapes": [list(a.shape) for a in arrays],
    }
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC + b"\n")
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_params(path: str | Path) -> NetworkParams:
    raw = Path(path).read_bytes()
    magic, rest = raw.split(b"\n", 1)
    if magic != CHECKPOINT_MAGIC:
        raise ContractViolation(f"{path} is not a network checkpoint")
    header_line, body = rest.split(b"\n", 1)
    header = json.loads(header_line)
    if header["version"] != CHECKPOINT_VERSION:
        raise ContractViolation(f"unsupported checkpoint version {header['version']}")
    arrays = []
    offset = 0
    for shape in header["shapes"]:
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(body, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64))
        offset += 8 * n
    if offset != len(body):
        raise ContractViolation(f"{path}: trailing or missing bytes in checkpoint")
    return NetworkParams(arrays[0::2], arrays[1::2], header["action_count"], header["atom_count"])

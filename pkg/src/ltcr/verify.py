"""Independent oracles and the checks built on them.

The projection oracle works in exact rational arithmetic one atom at a time;
the gradient oracle uses central finite differences through the plain
forward pass and the floored KL.  Neither shares code with the vectorised
training path beyond the forward pass itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .distributional import kl_divergence, make_support, project
from .linear import LinearModel, centered, distill_flow, predictions, smoothness_bound
from .network import forward_batch, init_params, kl_loss_and_grad


def projection_oracle(v_min, v_max, K, reward, discount, probs, terminal) -> list[Fraction]:
    """Exact C51 projection: each shifted atom splits its mass between its two neighbours."""
    lo, hi = Fraction(v_min), Fraction(v_max)
    dz = (hi - lo) / (K - 1)
    r = Fraction(reward)
    g = Fraction(0) if terminal else Fraction(discount)
    out = [Fraction(0)] * K
    for j, pj in enumerate(probs):
        pj = Fraction(pj)
        tz = min(max(r + g * (lo + j * dz), lo), hi)
        b = (tz - lo) / dz
        low = math.floor(b)
        if low == b:
            out[low] += pj
        else:
            out[low] += pj * (low + 1 - b)
            out[low + 1] += pj * (b - low)
    return out


def random_projection_case(rng: np.random.Generator):
    K = int(rng.integers(2, 60))
    v_min = float(rng.uniform(-100, 50))
    v_max = v_min + float(rng.uniform(0.5, 200))
    span = v_max - v_min
    reward = float(rng.uniform(v_min - 0.5 * span, v_max + 0.5 * span))
    discount = float(rng.choice([0.0, 1.0, rng.uniform()]))
    probs = rng.dirichlet(np.full(K, float(rng.uniform(0.1, 2.0))))
    terminal = bool(rng.random() < 0.15)
    return v_min, v_max, K, reward, discount, probs, terminal


def check_projection(cases: int = 10_000, seed: int = 0, tol: float = 1e-9) -> tuple[float, float]:
    """Return (max per-atom error, max mass error) over random cases."""
    rng = np.random.default_rng(seed)
    worst_atom = worst_mass = 0.0
    for _ in range(cases):
        v_min, v_max, K, reward, discount, probs, terminal = random_projection_case(rng)
        grid = make_support(v_min, v_max, K)
        got = project(grid, reward, discount, probs, terminal)
        want = projection_oracle(v_min, v_max, K, reward, discount, probs, terminal)
        worst_atom = max(worst_atom, max(abs(float(w) - g) for w, g in zip(want, got)))
        worst_mass = max(worst_mass, abs(got.sum() - 1.0))
    return worst_atom, worst_mass


def _fd_loss(params, states, actions, targets) -> float:
    probs = forward_batch(params, states).probs
    return float(np.mean([kl_divergence(t, probs[i, a]) for i, (a, t) in enumerate(zip(actions, targets))]))


@dataclass
class GradientProbe:
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        return abs(self.analytic - self.numeric) / max(abs(self.analytic), abs(self.numeric), 1e-6)


def gradient_probes(loss: str, probes: int = 100, seed: int = 0, h: float = 1e-5) -> list[GradientProbe]:
    """Compare analytic and central-difference gradients at random parameter coordinates.

    ``loss`` is ``"c51"`` (targets are projected Bellman backups from a
    separate target network) or ``"distill"`` (targets are averages of
    teacher-network outputs).
    """
    from .distributional import project_batch

    rng = np.random.default_rng(seed)
    out = []
    for _ in range(probes):
        d, A, K = int(rng.integers(2, 6)), int(rng.integers(2, 4)), int(rng.integers(3, 8))
        hidden = [int(rng.integers(3, 9))]
        B = int(rng.integers(1, 5))
        params = init_params(d, hidden, A, K, rng)
        states = rng.normal(size=(B, d))
        actions = rng.integers(A, size=B)
        if loss == "c51":
            grid = make_support(0.0, float(rng.uniform(1, 20)), K)
            target = init_params(d, hidden, A, K, rng)
            nxt = forward_batch(target, rng.normal(size=(B, d))).probs
            best = np.argmax(nxt @ grid.atoms, axis=1)
            targets = project_batch(
                grid, rng.uniform(0, 3, size=B), 0.99, nxt[np.arange(B), best], rng.random(B) < 0.2
            )
        else:
            teachers = [init_params(d, hidden, A, K, rng) for _ in range(int(rng.integers(1, 4)))]
            targets = np.mean(
                [forward_batch(t, states).probs[np.arange(B), actions] for t in teachers], axis=0
            )
        _, grads = kl_loss_and_grad(params, states, actions, targets)
        arrays = params.arrays()
        k = int(rng.integers(len(arrays)))
        idx = tuple(int(rng.integers(n)) for n in arrays[k].shape)
        orig = arrays[k][idx]
        arrays[k][idx] = orig + h
        up = _fd_loss(params, states, actions, targets)
        arrays[k][idx] = orig - h
        down = _fd_loss(params, states, actions, targets)
        arrays[k][idx] = orig
        out.append(GradientProbe(float(grads[k][idx]), (up - down) / (2 * h)))
    return out


@dataclass
class LinearResult:
    d: int
    K: int
    steps: int
    max_tv: float
    matrix_error: float
    monotone_violation: float


def linear_convergence_case(d: int, K: int, seed: int = 0, max_steps: int = 400_000, tv_tol: float = 1e-5) -> LinearResult:
    """Distil a random teacher into W(0)=0 over d+2 full-rank features."""
    rng = np.random.default_rng([seed, d, K])
    features = rng.normal(size=(d + 2, d))
    while np.linalg.matrix_rank(features) < d:
        features = rng.normal(size=(d + 2, d))
    # Unit-variance teacher logits keep the targets away from saturation.
    teacher = LinearModel(rng.normal(size=(K, d)) / np.sqrt(d))
    student = LinearModel.zeros(K, d)
    # Well inside the stable range 2/L of gradient descent.
    step = 1.0 / smoothness_bound(features)
    chunk = 2_000
    traces = []
    done = 0
    max_tv = math.inf
    while done < max_steps:
        trace = distill_flow(student, teacher, features, stepsize=step, steps=chunk)
        traces.append(trace)
        done += len(trace)
        tv = 0.5 * np.abs(predictions(student, features) - predictions(teacher, features)).sum(axis=1)
        max_tv = float(tv.max())
        if max_tv < tv_tol:
            break
    full = np.concatenate(traces)
    skip = max(1, len(full) // 100)
    increases = np.diff(full[skip:])
    return LinearResult(
        d,
        K,
        done,
        max_tv,
        float(np.abs(student.W - centered(teacher.W)).max()),
        float(increases.max()) if increases.size else 0.0,
    )


def run_verification(quick: bool = False) -> list[tuple[str, bool, str]]:
    """Run the oracle suites; returns (name, passed, detail) per check."""
    results = []
    cases = 1_000 if quick else 10_000
    atom_err, mass_err = check_projection(cases)
    results.append(
        ("projection oracle", atom_err <= 1e-9 and mass_err <= 1e-9, f"{cases} cases, max atom err {atom_err:.2e}, mass err {mass_err:.2e}")
    )
    for loss in ("c51", "distill"):
        probes = gradient_probes(loss, probes=100, seed=1 if loss == "c51" else 2)
        worst = max(p.rel_error for p in probes)
        results.append((f"{loss} gradient check", worst < 1e-4, f"100 probes, max rel err {worst:.2e}"))
    dims = [(2, 3), (4, 7), (8, 11)] if quick else [(d, K) for d in range(2, 9) for K in range(3, 12)]
    worst_tv = worst_mono = 0.0
    for d, K in dims:
        r = linear_convergence_case(d, K)
        worst_tv = max(worst_tv, r.max_tv)
        worst_mono = max(worst_mono, r.monotone_violation)
    results.append(
        (
            "linear distillation convergence",
            worst_tv < 1e-4 and worst_mono <= 1e-9,
            f"{len(dims)} (d, K) cases, max TV {worst_tv:.2e}, max KL increase {worst_mono:.2e}",
        )
    )
    return results

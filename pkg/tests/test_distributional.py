import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltcr.distributional import greedy_action, kl_divergence, make_support, mean_value, project
from ltcr.errors import ConfigError, ContractViolation
from ltcr.verify import projection_oracle


def test_make_support_examples():
    np.testing.assert_array_equal(make_support(0, 10, 5).atoms, [0, 2.5, 5, 7.5, 10])
    g = make_support(-3.5, -2.5, 2)
    np.testing.assert_array_equal(g.atoms, [-3.5, -2.5])
    assert make_support(0, 200, 51).atoms[1] == 4.0


@pytest.mark.parametrize("args", [(1, 1, 5), (2, 1, 5), (0, 1, 1), (0, 1, 0)])
def test_make_support_rejects(args):
    with pytest.raises(ConfigError):
        make_support(*args)


def test_support_endpoints_and_order():
    g = make_support(-25, 75, 51)
    assert g.atoms[0] == -25 and g.atoms[-1] == 75
    assert np.all(np.diff(g.atoms) > 0)


GRID3 = make_support(0, 2, 3)


@pytest.mark.parametrize(
    "reward, dist, want",
    [
        (0.0, [0.2, 0.5, 0.3], [0.2, 0.5, 0.3]),
        (0.5, [1, 0, 0], [0.5, 0.5, 0]),
        (10.0, [0, 0, 1], [0, 0, 1]),
    ],
)
def test_project_examples(reward, dist, want):
    np.testing.assert_allclose(project(GRID3, reward, 1.0, np.array(dist, float)), want, atol=1e-12)


def test_project_terminal_collapses_to_reward():
    out = project(GRID3, 0.5, 0.99, np.array([0.0, 0.0, 1.0]), terminal=True)
    np.testing.assert_allclose(out, [0.5, 0.5, 0.0])
    out = project(GRID3, -4.0, 0.99, np.array([0.2, 0.3, 0.5]), terminal=True)
    np.testing.assert_allclose(out, [1.0, 0.0, 0.0])


def test_project_rejects_unnormalized():
    with pytest.raises(ContractViolation):
        project(GRID3, 0.0, 1.0, np.array([0.5, 0.5, 0.5]))
    with pytest.raises(ContractViolation):
        project(GRID3, 0.0, 1.0, np.array([0.5, 0.5]))


def test_project_matches_exact_oracle_small_sample():
    rng = np.random.default_rng(7)
    for _ in range(200):
        K = int(rng.integers(2, 12))
        grid = make_support(-5.0, 5.0, K)
        p = rng.dirichlet(np.ones(K))
        r, g, term = float(rng.normal(0, 4)), float(rng.uniform()), bool(rng.random() < 0.2)
        want = [float(x) for x in projection_oracle(-5.0, 5.0, K, r, g, p, term)]
        np.testing.assert_allclose(project(grid, r, g, p, term), want, atol=1e-12)


dists = st.integers(2, 30).flatmap(
    lambda k: st.lists(st.floats(0.0, 1.0), min_size=k, max_size=k).filter(lambda xs: sum(xs) > 1e-3)
)


@settings(max_examples=200, deadline=None)
@given(
    p=dists,
    v_min=st.floats(-100, 100),
    span=st.floats(0.1, 300),
    reward=st.floats(-500, 500),
    discount=st.floats(0.0, 1.0),
    terminal=st.booleans(),
)
def test_projection_conserves_mass(p, v_min, span, reward, discount, terminal):
    p = np.array(p) / np.sum(p)
    grid = make_support(v_min, v_min + span, len(p))
    out = project(grid, reward, discount, p, terminal)
    assert abs(out.sum() - 1.0) <= 1e-9
    assert np.all(out >= 0)


@settings(max_examples=200, deadline=None)
@given(p=dists, discount=st.floats(0.0, 1.0), frac=st.floats(0.0, 1.0))
def test_projection_preserves_mean_when_unclamped(p, discount, frac):
    p = np.array(p) / np.sum(p)
    grid = make_support(0.0, 10.0, len(p))
    # Largest reward that keeps every shifted atom inside [0, 10].
    reward = frac * 10.0 * (1.0 - discount)
    out = project(grid, reward, discount, p)
    assert abs(mean_value(grid, out) - (reward + discount * mean_value(grid, p))) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(p=dists)
def test_projection_identity(p):
    p = np.array(p) / np.sum(p)
    grid = make_support(-1.0, 1.0, len(p))
    np.testing.assert_allclose(project(grid, 0.0, 1.0, p), p, atol=1e-12)


def test_kl_examples():
    assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert kl_divergence([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)
    want = 0.25 * math.log(0.25 / 0.75) + 0.75 * math.log(0.75 / 0.25)
    assert kl_divergence([0.25, 0.75], [0.75, 0.25]) == pytest.approx(want, abs=1e-12)
    assert want == pytest.approx(0.5493, abs=1e-4)


def test_kl_zero_q_is_floored():
    assert math.isfinite(kl_divergence([0.5, 0.5], [1.0, 0.0]))


def test_kl_length_mismatch():
    with pytest.raises(ContractViolation):
        kl_divergence([1.0], [0.5, 0.5])


@settings(max_examples=200, deadline=None)
@given(p=dists, q=dists)
def test_kl_gibbs(p, q):
    n = min(len(p), len(q))
    p = np.array(p[:n]) + 1e-3
    q = np.array(q[:n]) + 1e-3
    p, q = p / p.sum(), q / q.sum()
    assert kl_divergence(p, q) >= 0.0
    assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-12)


def test_mean_value_examples():
    assert mean_value(make_support(0, 1, 2), [0.25, 0.75]) == 0.75
    g = make_support(0, 10, 5)
    assert mean_value(g, np.full(5, 0.2)) == pytest.approx(5.0)
    for j in range(5):
        assert mean_value(g, np.eye(5)[j]) == g.atoms[j]


def test_greedy_examples():
    g = make_support(0, 1, 2)
    assert greedy_action(g, [[0.25, 0.75], [0.75, 0.25]]) == 0
    assert greedy_action(g, [[0.5, 0.5]] * 3) == 0
    rng = np.random.default_rng(3)
    grid = make_support(-2, 7, 9)
    for _ in range(50):
        d = rng.dirichlet(np.ones(9), size=3)
        means = [sum(z * x for z, x in zip(grid.atoms, row)) for row in d]
        assert greedy_action(grid, d) == int(np.argmax(means))


def test_greedy_empty():
    with pytest.raises(ContractViolation):
        greedy_action(GRID3, np.zeros((0, 3)))


@settings(max_examples=100, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    scale=st.floats(0.01, 100),
    shift=st.floats(-100, 100),
)
def test_greedy_affine_invariance(seed, scale, shift):
    rng = np.random.default_rng(seed)
    d = rng.dirichlet(np.ones(7), size=4)
    a = make_support(0.0, 6.0, 7)
    b = make_support(shift, shift + 6.0 * scale, 7)
    means = d @ a.atoms
    top = np.sort(means)[-2:]
    if top[1] - top[0] < 1e-9:
        return  # near-ties are decided by rounding, not by the rule under test
    assert greedy_action(a, d) == greedy_action(b, d)

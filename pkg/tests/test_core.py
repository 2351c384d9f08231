import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semibandit.core import (
    Context,
    EnvironmentSpec,
    LinearGreedyPolicy,
    ReplayEnvironment,
    TabularPolicy,
    all_rankings,
    check_ranking,
    exact_policy_reward,
    expected_policy_reward,
    greedy_ranking,
    make_environment,
    make_tabular_class,
    realized_reward,
    synth_draw,
)
from semibandit.exceptions import ConfigError


def test_realized_reward_hand_values():
    assert realized_reward((0, 1), [0.5, 0.25, 0, 0], [1, 1]) == 0.75
    assert realized_reward((0, 1), np.ones(4), [1, 0.5], 0.1) == pytest.approx(1.6, abs=1e-15)
    assert realized_reward((2, 3), np.zeros(4), [1, 1], -0.3) == -0.3


def test_realized_reward_dimension_mismatch():
    with pytest.raises(ValueError):
        realized_reward((0, 1, 2), np.ones(4), [1, 1])
    with pytest.raises(ValueError):
        realized_reward((0, 5), np.ones(4), [1, 1])


def test_check_ranking_rejects_bad_rankings():
    assert check_ranking([2, 0], 3, 2) == (2, 0)
    with pytest.raises(ValueError):
        check_ranking((1, 1), 3, 2)
    with pytest.raises(ValueError):
        check_ranking((0,), 3, 2)
    with pytest.raises(ValueError):
        check_ranking((0, 1), 3, 2, valid=np.array([True, False, True]))


def test_all_rankings_count():
    assert len(all_rankings(4, 2)) == 12
    assert len(all_rankings(3, 3)) == 6
    assert all(1 not in r for r in all_rankings(4, 2, np.array([1, 0, 1, 1], bool)))


def test_greedy_ranking_ties_and_slot_order():
    assert greedy_ranking([0.9, 0.1, 0.5, 0.5], [1, 1]) == (0, 2)
    assert greedy_ranking(np.zeros(5), np.ones(3)) == (0, 1, 2)
    # heavier slot receives the best action
    assert greedy_ranking([0.9, 0.1, 0.5], [0.5, 1.0]) == (2, 0)
    assert greedy_ranking([0.9, 0.1, 0.5], [1, 1], np.array([False, True, True])) == (2, 1)
    with pytest.raises(ValueError):
        greedy_ranking([1, 2, 3], [1, 1], np.array([True, False, False]))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(1, 3), st.integers(0, 10**6))
def test_greedy_ranking_is_brute_force_argmax(K, L, seed):
    L = min(L, K)
    rng = np.random.default_rng(seed)
    scores = rng.normal(size=K)
    w = rng.uniform(0, 1, size=L)
    best = max(all_rankings(K, L), key=lambda r: sum(w[i] * scores[a] for i, a in enumerate(r)))
    got = greedy_ranking(scores, w)
    val = lambda r: sum(w[i] * scores[a] for i, a in enumerate(r))
    assert val(got) == pytest.approx(val(best), abs=1e-12)


def test_context_validation():
    with pytest.raises(ValueError):
        Context(0, np.zeros(3))
    with pytest.raises(ValueError):
        Context(0, np.zeros((3, 2)), np.array([True, False]))
    x = Context(0, np.zeros((3, 2)), np.array([True, False, True]))
    assert x.restricted and x.K == 3 and x.d == 2


def test_spec_validation():
    with pytest.raises(ConfigError):
        EnvironmentSpec(K=2, L=3)
    with pytest.raises(ConfigError):
        EnvironmentSpec(K=4, L=2, weights=[1, 1, 1])


def test_same_seed_same_sample():
    spec = EnvironmentSpec(K=4, L=2, noise_halfwidth=0.2)
    a = synth_draw(spec, np.random.default_rng(7))
    b = synth_draw(spec, np.random.default_rng(7))
    assert np.array_equal(a.y, b.y) and a.noise == b.noise
    assert np.array_equal(a.context.features, b.context.features)


def test_zero_noise_halfwidth():
    env = make_environment(EnvironmentSpec(K=4, L=2))
    rng = np.random.default_rng(0)
    assert all(env.draw(rng).noise == 0.0 for _ in range(50))


def test_noise_mean_and_range():
    h = 0.3
    env = make_environment(EnvironmentSpec(K=3, L=1, d=2, noise_halfwidth=h, n_contexts=2))
    rng = np.random.default_rng(3)
    noise = np.array([env.draw(rng).noise for _ in range(10**5)])
    assert np.all(np.abs(noise) <= h)
    # uniform[-h, h] has standard deviation h / sqrt(3)
    assert abs(noise.mean()) <= 3 * h / np.sqrt(3) / np.sqrt(10**5)


def test_y_in_unit_interval_and_restricted_masks():
    env = make_environment(EnvironmentSpec(K=6, L=2, restricted_fraction=0.5, n_contexts=30))
    for x in env.contexts:
        assert x.valid.sum() == 6 - 2
        assert np.all((env.expected_y(x) >= 0) & (env.expected_y(x) <= 1))
    env = make_environment(EnvironmentSpec(K=5, L=2, link="linear"))
    rng = np.random.default_rng(0)
    for _ in range(200):
        y = env.draw(rng).y
        assert np.all((y >= 0) & (y <= 1))


def test_constant_environment_reward_is_exact():
    ctxs = [Context(i, np.ones((4, 2))) for i in range(3)]
    env = ReplayEnvironment(ctxs, [np.full(4, 0.3)] * 3, L=2)
    pol = TabularPolicy(np.array([[0, 1], [1, 2], [3, 0]]))
    assert expected_policy_reward(pol, env, env.w, 7, np.random.default_rng(0)) == pytest.approx(0.6, abs=1e-15)


def test_dominating_policy_estimates_higher():
    env = make_environment(EnvironmentSpec(K=4, L=2, n_contexts=10, latent_score_seed=4))
    good = TabularPolicy(np.array([greedy_ranking(y, env.w) for y in env._pool_y]))
    bad = TabularPolicy(np.array([greedy_ranking(-y, env.w) for y in env._pool_y]))
    a = expected_policy_reward(good, env, env.w, 500, np.random.default_rng(9))
    b = expected_policy_reward(bad, env, env.w, 500, np.random.default_rng(9))
    assert a >= b


def _independent_value(seed, K, L, d, signal, n, chunk=200_000):
    # regenerate the logistic model from its definition, vectorised
    latent = np.random.default_rng(seed)
    theta = latent.normal(size=d)
    theta /= np.linalg.norm(theta)
    rng = np.random.default_rng(2024)
    total = 0.0
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        X = rng.uniform(-1, 1, size=(m, K, d))
        s = X @ theta
        y = 1 / (1 + np.exp(-signal * s))
        # policy scores with theta itself: reward is the sum of the top-L y
        total += np.sort(y, axis=1)[:, -L:].sum()
    return total / n


def test_monte_carlo_value_against_independent_sampler():
    spec = EnvironmentSpec(K=4, L=2, d=3, latent_score_seed=11)
    env = make_environment(spec)
    est = expected_policy_reward(LinearGreedyPolicy(env.theta, env.w), env, env.w, 10**4,
                                 np.random.default_rng(5))
    ref = _independent_value(11, 4, 2, 3, spec.signal, 10**6)
    assert abs(est - ref) <= 0.02 * 2


def test_exact_policy_reward_matches_loop():
    env = make_environment(EnvironmentSpec(K=5, L=2, n_contexts=7, weights=[1.0, 0.3]))
    pc = make_tabular_class(env, 5, np.random.default_rng(2))
    for p in pc:
        loop = np.mean([realized_reward(p(x), y, env.w) for x, y in zip(env.contexts, env._pool_y)])
        assert exact_policy_reward(p, env) == pytest.approx(loop, abs=1e-14)


def test_best_reward_dominates_every_tabular_policy():
    env = make_environment(EnvironmentSpec(K=5, L=2, n_contexts=6))
    pc = make_tabular_class(env, 30, np.random.default_rng(0))
    assert max(exact_policy_reward(p, env) for p in pc) <= env.best_reward() + 1e-12


def test_tabular_class_requires_pool():
    env = make_environment(EnvironmentSpec(K=4, L=2))
    with pytest.raises(ConfigError):
        make_tabular_class(env, 3, np.random.default_rng(0))


def test_replay_environment_order_and_wrap():
    ctxs = [Context(i, np.zeros((3, 1))) for i in range(3)]
    env = ReplayEnvironment(ctxs, [np.full(3, i / 3) for i in range(3)], L=1)
    rng = np.random.default_rng(0)
    ids = [env.draw(rng).context.id for _ in range(7)]
    assert ids == [0, 1, 2, 0, 1, 2, 0]
    env = ReplayEnvironment(ctxs, [np.zeros(3)] * 3, L=1, shuffle=True)
    ids = [env.draw(rng).context.id for _ in range(6)]
    assert sorted(ids[:3]) == [0, 1, 2] and sorted(ids[3:]) == [0, 1, 2]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.floats(-5, 5))
def test_reward_is_linear_in_w(seed, alpha):
    rng = np.random.default_rng(seed)
    y = rng.uniform(size=6)
    w = rng.normal(size=3)
    A = tuple(rng.choice(6, 3, replace=False))
    lhs = realized_reward(A, y, alpha * w)
    rhs = alpha * realized_reward(A, y, w)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)

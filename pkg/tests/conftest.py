import numpy as np
import pytest

from semibandit.core import Context, EnvironmentSpec, make_environment, make_tabular_class, realized_reward
from semibandit.estimation import (
    History,
    InteractionRecord,
    SparseSubdistribution,
    build_mixing,
    sample_ranking,
    smoothed_marginals,
)


def pool_env(K=4, L=2, M=8, seed=0, **kw):
    spec = EnvironmentSpec(K=K, L=L, d=3, n_contexts=M, latent_score_seed=seed, **kw)
    return make_environment(spec)


def random_subdistribution(policy_class, rng, size=3, total=None):
    idx = rng.choice(len(policy_class), size=size, replace=False)
    raw = rng.dirichlet(np.ones(size)) * (rng.uniform(0.2, 1.0) if total is None else total)
    Q = SparseSubdistribution([(policy_class[int(i)], float(w)) for i, w in zip(idx, raw)])
    Q.leader = policy_class[int(rng.integers(len(policy_class)))]
    return Q


def logged_history(env, policy_class, t, mu, rng, Q=None, oracle=None):
    """Rounds played from the smoothed law of a random Q, with true propensities."""
    if Q is None:
        Q = random_subdistribution(policy_class, rng)
    H = History()
    for _ in range(t):
        s = env.draw(rng)
        U = build_mixing(s.context, env.L, oracle)
        ranking, explored = sample_ranking(Q, s.context, mu, U, rng)
        q = smoothed_marginals(Q, s.context, mu, U)
        H.append(InteractionRecord(s.context, ranking, s.y[list(ranking)], q[list(ranking)],
                                   realized_reward(ranking, s.y, env.w, s.noise), U, explored))
    return H


@pytest.fixture
def small_env():
    return pool_env()


@pytest.fixture
def small_class(small_env):
    return make_tabular_class(small_env, 20, np.random.default_rng(1))


def unit_context(cid, K=4, d=3):
    return Context(cid, np.eye(K, d) if d >= K else np.arange(K * d, dtype=float).reshape(K, d))

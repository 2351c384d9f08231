"""Baselines: epsilon-greedy, semibandit LinUCB and uniform random play."""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .base import SemibanditLearner, is_epoch_boundary
from .core import greedy_ranking
from .estimation import uniform_ranking
from .exceptions import ConfigError

__all__ = ["egreedy_n", "EpsilonGreedy", "LinUCB", "UniformRandom", "linucb_score"]


def _ceil(value):
    # absorb float error so that e.g. 1000**(2/3) rounds up to 100, not 101
    return math.ceil(value * (1 - 1e-12))


def egreedy_n(T: int, K: int, L: int, N: int, delta: float) -> int:
    """Exploration length of explore-first epsilon-greedy, clamped to [1, T]."""
    needed = K * math.log(N / delta) / L
    if T < needed:
        raise ConfigError(f"horizon too short: need T >= K ln(N/delta) / L = {needed:.3f}")
    value = T ** (2 / 3) * (K * math.log(2 * N / delta) / L) ** (1 / 3)
    return int(min(max(_ceil(value), 1), T))


def _uniform_marginals(context, L):
    q = np.zeros(context.K)
    q[context.valid] = L / context.valid.sum()
    return q


class UniformRandom(SemibanditLearner):
    """Plays a uniformly random ranking of valid actions every round."""

    phase = "explore"

    def __init__(self, L=None):
        self.L = L

    def _slot_count(self):
        return self.L

    def _choose(self, context, rng):
        return uniform_ranking(context.valid, self.L, rng), _uniform_marginals(context, self.L), True, None


class EpsilonGreedy(SemibanditLearner):
    """Epsilon-greedy with an argmax oracle.

    ``mode="mixed"`` explores uniformly with probability ``epsilon`` each round
    and otherwise plays the empirically best policy, refit on the epoch
    schedule from the whole importance-weighted log.  Rounds before the first
    refit are uniform.  ``mode="explore-first"`` explores for ``n_explore``
    rounds (default :func:`egreedy_n`), fits once, then exploits.

    ``initial_policy`` is played from the first round instead of uniform
    exploration; with ``schedule="none"`` it is never refit.
    """

    def __init__(self, oracle=None, w=None, epsilon=0.1, mode="mixed", horizon=None,
                 n_explore=None, n_policies=1000, delta=0.05, schedule="epoch",
                 initial_policy=None):
        self.oracle = oracle
        self.w = w
        self.epsilon = epsilon
        self.mode = mode
        self.horizon = horizon
        self.n_explore = n_explore
        self.n_policies = n_policies
        self.delta = delta
        self.schedule = schedule
        self.initial_policy = initial_policy

    def _slot_count(self):
        return self.L_

    def _init_state(self, context):
        if self.oracle is None or self.w is None:
            raise ConfigError("epsilon-greedy needs an oracle and slot weights")
        if self.mode not in ("mixed", "explore-first"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if self.schedule not in ("epoch", "every", "none"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        self.w_ = np.asarray(self.w, dtype=float)
        self.L_ = self.w_.shape[0]
        self.policy_ = self.initial_policy
        self.n_explore_ = None
        if self.mode == "explore-first":
            if self.n_explore is not None:
                self.n_explore_ = int(self.n_explore)
            elif self.horizon is None:
                raise ConfigError("explore-first needs horizon or n_explore")
            else:
                self.n_explore_ = egreedy_n(self.horizon, context.K, self.L_, self.n_policies,
                                            self.delta)

    @property
    def phase(self):
        if self.mode == "explore-first":
            return "exploit" if getattr(self, "policy_", None) is not None else "explore"
        return "mixed"

    def _choose(self, context, rng):
        U = _uniform_marginals(context, self.L_)
        if self.policy_ is None:
            return uniform_ranking(context.valid, self.L_, rng), U, True, None
        greedy = self.policy_(context)
        onehot = np.zeros(context.K)
        onehot[list(greedy)] = 1.0
        if self.mode == "explore-first":
            return greedy, onehot, False, None
        q = self.epsilon * U + (1 - self.epsilon) * onehot
        if rng.random() < self.epsilon:
            return uniform_ranking(context.valid, self.L_, rng), q, True, None
        return greedy, q, False, None

    def _after_observe(self, record):
        t = self.t_
        if self.mode == "explore-first":
            if t == self.n_explore_:
                self.policy_ = self.oracle.best_policy(self.history_, self.w_)
        elif self.schedule == "every" or (self.schedule == "epoch" and is_epoch_boundary(t)):
            self.policy_ = self.oracle.best_policy(self.history_, self.w_)

    def predict(self, contexts):
        if self.policy_ is None:
            raise ValueError("no policy fitted yet")
        return self.policy_.rank_many(list(contexts))


def linucb_score(state, context, a) -> float:
    """``phi^T theta + alpha * phi^T Sigma^{-1} phi`` for action ``a``."""
    return float(state.scores(context)[a])


class LinUCB(SemibanditLearner):
    """Semibandit LinUCB with periodic full-history ridge refits.

    Starts from ``Sigma = I`` and ``theta = 0``.  After every round ``t`` with
    ``t % update_period == 0`` it sets ``Sigma = I + sum phi phi^T`` and
    ``theta = Sigma^{-1} sum phi y`` over all observed (action, feedback) pairs.
    Only the all-ones slot weighting is supported, so rankings are the top-L
    actions by score.
    """

    phase = "ucb"

    def __init__(self, alpha=1.0, update_period=100, L=None, w=None):
        self.alpha = alpha
        self.update_period = update_period
        self.L = L
        self.w = w

    def _slot_count(self):
        return self.L

    def _init_state(self, context):
        if self.L is None:
            raise ConfigError("LinUCB needs L")
        if self.w is not None and not np.allclose(self.w, 1.0):
            raise ConfigError("LinUCB only supports all-ones slot weights")
        if self.update_period < 1:
            raise ConfigError("update_period must be positive")
        d = context.d
        self.Sigma_ = np.eye(d)
        self.theta_ = np.zeros(d)
        self._chol = cho_factor(self.Sigma_)
        self._gram = np.zeros((d, d))
        self._moment = np.zeros(d)

    def scores(self, context):
        X = context.features
        bonus = np.einsum("kd,dk->k", X, cho_solve(self._chol, X.T))
        return X @ self.theta_ + self.alpha * bonus

    def _choose(self, context, rng):
        ranking = greedy_ranking(self.scores(context), np.ones(self.L), context.valid)
        q = np.zeros(context.K)
        q[list(ranking)] = 1.0
        return ranking, q, False, None

    def _after_observe(self, record):
        X = record.context.features[list(record.chosen)]
        self._gram += X.T @ X
        self._moment += X.T @ record.observed_y
        if self.t_ % self.update_period == 0:
            self.Sigma_ = np.eye(self._gram.shape[0]) + self._gram
            self._chol = cho_factor(self.Sigma_)
            self.theta_ = cho_solve(self._chol, self._moment)

    def predict(self, contexts):
        return np.array([self._choose(x, None)[0] for x in contexts], dtype=int)

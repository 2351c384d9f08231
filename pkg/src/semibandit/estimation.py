"""Smoothed action distributions, propensity logging and IPS estimators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Context, Policy, all_rankings
from .exceptions import OracleError

__all__ = [
    "SparseSubdistribution",
    "MixingDistribution",
    "InteractionRecord",
    "History",
    "build_mixing",
    "smoothed_marginals",
    "smoothed_marginal",
    "ranking_probability",
    "sample_ranking",
    "uniform_ranking",
    "importance_weight",
    "empirical_reward",
    "empirical_regret",
]


class SparseSubdistribution:
    """Nonnegative weights over a sparse set of policies, total at most 1.

    When ``leader`` is set the missing mass ``1 - total`` is placed on it, which
    turns the subdistribution into a full distribution (see :meth:`effective`).
    """

    def __init__(self, weights=None, leader: Optional[Policy] = None):
        self.weights: dict = {}
        self.policies: dict = {}
        self.leader = leader
        for policy, weight in (weights or []):
            self.add(policy, weight)

    def __len__(self):
        return len(self.weights)

    def copy(self):
        out = SparseSubdistribution(leader=self.leader)
        out.weights = dict(self.weights)
        out.policies = dict(self.policies)
        return out

    def add(self, policy: Policy, amount: float):
        if amount < 0:
            raise ValueError("weights must stay nonnegative")
        self.policies.setdefault(policy.key, policy)
        self.weights[policy.key] = self.weights.get(policy.key, 0.0) + float(amount)

    def scale(self, c: float):
        for key in self.weights:
            self.weights[key] *= c

    def total(self) -> float:
        return math.fsum(self.weights.values())

    def items(self):
        return [(self.policies[k], w) for k, w in self.weights.items()]

    def weight(self, policy) -> float:
        return self.weights.get(policy.key, 0.0)

    def effective(self):
        """(policy, weight) pairs of the leader-completed distribution."""
        items = dict(self.weights)
        policies = dict(self.policies)
        if self.leader is not None:
            residual = max(0.0, 1.0 - self.total())
            policies.setdefault(self.leader.key, self.leader)
            items[self.leader.key] = items.get(self.leader.key, 0.0) + residual
        return [(policies[k], w) for k, w in items.items() if w > 0]


@dataclass(frozen=True, eq=False)
class MixingDistribution:
    """Exploration distribution over rankings for one context.

    ``rankings=None`` means uniform over all rankings of the context's valid
    actions (``p_min = L``); otherwise uniform over the listed rankings, one per
    valid action (``p_min = 1``).
    """

    K: int
    L: int
    valid: np.ndarray
    rankings: Optional[tuple] = None

    @property
    def kind(self) -> str:
        return "all-rankings-uniform" if self.rankings is None else "per-action-ranking-list"

    @property
    def p_min(self) -> float:
        return float(self.L) if self.rankings is None else 1.0

    def marginals(self) -> np.ndarray:
        """Probability that each action appears in a sampled ranking."""
        out = np.zeros(self.K)
        if self.rankings is None:
            out[self.valid] = self.L / self.valid.sum()
        else:
            for ranking in self.rankings:
                out[list(ranking)] += 1.0
            out /= len(self.rankings)
        return out

    def probability(self, ranking) -> float:
        ranking = tuple(ranking)
        if self.rankings is None:
            if len(set(ranking)) != self.L or not all(self.valid[a] for a in ranking):
                return 0.0
            n = int(self.valid.sum())
            return math.factorial(n - self.L) / math.factorial(n)
        return sum(r == ranking for r in self.rankings) / len(self.rankings)

    def sample(self, rng) -> tuple:
        if self.rankings is None:
            return uniform_ranking(self.valid, self.L, rng)
        return self.rankings[int(rng.integers(len(self.rankings)))]


def uniform_ranking(valid, L, rng) -> tuple:
    """L distinct valid actions in uniformly random order (partial Fisher-Yates)."""
    actions = np.flatnonzero(valid)
    n = actions.shape[0]
    for i in range(L):
        j = i + int(rng.integers(n - i))
        actions[i], actions[j] = actions[j], actions[i]
    return tuple(int(a) for a in actions[:L])


_UNRESTRICTED: dict = {}


def build_mixing(context: Context, L: int, oracle=None) -> MixingDistribution:
    """Mixing distribution for ``context``.

    Unrestricted contexts get the uniform law over all rankings.  Restricted
    ones get one oracle ranking per valid action, found by maximising the
    single-point dataset ``(x, e_a, 1)``.
    """
    K = context.K
    if not context.restricted:
        key = (K, L)
        if key not in _UNRESTRICTED:
            _UNRESTRICTED[key] = MixingDistribution(K, L, np.ones(K, dtype=bool))
        return _UNRESTRICTED[key]
    if oracle is None:
        raise ValueError("restricted contexts need an oracle to build the mixing list")
    from .oracle import AmoDataset

    rankings = []
    for a in np.flatnonzero(context.valid):
        policy = oracle.argmax(AmoDataset.single_point(context, int(a), L))
        ranking = tuple(policy(context))
        if a not in ranking:
            raise OracleError(f"oracle ranking {ranking} does not contain action {a}")
        rankings.append(ranking)
    return MixingDistribution(K, L, context.valid.copy(), tuple(rankings))


def _check_mu(mu, K):
    if not 0.0 <= mu <= 1.0 / K + 1e-15:
        raise ValueError(f"mu must lie in [0, 1/K], got {mu}")


def _policy_marginals(Q, context, use_leader=True):
    out = np.zeros(context.K)
    pairs = Q.effective() if use_leader else Q.items()
    for policy, weight in pairs:
        out[list(policy(context))] += weight
    return out


def smoothed_marginals(Q, context, mu, U, use_leader=True) -> np.ndarray:
    """Per-action inclusion probabilities of the smoothed distribution.

    ``(1 - K mu) * sum_pi Q(pi) 1(a in pi(x)) + K mu * U(a in A)``.  With
    ``use_leader=False`` the raw subdistribution is smoothed instead of its
    leader completion.
    """
    K = context.K
    _check_mu(mu, K)
    return (1 - K * mu) * _policy_marginals(Q, context, use_leader) + K * mu * U.marginals()


def smoothed_marginal(Q, context, mu, U, a, use_leader=True) -> float:
    return float(smoothed_marginals(Q, context, mu, U, use_leader)[a])


def ranking_probability(Q, context, mu, U, ranking) -> float:
    """Closed-form probability of ``ranking`` under the smoothed law."""
    K = context.K
    _check_mu(mu, K)
    ranking = tuple(ranking)
    p = sum(w for policy, w in Q.effective() if tuple(policy(context)) == ranking)
    return (1 - K * mu) * p + K * mu * U.probability(ranking)


def sample_ranking(Q, context, mu, U, rng):
    """Draw ``(ranking, explored)`` from the smoothed leader-completed law."""
    K = context.K
    _check_mu(mu, K)
    if rng.random() < K * mu:
        return U.sample(rng), True
    pairs = Q.effective()
    if not pairs:
        raise ValueError("nothing to exploit: empty distribution and no leader")
    weights = np.array([w for _, w in pairs])
    u = rng.random() * weights.sum()
    idx = min(int(np.searchsorted(np.cumsum(weights), u, side="right")), len(pairs) - 1)
    return tuple(pairs[idx][0](context)), False


@dataclass(eq=False)
class InteractionRecord:
    """One logged round.  ``marginals[l]`` is the propensity of ``chosen[l]``."""

    context: Context
    chosen: tuple
    observed_y: np.ndarray
    marginals: np.ndarray
    reward: float
    mixing: Optional[MixingDistribution] = None
    explored: bool = False

    def __post_init__(self):
        self.chosen = tuple(int(a) for a in self.chosen)
        self.observed_y = np.asarray(self.observed_y, dtype=float)
        self.marginals = np.asarray(self.marginals, dtype=float)


def importance_weight(record: InteractionRecord) -> np.ndarray:
    """``y(a) / q(a)`` on chosen actions, zero elsewhere."""
    if np.any(record.marginals <= 0):
        raise ZeroDivisionError("importance weighting needs strictly positive propensities")
    out = np.zeros(record.context.K)
    out[list(record.chosen)] = record.observed_y / record.marginals
    return out


class History:
    """Append-only interaction log with cached array views.

    Contexts are grouped by ``id``: ``unique_contexts`` lists each distinct
    context once, ``inverse[i]`` maps round ``i`` to it and ``counts`` holds
    multiplicities.  Empirical expectations over the log equal count-weighted
    averages over the unique contexts.
    """

    def __init__(self, records=()):
        self.records: list = []
        self._index: dict = {}
        self.unique_contexts: list = []
        self._inverse: list = []
        self._ips: list = []
        self._cache: dict = {}
        for r in records:
            self.append(r)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def append(self, record: InteractionRecord):
        self.records.append(record)
        cid = record.context.id
        j = self._index.get(cid)
        if j is None:
            j = self._index[cid] = len(self.unique_contexts)
            self.unique_contexts.append(record.context)
        self._inverse.append(j)
        self._ips.append(importance_weight(record))
        self._cache.clear()

    def _cached(self, name, build):
        if name not in self._cache:
            self._cache[name] = build()
        return self._cache[name]

    @property
    def inverse(self) -> np.ndarray:
        return self._cached("inverse", lambda: np.array(self._inverse, dtype=np.int64))

    @property
    def counts(self) -> np.ndarray:
        return self._cached(
            "counts",
            lambda: np.bincount(self.inverse, minlength=len(self.unique_contexts)).astype(float),
        )

    @property
    def ips(self) -> np.ndarray:
        """(t, K) matrix of importance-weighted feature vectors."""
        return self._cached("ips", lambda: np.array(self._ips).reshape(len(self), -1))

    @property
    def ips_by_context(self) -> np.ndarray:
        """Sum of importance-weighted vectors per unique context, (n_unique, K)."""
        def build():
            out = np.zeros((len(self.unique_contexts), self.ips.shape[1]))
            np.add.at(out, self.inverse, self.ips)
            return out
        return self._cached("ips_by_context", build)

    def mixing_marginals(self) -> np.ndarray:
        """U(a in A | x) per unique context, (n_unique, K)."""
        def build():
            out = np.zeros((len(self.unique_contexts), self.ips.shape[1]))
            seen = set()
            for rec, j in zip(self.records, self._inverse):
                if j in seen:
                    continue
                seen.add(j)
                mixing = rec.mixing
                if mixing is None:
                    raise ValueError("record lacks its mixing distribution")
                out[j] = mixing.marginals()
            return out
        return self._cached("mixing", build)


def _ensure_history(history):
    return history if isinstance(history, History) else History(history)


def empirical_reward(history, policy, w) -> float:
    """``(1/t) sum_i <w, yhat_i(pi(x_i))>`` over the log."""
    history = _ensure_history(history)
    if len(history) == 0:
        raise ValueError("history is empty")
    w = np.asarray(w, dtype=float)
    ranks = policy.rank_many(history.unique_contexts)
    vals = np.take_along_axis(history.ips_by_context, ranks, axis=1) @ w
    return float(vals.sum() / len(history))


def empirical_regret(history, policy, w, oracle) -> float:
    """Best empirical reward (one oracle call) minus ``policy``'s.

    Negative values are returned as-is; they flag an approximate oracle.
    """
    history = _ensure_history(history)
    best = oracle.best_policy(history, w)
    return empirical_reward(history, best, w) - empirical_reward(history, policy, w)

"""Argmax oracles.

An oracle takes a dataset of ``(context, y, v)`` rows, where ``y`` assigns a
value to every action and ``v`` weights the L slots, and returns the policy
maximising ``sum_i <v_i, y_i(pi(x_i))>``.  Two implementations:

* :class:`ExactOracle` enumerates a finite policy class.
* :class:`RegressionOracle` reduces to weighted least squares and returns the
  greedy policy of the fitted scorer.  It is approximate.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from .core import (
    Context,
    LinearGreedyPolicy,
    Policy,
    TabularPolicyClass,
    _greedy_rank_many,
    greedy_ranking,
)

__all__ = [
    "AmoDataset",
    "RegressionDataset",
    "amo_exact",
    "ExactOracle",
    "WeightedLeastSquares",
    "fit_regressor",
    "greedy_ranking",
    "amo_regression",
    "RegressionOracle",
    "EstimatorGreedyPolicy",
]

DEFAULT_MAX_POLICIES = 10**5


@dataclass
class AmoDataset:
    """Rows ``(contexts[i], Y[i], V[i])`` with optional multiplicities ``counts``.

    A row with count ``m`` contributes like ``m`` identical rows.
    """

    contexts: list
    Y: np.ndarray
    V: np.ndarray
    counts: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.contexts)
        self.Y = np.asarray(self.Y, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        if n and (self.Y.shape[0] != n or self.V.shape[0] != n):
            raise ValueError("Y and V need one row per context")
        self.counts = np.ones(n) if self.counts is None else np.asarray(self.counts, dtype=float)

    def __len__(self):
        return len(self.contexts)

    @classmethod
    def single_point(cls, context: Context, a: int, L: int):
        y = np.zeros((1, context.K))
        y[0, a] = 1.0
        return cls([context], y, np.ones((1, L)))

    @classmethod
    def from_history(cls, history, w):
        """Importance-weighted history, grouped by context (averages with counts)."""
        w = np.asarray(w, dtype=float)
        n = len(history.unique_contexts)
        if n == 0:
            return cls([], np.zeros((0, 0)), np.zeros((0, w.shape[0])), np.zeros(0))
        counts = history.counts
        Y = history.ips_by_context / counts[:, None]
        return cls(list(history.unique_contexts), Y, np.tile(w, (n, 1)), counts)

    @classmethod
    def concat(cls, *parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls([], np.zeros((0, 0)), np.zeros((0, 0)))
        return cls(
            list(itertools.chain.from_iterable(p.contexts for p in parts)),
            np.vstack([p.Y for p in parts]),
            np.vstack([p.V for p in parts]),
            np.concatenate([p.counts for p in parts]),
        )

    def objective(self, policy: Policy) -> float:
        if not len(self):
            return 0.0
        ranks = policy.rank_many(self.contexts)
        vals = np.take_along_axis(self.Y, ranks, axis=1)
        return float(self.counts @ (vals * self.V).sum(axis=1))


def amo_exact(policy_class, dataset: AmoDataset, max_policies: int = DEFAULT_MAX_POLICIES) -> int:
    """Index of the policy with the largest dataset objective (lowest index on ties)."""
    N = len(policy_class)
    if N == 0:
        raise ValueError("policy class is empty")
    if N > max_policies:
        raise ValueError(f"policy class has {N} members, cap is {max_policies}")
    if not len(dataset):
        return 0
    return int(np.argmax(_objectives(policy_class, dataset)))


def _objectives(policy_class, dataset):
    weighted = dataset.V * dataset.counts[:, None]  # (n, L)
    if isinstance(policy_class, TabularPolicyClass):
        # aggregate rows by context id, then one gather per slot
        ids = np.fromiter((x.id for x in dataset.contexts), dtype=np.int64, count=len(dataset))
        uniq, inv = np.unique(ids, return_inverse=True)
        L = weighted.shape[1]
        G = np.zeros((L, uniq.shape[0], dataset.Y.shape[1]))
        for ell in range(L):
            np.add.at(G[ell], inv, weighted[:, ell, None] * dataset.Y)
        A = policy_class.tables[:, uniq, :]  # (N, n_u, L)
        rows = np.arange(uniq.shape[0])[None, :]
        total = np.zeros(A.shape[0])
        for ell in range(L):
            total += G[ell][rows, A[:, :, ell]].sum(axis=1)
        return total
    A = policy_class.rankings(dataset.contexts)  # (N, n, L)
    rows = np.arange(len(dataset))[None, :, None]
    vals = dataset.Y[rows, A]
    return (vals * weighted[None]).sum(axis=(1, 2))


class ExactOracle:
    """Enumerates a finite policy class; counts its calls."""

    exact = True

    def __init__(self, policy_class, max_policies: int = DEFAULT_MAX_POLICIES):
        self.policy_class = policy_class
        self.max_policies = max_policies
        self.n_calls = 0

    def argmax(self, dataset: AmoDataset) -> Policy:
        self.n_calls += 1
        return self.policy_class[amo_exact(self.policy_class, dataset, self.max_policies)]

    def best_policy(self, history, w) -> Policy:
        """Empirical-reward maximiser on the importance-weighted history."""
        return self.argmax(AmoDataset.from_history(history, w))

    def objectives(self, dataset):
        return _objectives(self.policy_class, dataset)


@dataclass
class RegressionDataset:
    """Rows ``(context, actions, targets, weights)`` for weighted squared loss."""

    contexts: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    weights: list = field(default_factory=list)

    def __len__(self):
        return len(self.contexts)

    def append(self, context, actions, targets, weights):
        actions = np.asarray(actions, dtype=int)
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0):
            raise ValueError("regression weights must be nonnegative")
        if not context.valid[actions].all():
            raise ValueError("listed actions must be valid for their context")
        self.contexts.append(context)
        self.actions.append(actions)
        self.targets.append(np.asarray(targets, dtype=float))
        self.weights.append(weights)

    @classmethod
    def from_history(cls, history):
        """Chosen actions only, targets the observed feedback, weights 1/propensity."""
        out = cls()
        for rec in history:
            out.append(rec.context, rec.chosen, rec.observed_y, 1.0 / rec.marginals)
        return out

    @classmethod
    def from_amo(cls, dataset: AmoDataset):
        """Every valid action listed, target ``Y[i, a]``, weight the row count."""
        out = cls()
        for x, y, m in zip(dataset.contexts, dataset.Y, dataset.counts):
            acts = np.flatnonzero(x.valid)
            out.append(x, acts, y[acts], np.full(acts.shape[0], m))
        return out

    def design(self):
        if not len(self):
            return np.zeros((0, 0)), np.zeros(0), np.zeros(0)
        X = np.vstack([x.features[a] for x, a in zip(self.contexts, self.actions)])
        return X, np.concatenate(self.targets), np.concatenate(self.weights)


class WeightedLeastSquares(RegressorMixin, BaseEstimator):
    """Linear least squares without intercept via the weighted normal equations.

    Rank-deficient systems fall back to the pseudoinverse, which yields the
    minimum-norm minimiser.
    """

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y, y_numeric=True)
        sw = np.ones(X.shape[0]) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        if sw.shape != (X.shape[0],) or np.any(sw < 0):
            raise ValueError("sample_weight must be a nonnegative vector, one entry per row")
        gram = X.T @ (sw[:, None] * X)
        rhs = X.T @ (sw * y)
        if np.linalg.matrix_rank(gram, hermitian=True) == X.shape[1]:
            self.coef_ = np.linalg.solve(gram, rhs)
        else:
            self.coef_ = np.linalg.pinv(gram, hermitian=True) @ rhs
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return check_array(X) @ self.coef_


def fit_regressor(dataset: RegressionDataset, d: Optional[int] = None) -> np.ndarray:
    """Score vector minimising the weighted squared loss; zeros with no data."""
    X, y, sw = dataset.design()
    if X.shape[0] == 0 or not np.any(sw > 0):
        if d is None:
            d = dataset.contexts[0].d if len(dataset) else 0
        return np.zeros(d)
    return WeightedLeastSquares().fit(X, y, sample_weight=sw).coef_


def amo_regression(dataset, w) -> LinearGreedyPolicy:
    """Regression-reduction oracle with the linear class."""
    if isinstance(dataset, AmoDataset):
        dataset = RegressionDataset.from_amo(dataset)
    return LinearGreedyPolicy(fit_regressor(dataset), w)


class EstimatorGreedyPolicy(Policy):
    """Greedy ranking under an arbitrary fitted sklearn regressor."""

    _counter = itertools.count()

    def __init__(self, estimator, w):
        self.estimator = estimator
        self.w = np.asarray(w, dtype=float)
        self.key = ("estimator", next(self._counter))

    def __call__(self, context):
        return greedy_ranking(self.estimator.predict(context.features), self.w, context.valid)

    def rank_many(self, contexts):
        if not contexts:
            return np.zeros((0, self.w.shape[0]), dtype=int)
        K = contexts[0].K
        scores = self.estimator.predict(np.vstack([x.features for x in contexts])).reshape(-1, K)
        valid = np.stack([x.valid for x in contexts])
        return _greedy_rank_many(scores, self.w, valid)


class RegressionOracle:
    """Approximate oracle: fit a regressor, rank greedily by its predictions.

    ``estimator`` is any sklearn regressor accepting ``sample_weight``; the
    default is :class:`WeightedLeastSquares`, giving :class:`LinearGreedyPolicy`
    outputs.  ``d`` is the feature dimension, used when a dataset is empty.
    """

    exact = False

    def __init__(self, d: int, estimator=None):
        self.d = d
        self.estimator = estimator
        self.n_calls = 0

    def _fit(self, dataset: RegressionDataset, w) -> Policy:
        self.n_calls += 1
        w = np.asarray(w, dtype=float)
        if self.estimator is None:
            return LinearGreedyPolicy(fit_regressor(dataset, self.d), w)
        X, y, sw = dataset.design()
        if X.shape[0] == 0:
            return LinearGreedyPolicy(np.zeros(self.d), w)
        return EstimatorGreedyPolicy(clone(self.estimator).fit(X, y, sample_weight=sw), w)

    def argmax(self, dataset: AmoDataset) -> Policy:
        # slot weights cannot enter the squared loss; rows are ranked with the
        # count-weighted mean of their v vectors
        if len(dataset):
            v = dataset.counts @ dataset.V / dataset.counts.sum()
        else:
            v = np.ones(dataset.V.shape[1] or 1)
        return self._fit(RegressionDataset.from_amo(dataset), v)

    def best_policy(self, history, w) -> Policy:
        return self._fit(RegressionDataset.from_history(history), w)

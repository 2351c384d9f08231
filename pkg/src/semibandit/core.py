"""Domain types, environments and policies.

A round of the semibandit game draws a context with per-action features, a
vector of per-action reward features ``y`` in [0, 1] and a mean-zero noise
term.  The learner picks a ranking (an ordered tuple of ``L`` distinct action
indices) and is paid ``sum_l w[l] * y[ranking[l]] + noise``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import ConfigError

__all__ = [
    "Context",
    "RoundSample",
    "EnvironmentSpec",
    "SyntheticEnvironment",
    "ReplayEnvironment",
    "Policy",
    "TabularPolicy",
    "LinearGreedyPolicy",
    "FinitePolicyClass",
    "TabularPolicyClass",
    "make_environment",
    "make_tabular_class",
    "realized_reward",
    "synth_draw",
    "expected_policy_reward",
    "exact_policy_reward",
    "greedy_ranking",
    "check_ranking",
    "all_rankings",
]


@dataclass(frozen=True, eq=False)
class Context:
    """One context: ``features`` is (K, d); ``valid`` flags playable actions."""

    id: int
    features: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.ndim != 2:
            raise ValueError("context features must be a (K, d) array")
        object.__setattr__(self, "features", features)
        if self.valid is None:
            valid = np.ones(features.shape[0], dtype=bool)
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != (features.shape[0],):
                raise ValueError("valid mask must have one entry per action")
        object.__setattr__(self, "valid", valid)

    @property
    def K(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def restricted(self) -> bool:
        return not bool(self.valid.all())


@dataclass(frozen=True, eq=False)
class RoundSample:
    context: Context
    y: np.ndarray
    noise: float = 0.0


def check_ranking(ranking, K: int, L: int, valid=None) -> tuple:
    """Validate a ranking and return it as a tuple of ints."""
    ranking = tuple(int(a) for a in ranking)
    if len(ranking) != L:
        raise ValueError(f"ranking must have length {L}, got {len(ranking)}")
    if len(set(ranking)) != L:
        raise ValueError(f"ranking entries must be distinct: {ranking}")
    for a in ranking:
        if not 0 <= a < K:
            raise ValueError(f"action {a} outside [0, {K})")
        if valid is not None and not valid[a]:
            raise ValueError(f"action {a} is not valid in this context")
    return ranking


def all_rankings(K: int, L: int, valid=None):
    """Every ordered L-tuple of distinct (valid) actions."""
    actions = range(K) if valid is None else np.flatnonzero(valid).tolist()
    return list(itertools.permutations(actions, L))


def realized_reward(ranking, y, w, noise: float = 0.0) -> float:
    """``sum_l w[l] * y[ranking[l]] + noise``, summed left to right."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if len(ranking) != w.shape[0]:
        raise ValueError(f"ranking has {len(ranking)} slots but w has {w.shape[0]}")
    total = 0.0
    for slot, action in enumerate(ranking):
        if not 0 <= action < y.shape[0]:
            raise ValueError(f"action {action} outside reward feature vector")
        total += float(w[slot]) * float(y[action])
    return total + float(noise)


def greedy_ranking(scores, w, valid=None) -> tuple:
    """Top-L valid actions by score, assigned to slots by decreasing weight.

    Ties in either sort go to the lowest index.  For nonnegative ``w`` this is
    the exact maximiser of ``sum_l w[l] * scores[ranking[l]]``.
    """
    scores = np.asarray(scores, dtype=float)
    w = np.asarray(w, dtype=float)
    L = w.shape[0]
    if np.any(w < 0):
        raise ValueError("greedy ranking needs nonnegative slot weights")
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if valid.sum() < L:
            raise ValueError(f"only {int(valid.sum())} valid actions, need {L}")
        scores = np.where(valid, scores, -np.inf)
    elif scores.shape[0] < L:
        raise ValueError(f"only {scores.shape[0]} actions, need {L}")
    top = np.argsort(-scores, kind="stable")[:L]
    slots = np.argsort(-w, kind="stable")
    ranking = np.empty(L, dtype=int)
    ranking[slots] = top
    return tuple(int(a) for a in ranking)


def _greedy_rank_many(scores, w, valid):
    # scores, valid: (n, K)
    L = w.shape[0]
    if np.any(valid.sum(axis=1) < L):
        raise ValueError(f"some context has fewer than {L} valid actions")
    masked = np.where(valid, scores, -np.inf)
    top = np.argsort(-masked, axis=1, kind="stable")[:, :L]
    slots = np.argsort(-w, kind="stable")
    out = np.empty_like(top)
    out[:, slots] = top
    return out


# --------------------------------------------------------------------------
# Policies


class Policy:
    """Maps a context to a ranking.  ``key`` identifies it inside a distribution."""

    key = None

    def __call__(self, context: Context) -> tuple:
        raise NotImplementedError

    def rank_many(self, contexts: Sequence[Context]) -> np.ndarray:
        """Rankings for several contexts as an (n, L) int array."""
        return np.array([self(x) for x in contexts], dtype=int)

    def __repr__(self):
        return f"{type(self).__name__}({self.key!r})"


class TabularPolicy(Policy):
    """Explicit table: row ``context.id`` of ``table`` is the ranking."""

    def __init__(self, table, index=0):
        self.table = np.asarray(table, dtype=int)
        self.index = int(index)
        self.key = ("tabular", self.index)

    def __call__(self, context):
        return tuple(int(a) for a in self.table[context.id])

    def rank_many(self, contexts):
        ids = np.fromiter((x.id for x in contexts), dtype=np.int64, count=len(contexts))
        return self.table[ids]


class LinearGreedyPolicy(Policy):
    """Score actions by ``features @ theta`` and rank greedily."""

    def __init__(self, theta, w):
        self.theta = np.asarray(theta, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.key = ("linear", self.theta.tobytes(), self.w.tobytes())

    def scores(self, context):
        return context.features @ self.theta

    def __call__(self, context):
        return greedy_ranking(self.scores(context), self.w, context.valid)

    def rank_many(self, contexts):
        if not contexts:
            return np.zeros((0, self.w.shape[0]), dtype=int)
        feats = np.stack([x.features for x in contexts])
        valid = np.stack([x.valid for x in contexts])
        return _greedy_rank_many(feats @ self.theta, self.w, valid)


class FinitePolicyClass:
    """An enumerable list of policies; ``rankings`` evaluates all of them at once."""

    def __init__(self, policies):
        self.policies = list(policies)
        if not self.policies:
            raise ValueError("policy class is empty")

    def __len__(self):
        return len(self.policies)

    def __getitem__(self, i):
        return self.policies[i]

    def __iter__(self):
        return iter(self.policies)

    def rankings(self, contexts) -> np.ndarray:
        """(N, n, L) array of every policy's ranking on every context."""
        return np.stack([p.rank_many(contexts) for p in self.policies])


class TabularPolicyClass(FinitePolicyClass):
    """N tabular policies over context ids ``0..M-1`` stored as an (N, M, L) array."""

    def __init__(self, tables):
        tables = np.asarray(tables, dtype=int)
        if tables.ndim != 3 or tables.shape[0] == 0:
            raise ValueError("tables must be a nonempty (N, M, L) array")
        self.tables = tables
        super().__init__(TabularPolicy(tables[i], i) for i in range(tables.shape[0]))

    def rankings(self, contexts):
        ids = np.fromiter((x.id for x in contexts), dtype=np.int64, count=len(contexts))
        return self.tables[:, ids, :]


# --------------------------------------------------------------------------
# Environments


@dataclass
class EnvironmentSpec:
    """Parameters of a synthetic or replay environment.

    ``n_contexts`` set means contexts come from a fixed pool of that size with
    ids ``0..n_contexts-1`` (needed for tabular policies); otherwise every draw
    has fresh features.  ``link`` is ``"logistic"`` (the default generator) or
    ``"linear"`` (``y = (1 + theta.phi / |theta|_1) / 2``, linearly realisable).
    """

    K: int
    L: int
    d: int = 5
    kind: str = "synth"
    noise_halfwidth: float = 0.0
    latent_score_seed: int = 0
    weights: Optional[Sequence[float]] = None
    n_contexts: Optional[int] = None
    signal: float = 3.0
    link: str = "logistic"
    restricted_fraction: float = 0.0

    def __post_init__(self):
        if not 1 <= self.L <= self.K:
            raise ConfigError(f"need 1 <= L <= K, got L={self.L}, K={self.K}")
        if not 0.0 <= self.noise_halfwidth <= 1.0:
            raise ConfigError("noise_halfwidth must lie in [0, 1]")
        if self.kind not in ("synth", "letor"):
            raise ConfigError(f"unknown environment kind {self.kind!r}")
        if self.link not in ("logistic", "linear"):
            raise ConfigError(f"unknown link {self.link!r}")
        if not 0.0 <= self.restricted_fraction <= 1.0:
            raise ConfigError("restricted_fraction must lie in [0, 1]")
        if self.weights is None:
            self.weights = [1.0] * self.L
        if len(self.weights) != self.L:
            raise ConfigError(f"weights must have length L={self.L}")

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


class SyntheticEnvironment:
    """Linear-logistic generator.

    Per-action features are uniform on [-1, 1]^d, ``y(a) = sigmoid(signal *
    theta . phi(x, a))`` with ``theta`` a unit vector fixed by the latent seed,
    and the noise is uniform on [-h, h].
    """

    def __init__(self, spec: EnvironmentSpec):
        self.spec = spec
        self.K, self.L, self.d = spec.K, spec.L, spec.d
        self.w = spec.w
        latent = np.random.default_rng(spec.latent_score_seed)
        theta = latent.normal(size=spec.d)
        self.theta = theta / np.linalg.norm(theta)
        self.contexts = None
        self._pool_y = None
        if spec.n_contexts is not None:
            feats = latent.uniform(-1.0, 1.0, size=(spec.n_contexts, spec.K, spec.d))
            self.contexts = [
                Context(m, feats[m], self._mask(latent)) for m in range(spec.n_contexts)
            ]
            self._pool_y = [self.expected_y(x) for x in self.contexts]

    def _mask(self, rng):
        n_off = int(np.floor(self.spec.restricted_fraction * (self.K - self.L)))
        valid = np.ones(self.K, dtype=bool)
        if n_off:
            valid[rng.choice(self.K, size=n_off, replace=False)] = False
        return valid

    def expected_y(self, context: Context) -> np.ndarray:
        s = context.features @ self.theta
        if self.spec.link == "linear":
            return 0.5 + 0.5 * s / np.abs(self.theta).sum()
        return 1.0 / (1.0 + np.exp(-self.spec.signal * s))

    def draw(self, rng) -> RoundSample:
        if self.contexts is not None:
            m = int(rng.integers(len(self.contexts)))
            context, y = self.contexts[m], self._pool_y[m]
        else:
            cid = int(rng.integers(2**62))
            feats = rng.uniform(-1.0, 1.0, size=(self.K, self.d))
            context = Context(cid, feats, self._mask(rng))
            y = self.expected_y(context)
        h = self.spec.noise_halfwidth
        noise = float(rng.uniform(-h, h)) if h > 0 else 0.0
        return RoundSample(context, y, noise)

    def best_reward(self, w=None) -> float:
        """Mean over the pool of the best ranking's reward (any ranking allowed)."""
        return _best_pool_reward(self, self.w if w is None else w)


class ReplayEnvironment:
    """Replays a fixed list of contexts (e.g. LETOR queries) in order.

    Passes wrap around; with ``shuffle`` each pass is permuted with the run's rng.
    """

    def __init__(self, contexts, ys, L, weights=None, noise_halfwidth=0.0, shuffle=False):
        if not contexts:
            raise ConfigError("replay environment has no contexts")
        self.contexts = list(contexts)
        self._pool_y = [np.asarray(y, dtype=float) for y in ys]
        self.K = self.contexts[0].K
        self.d = self.contexts[0].d
        self.L = L
        self.w = np.ones(L) if weights is None else np.asarray(weights, dtype=float)
        self.noise_halfwidth = noise_halfwidth
        self.shuffle = shuffle
        self.spec = EnvironmentSpec(
            K=self.K, L=L, d=self.d, kind="letor",
            noise_halfwidth=noise_halfwidth, weights=list(self.w),
            n_contexts=len(self.contexts),
        )
        self._order = None
        self._cursor = 0

    def expected_y(self, context):
        return self._pool_y[context.id]

    def draw(self, rng) -> RoundSample:
        n = len(self.contexts)
        if self._cursor % n == 0:
            self._order = rng.permutation(n) if self.shuffle else np.arange(n)
        m = int(self._order[self._cursor % n])
        self._cursor += 1
        h = self.noise_halfwidth
        noise = float(rng.uniform(-h, h)) if h > 0 else 0.0
        return RoundSample(self.contexts[m], self._pool_y[m], noise)

    def best_reward(self, w=None) -> float:
        return _best_pool_reward(self, self.w if w is None else w)


def _best_pool_reward(env, w):
    w = np.asarray(w, dtype=float)
    total = 0.0
    for x, y in zip(env.contexts, env._pool_y):
        total += realized_reward(greedy_ranking(y, np.maximum(w, 0), x.valid), y, w)
    return total / len(env.contexts)


def make_environment(spec: EnvironmentSpec):
    if spec.kind != "synth":
        raise ConfigError("replay environments are built from data, see letor.build_replay_env")
    return SyntheticEnvironment(spec)


_ENV_CACHE: dict = {}


def synth_draw(spec: EnvironmentSpec, rng) -> RoundSample:
    """One draw from the synthetic environment described by ``spec``."""
    if spec.kind != "synth":
        raise ConfigError("synth_draw needs a synthetic spec")
    key = repr(spec)
    env = _ENV_CACHE.get(key)
    if env is None:
        env = _ENV_CACHE[key] = SyntheticEnvironment(spec)
    return env.draw(rng)


def expected_policy_reward(policy, env, w, n_mc: int, rng) -> float:
    """Monte Carlo estimate of a policy's expected (noise-free) reward."""
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    total = 0.0
    for _ in range(n_mc):
        sample = env.draw(rng)
        total += realized_reward(policy(sample.context), sample.y, w, 0.0)
    return total / n_mc


def exact_policy_reward(policy, env, w=None) -> float:
    """Expected reward under the uniform law over a finite context pool."""
    if env.contexts is None:
        raise ValueError("exact reward needs a finite context pool")
    w = env.w if w is None else np.asarray(w, dtype=float)
    rankings = policy.rank_many(env.contexts)
    ys = np.stack(env._pool_y)
    vals = np.take_along_axis(ys, rankings, axis=1) @ w
    return float(vals.mean())


def make_tabular_class(env, N: int, rng, anchor=None, spread: float = 2.0, w=None):
    """Tabulate N randomised linear-greedy policies over ``env``'s context pool.

    Each policy scores actions with ``anchor + tau * g`` for a Gaussian
    direction ``g`` and ``tau`` uniform on [0, spread]; with no anchor the
    directions are purely random.
    """
    if env.contexts is None:
        raise ConfigError("tabular policies need an environment with a context pool")
    w = env.w if w is None else np.asarray(w, dtype=float)
    w = np.maximum(w, 0.0)
    feats = np.stack([x.features for x in env.contexts])
    valid = np.stack([x.valid for x in env.contexts])
    tables = np.empty((N, len(env.contexts), env.L), dtype=int)
    for j in range(N):
        g = rng.normal(size=env.d)
        theta = g if anchor is None else np.asarray(anchor) + rng.uniform(0, spread) * g
        tables[j] = _greedy_rank_many(feats @ theta, w, valid)
    return TabularPolicyClass(tables)

"""Explore-exploit least squares (EELS) for unknown slot weights.

Rankings are played uniformly at random for at least ``n_star`` rounds and
then until the smallest eigenvalue of the feedback second-moment matrix
exceeds a threshold set from an estimate of the feedback variance.  The slot
weights are then recovered by least squares, a policy is chosen with one
oracle call on importance-weighted features, and that policy is played for
the rest of the horizon.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .base import SemibanditLearner
from .core import realized_reward
from .estimation import uniform_ranking
from .exceptions import ConfigError
from .oracle import AmoDataset

__all__ = [
    "EelsConfig",
    "SecondMomentAccumulator",
    "n_star",
    "vhat_term",
    "vhat_accumulate",
    "pair_inclusion_probability",
    "v_tilde",
    "lambda_star",
    "min_eigenvalue",
    "jacobi_eigenvalues",
    "least_squares_weights",
    "EELS",
    "eels_run",
]

log = logging.getLogger(__name__)


@dataclass
class EelsConfig:
    T: int
    K: int
    L: int
    N: int = 1000
    delta: float = 0.05
    B: float = 1.0
    lambda_override: Optional[float] = None

    def __post_init__(self):
        if not 1 <= self.L <= self.K:
            raise ConfigError("need 1 <= L <= K")
        if self.B <= 0:
            raise ConfigError("B must be positive")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.T < 1 or self.N < 1:
            raise ConfigError("T and N must be positive")


def n_star(cfg: EelsConfig) -> int:
    """Minimum exploration length, clamped to [1, T]."""
    K, L, T, B = cfg.K, cfg.L, cfg.T, cfg.B
    log_term = math.log(cfg.N / cfg.delta)
    needed = K * log_term / min(L, (B * L) ** 2)
    if T < needed:
        raise ConfigError(
            f"horizon too short: need T >= K ln(N/delta) / min(L, (BL)^2) = {needed:.3f}"
        )
    value = T ** (2 / 3) * (K * log_term / L) ** (1 / 3) * max(1.0, (B * math.sqrt(L)) ** (-2 / 3))
    # absorb float error at exact integers
    return int(min(max(math.ceil(value * (1 - 1e-12)), 1), T))


def pair_inclusion_probability(K: int, L: int) -> float:
    """Probability two given distinct actions both appear in a uniform ranking."""
    return L * (L - 1) / (K * (K - 1))


def vhat_term(ranking, observed_y, K: int) -> float:
    """One round's unbiased contribution to the feedback-variance estimate."""
    L = len(ranking)
    if L < 2:
        raise ValueError("variance estimation needs L >= 2")
    y = np.asarray(observed_y, dtype=float)
    diff = y[:, None] - y[None, :]
    # ordered pairs within the ranking; the diagonal is zero
    return float((diff**2).sum() / pair_inclusion_probability(K, L) / (2 * K * K))


def vhat_accumulate(records, K: int, L: int) -> float:
    """Mean of :func:`vhat_term` over uniform-exploration records."""
    if L < 2:
        raise ValueError("variance estimation needs L >= 2")
    terms = [vhat_term(r.chosen, r.observed_y, K) for r in records]
    if not terms:
        raise ValueError("no records")
    return math.fsum(terms) / len(terms)


def v_tilde(vhat: float, n: int, delta: float) -> float:
    if vhat < 0:
        raise ValueError("vhat must be nonnegative")
    return 2 * vhat + 3 * math.log(2 / delta) / (2 * n)


def lambda_star(vt: float, cfg: EelsConfig) -> float:
    if cfg.lambda_override is not None:
        return float(cfg.lambda_override)
    L, T, d = cfg.L, cfg.T, cfg.delta
    return max(6 * L * L * math.log(4 * L * T / d),
               (T * vt / cfg.B) ** (2 / 3) * (L * math.log(2 / d)) ** (1 / 3))


def jacobi_eigenvalues(A, tol: float = 1e-10, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm is at most
    ``tol * ||A||_F``.
    """
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-9:
        raise ValueError("matrix is not symmetric")
    A = (A + A.T) / 2
    n = A.shape[0]
    scale = np.linalg.norm(A)
    if n == 1 or scale == 0.0:
        return np.diag(A).copy()
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                tau = (A[q, q] - A[p, p]) / (2 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1 + tau * tau))
                c = 1 / math.sqrt(1 + t * t)
                s = t * c
                # A <- J^T A J with J the (p, q) rotation
                colp, colq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * colp - s * colq
                A[:, q] = s * colp + c * colq
                rowp, rowq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rowp - s * rowq
                A[q, :] = s * rowp + c * rowq
                A[p, q] = A[q, p] = 0.0
    return np.diag(A).copy()


def min_eigenvalue(Sigma) -> float:
    return float(jacobi_eigenvalues(Sigma).min())


class SecondMomentAccumulator:
    """Running ``sum y y^T`` and ``sum y r`` over observed slot feedback."""

    def __init__(self, L: int):
        self.Sigma = np.zeros((L, L))
        self.cross = np.zeros(L)
        self.count = 0

    def update(self, observed_y, reward: float):
        y = np.asarray(observed_y, dtype=float)
        self.Sigma += np.outer(y, y)
        self.cross += y * reward
        self.count += 1


def least_squares_weights(acc: SecondMomentAccumulator) -> np.ndarray:
    """Solve ``Sigma w = cross``; minimum-norm solution if Sigma is singular."""
    if acc.count < 1:
        raise ValueError("accumulator is empty")
    Sigma = acc.Sigma
    if np.linalg.matrix_rank(Sigma, hermitian=True) == Sigma.shape[0]:
        return np.linalg.solve(Sigma, acc.cross)
    return np.linalg.pinv(Sigma, hermitian=True) @ acc.cross


class EELS(SemibanditLearner):
    """Explore-first learner for unknown slot weights.

    Parameters
    ----------
    oracle : ExactOracle or RegressionOracle
    horizon : int
        Total number of rounds ``T``.
    n_policies : int, default=1000
        Class size ``N`` (a surrogate for infinite classes).
    delta : float, default=0.05
    B : float, default=1.0
        Bound on the Euclidean norm of the true weights.
    lambda_override : float or None
        Replace the eigenvalue threshold (0 ends exploration after ``n_star``
        rounds once the second-moment matrix is nonsingular).
    L : int
        Number of slots.
    """

    def __init__(self, oracle=None, horizon=None, L=None, n_policies=1000, delta=0.05, B=1.0,
                 lambda_override=None):
        self.oracle = oracle
        self.horizon = horizon
        self.L = L
        self.n_policies = n_policies
        self.delta = delta
        self.B = B
        self.lambda_override = lambda_override

    def _slot_count(self):
        return self.L

    def _init_state(self, context):
        if self.oracle is None or self.horizon is None or self.L is None:
            raise ConfigError("EELS needs oracle, horizon and L")
        if context.restricted:
            raise ConfigError("EELS needs every ranking to be valid")
        self.config_ = EelsConfig(self.horizon, context.K, self.L, self.n_policies, self.delta,
                                  self.B, self.lambda_override)
        if self.L < 2:
            raise ConfigError("EELS estimates feedback variance and needs L >= 2")
        self.n_star_ = n_star(self.config_)
        self.acc_ = SecondMomentAccumulator(self.L)
        self.vhat_sum_ = 0.0
        self.vhat_ = None
        self.v_tilde_ = None
        self.lambda_star_ = None
        self.w_hat_ = None
        self.policy_ = None
        self.explore_rounds_ = None
        self.exhausted_ = False
        self.gate_trace_ = []

    @property
    def phase(self):
        if getattr(self, "policy_", None) is not None:
            return "exploit"
        t = self.t_
        return "explore-min" if t < getattr(self, "n_star_", 1) else "explore-gate"

    def _choose(self, context, rng):
        if self.policy_ is not None:
            ranking = self.policy_(context)
            q = np.zeros(context.K)
            q[list(ranking)] = 1.0
            return ranking, q, False, None
        q = np.full(context.K, self.L / context.K)
        return uniform_ranking(context.valid, self.L, rng), q, True, None

    def _after_observe(self, record):
        if self.policy_ is not None:
            return
        t = self.t_
        self.acc_.update(record.observed_y, record.reward)
        if t <= self.n_star_:
            self.vhat_sum_ += vhat_term(record.chosen, record.observed_y, self.K_)
        if t == self.n_star_:
            self.vhat_ = self.vhat_sum_ / self.n_star_
            self.v_tilde_ = v_tilde(self.vhat_, self.n_star_, self.delta)
            self.lambda_star_ = lambda_star(self.v_tilde_, self.config_)
        if t >= self.n_star_:
            lam = min_eigenvalue(self.acc_.Sigma)
            self.gate_trace_.append((t, lam))
            if lam > self.lambda_star_:
                self._finish_exploration()
            elif t >= self.horizon:
                self.exhausted_ = True
                log.warning("EELS exploration used all %d rounds", self.horizon)
                self._finish_exploration()

    def _finish_exploration(self):
        self.explore_rounds_ = self.t_
        self.w_hat_ = least_squares_weights(self.acc_)
        v = self.w_hat_
        if not getattr(self.oracle, "exact", False):
            # greedy ranking is only defined for nonnegative slot weights
            v = np.maximum(v, 0.0)
        self.policy_ = self.oracle.argmax(AmoDataset.from_history(self.history_, v))

    def predict(self, contexts):
        if self.policy_ is None:
            raise ValueError("EELS is still exploring")
        return self.policy_.rank_many(list(contexts))


@dataclass
class EelsTrace:
    t: list = field(default_factory=list)
    phase: list = field(default_factory=list)
    reward: list = field(default_factory=list)
    gate: list = field(default_factory=list)


def eels_run(cfg: EelsConfig, env, oracle, rng):
    """Run EELS for ``cfg.T`` rounds on ``env``; returns ``(trace, w_hat, policy, learner)``."""
    learner = EELS(oracle, cfg.T, cfg.L, cfg.N, cfg.delta, cfg.B, cfg.lambda_override)
    trace = EelsTrace()
    for t in range(1, cfg.T + 1):
        sample = env.draw(rng)
        ranking = learner.select(sample.context, rng)
        phase = learner.phase
        r = realized_reward(ranking, sample.y, env.w, sample.noise)
        learner.observe(sample.y[list(ranking)], r)
        trace.t.append(t)
        trace.phase.append(phase)
        trace.reward.append(r)
    trace.gate = list(learner.gate_trace_)
    return trace, learner.w_hat_, learner.policy_, learner

"""Variance-constrained explore/exploit (VCEE) and its feasibility solver.

Each epoch the learner looks for a sparse subdistribution ``Q`` over policies
such that (a) the ``Q``-weighted rescaled empirical regret is at most
``2KL/p_min`` and (b) every policy's empirical inverse-propensity sum
``V_pi(Q)`` is at most ``2KL/p_min + b_pi``.  ``Q`` is found by coordinate
ascent: shrink all weights when (a) fails, otherwise add weight to a policy
violating (b), located with one oracle call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .base import SemibanditLearner, is_epoch_boundary
from .estimation import SparseSubdistribution, sample_ranking, smoothed_marginals
from .exceptions import ConfigError, SolverStallError
from .oracle import AmoDataset

__all__ = [
    "OpParams",
    "OpProblem",
    "mu_schedule",
    "iteration_bound",
    "shrink_factor",
    "add_step",
    "op_quantities",
    "CoordinateAscentSolver",
    "solve_op",
    "FeasibilityReport",
    "feasibility_check",
    "potential",
    "VCEE",
]


@dataclass
class OpParams:
    """Inputs of the feasibility problem besides the history."""

    mu: float
    K: int
    L: int
    p_min: float
    w: np.ndarray = None
    psi: float = 100.0

    def __post_init__(self):
        self.w = np.ones(self.L) if self.w is None else np.asarray(self.w, dtype=float)
        if self.psi <= 0:
            raise ConfigError("psi must be positive")
        if not 0.0 <= self.mu <= 1.0 / (2 * self.K) * (1 + 1e-12):
            raise ConfigError(f"mu must lie in [0, 1/(2K)], got {self.mu}")
        if self.w.shape != (self.L,):
            raise ConfigError("w must have length L")

    @property
    def threshold(self) -> float:
        """``2KL / p_min``."""
        return 2.0 * self.K * self.L / self.p_min

    @property
    def regret_scale(self) -> float:
        """Factor turning empirical regret into ``b_pi``."""
        w = self.w
        return (np.abs(w).sum() / (w @ w)) / (self.psi * self.mu * self.p_min)


def mu_schedule(t, K, p_min=None, N=None, delta=0.05, *, c=None, L=None, T=None) -> float:
    """Smoothing level for round ``t``.

    Default: ``min(1/(2K), sqrt(ln(16 t^2 N / delta) / (K t p_min)))``.  Passing
    ``c`` selects the tuned form ``min(1/(2K), c * sqrt(1/(K L T)))``.
    """
    cap = 1.0 / (2 * K)
    if c is not None:
        if L is None or T is None:
            raise ConfigError("the tuned schedule needs L and T")
        return min(cap, c * math.sqrt(1.0 / (K * L * T)))
    t = max(int(t), 1)
    return min(cap, math.sqrt(math.log(16 * t * t * N / delta) / (K * t * p_min)))


def shrink_factor(weighted_total: float, threshold: float) -> float:
    """Scale applied to every weight when the regret constraint is violated."""
    return threshold / weighted_total


def add_step(V: float, D: float, S: float, K: int, mu: float) -> float:
    """Weight added to a violating policy: ``(V + D) / (2 (1 - K mu) S)``."""
    return (V + D) / (2 * (1 - K * mu) * S)


def iteration_bound(params: OpParams) -> int:
    """``ceil(8 ln(1/(K mu)) / (mu p_min))``."""
    K, mu = params.K, params.mu
    return math.ceil(8 * math.log(1.0 / (K * mu)) / (mu * params.p_min))


class OpProblem:
    """Quantities of the feasibility problem for a fixed history and leader.

    Works on the history's distinct contexts weighted by their counts, which
    gives exactly the per-round empirical averages.
    """

    def __init__(self, history, params: OpParams, leader=None):
        if len(history) == 0:
            raise ValueError("history is empty")
        self.history = history
        self.params = params
        self.t = len(history)
        self.contexts = history.unique_contexts
        self.weights = history.counts / self.t
        self.U = history.mixing_marginals()
        self.ips_mean = history.ips_by_context / history.counts[:, None]
        self._ranks: dict = {}
        self.leader = None
        self.eta_leader = 0.0
        if leader is not None:
            self.set_leader(leader)

    def ranks(self, policy) -> np.ndarray:
        r = self._ranks.get(policy.key)
        if r is None:
            r = self._ranks[policy.key] = policy.rank_many(self.contexts)
        return r

    def eta(self, policy) -> float:
        vals = np.take_along_axis(self.ips_mean, self.ranks(policy), axis=1) @ self.params.w
        return float(self.weights @ vals)

    def set_leader(self, leader):
        self.leader = leader
        self.eta_leader = self.eta(leader)

    def regret(self, policy) -> float:
        return self.eta_leader - self.eta(policy)

    def b(self, policy) -> float:
        return self.params.regret_scale * self.regret(policy)

    def policy_marginals(self, Q) -> np.ndarray:
        """``sum_pi Q(pi) 1(a in pi(x))`` per distinct context, (n, K)."""
        out = np.zeros((len(self.contexts), self.U.shape[1]))
        rows = np.arange(len(self.contexts))[:, None]
        for policy, weight in Q.items():
            np.add.at(out, (rows, self.ranks(policy)), weight)
        return out

    def smoothed(self, Q) -> np.ndarray:
        K, mu = self.params.K, self.params.mu
        return (1 - K * mu) * self.policy_marginals(Q) + K * mu * self.U

    def variance_terms(self, policy, qmu):
        inv = 1.0 / np.take_along_axis(qmu, self.ranks(policy), axis=1)
        return float(self.weights @ inv.sum(axis=1)), float(self.weights @ (inv**2).sum(axis=1))

    def quantities(self, policy, qmu):
        V, S = self.variance_terms(policy, qmu)
        b = self.b(policy)
        return V, S, V - self.params.threshold - b, b

    def violator_dataset(self, qmu) -> AmoDataset:
        """Oracle dataset whose objective is ``D_pi`` up to a policy-independent shift.

        The first block scores ``V_pi``; the second scores ``-b_pi`` up to the
        constant leader term, i.e. ``+regret_scale * eta(pi)``, via rescaled
        importance-weighted features with slot weights ``w``.
        """
        n, L = len(self.contexts), self.params.L
        counts = self.history.counts
        with np.errstate(divide="ignore"):
            inv = np.where(qmu > 0, 1.0 / np.where(qmu > 0, qmu, 1.0), 0.0)
        first = AmoDataset(self.contexts, inv / self.t, np.ones((n, L)), counts)
        second = AmoDataset(
            self.contexts,
            self.params.regret_scale * self.ips_mean / self.t,
            np.tile(self.params.w, (n, 1)),
            counts,
        )
        return AmoDataset.concat(first, second)

    def potential(self, Q, qmu=None) -> float:
        """Relative-entropy potential used to bound the solver's iterations."""
        K, mu, p_min = self.params.K, self.params.mu, self.params.p_min
        qmu = self.smoothed(Q) if qmu is None else qmu
        u = self.U
        with np.errstate(divide="ignore", invalid="ignore"):
            log_term = np.where(u > 0, u * np.log(np.where(u > 0, u, 1.0) / qmu), 0.0)
        re = (log_term + qmu - u).sum(axis=1)
        reg = sum(w * self.b(p) for p, w in Q.items())
        return float(self.weights @ re) / (1 - K * mu) + reg / (2 * K / p_min)


def op_quantities(Q, policy, history, params, leader):
    """``(V_pi, S_pi, D_pi, b_pi)`` for one policy, regrets measured against ``leader``."""
    problem = OpProblem(history, params, leader)
    return problem.quantities(policy, problem.smoothed(Q))


def potential(Q, history, params, leader) -> float:
    return OpProblem(history, params, leader).potential(Q)


class CoordinateAscentSolver:
    """Coordinate ascent for the feasibility problem.

    ``strict`` (default: whether the oracle is exact) enforces the theoretical
    iteration bound; otherwise the cap is twice the bound per leader.  When the
    oracle turns up a policy with negative empirical regret the leader is
    switched and the regret terms recomputed; weights are kept.

    After :meth:`solve`: ``n_iter_`` (shrink plus additive steps), ``n_switches_``,
    ``leader_``, ``trace_`` (one dict per step when ``record_trace``) and
    ``oracle_calls_``.
    """

    def __init__(self, oracle, strict=None, record_trace=False, max_switches=100, regret_tol=1e-12):
        self.oracle = oracle
        self.strict = strict
        self.record_trace = record_trace
        self.max_switches = max_switches
        self.regret_tol = regret_tol

    def solve(self, history, params: OpParams, Q=None, leader=None) -> SparseSubdistribution:
        strict = getattr(self.oracle, "exact", False) if self.strict is None else self.strict
        calls_before = getattr(self.oracle, "n_calls", 0)
        if params.mu <= 0:
            raise ConfigError("the solver needs mu > 0")
        problem = OpProblem(history, params)
        if leader is None:
            leader = self.oracle.best_policy(history, params.w)
        problem.set_leader(leader)
        Q = SparseSubdistribution() if Q is None else Q.copy()
        bound = iteration_bound(params)
        cap = bound if strict else 2 * bound
        thr = params.threshold
        self.trace_ = []
        self.n_iter_ = 0
        self.n_switches_ = 0
        since_switch = 0
        last_kind = None
        qmu = problem.smoothed(Q)
        phi = problem.potential(Q, qmu) if self.record_trace else None

        while True:
            if since_switch >= cap:
                raise SolverStallError(
                    f"coordinate ascent exceeded {cap} iterations",
                    {"iterations": self.n_iter_, "cap": cap, "bound": bound,
                     "switches": self.n_switches_, "last_kind": last_kind,
                     "support": len(Q), "mu": params.mu},
                )
            total = math.fsum(w * (thr + problem.b(p)) for p, w in Q.items())
            if total > thr:
                c = shrink_factor(total, thr)
                Q.scale(c)
                qmu = problem.smoothed(Q)
                step = ("shrink", None, c)
            else:
                candidate = self.oracle.argmax(problem.violator_dataset(qmu))
                reg = problem.regret(candidate)
                if reg < -self.regret_tol * max(1.0, abs(problem.eta_leader)):
                    if self.n_switches_ >= self.max_switches:
                        raise SolverStallError(
                            "too many leader switches",
                            {"iterations": self.n_iter_, "switches": self.n_switches_},
                        )
                    problem.set_leader(candidate)
                    self.n_switches_ += 1
                    since_switch = 0
                    if self.record_trace:
                        phi_new = problem.potential(Q, qmu)
                        self.trace_.append(dict(iteration=self.n_iter_, kind="switch",
                                                phi_before=phi, phi_after=phi_new,
                                                violator=repr(candidate.key), step=reg))
                        phi = phi_new
                    last_kind = "switch"
                    continue
                V, S, D, _ = problem.quantities(candidate, qmu)
                if not D > 0:
                    break
                alpha = add_step(V, D, S, params.K, params.mu)
                Q.add(candidate, alpha)
                qmu = problem.smoothed(Q)
                step = ("add", candidate, alpha)
            self.n_iter_ += 1
            since_switch += 1
            kind, pol, amount = step
            last_kind = kind
            if self.record_trace:
                phi_new = problem.potential(Q, qmu)
                self.trace_.append(dict(
                    iteration=self.n_iter_, kind=kind, phi_before=phi, phi_after=phi_new,
                    violator=None if pol is None else repr(pol.key), step=amount,
                ))
                phi = phi_new

        Q.leader = problem.leader
        self.leader_ = problem.leader
        self.problem_ = problem
        self.oracle_calls_ = getattr(self.oracle, "n_calls", 0) - calls_before
        return Q

    def dump_trace(self, path):
        """Write the trace as JSON lines."""
        import json

        with open(path, "w") as fh:
            for row in self.trace_:
                fh.write(json.dumps(row) + "\n")


def solve_op(history, params, oracle, **kwargs) -> SparseSubdistribution:
    return CoordinateAscentSolver(oracle, **kwargs).solve(history, params)


@dataclass
class FeasibilityReport:
    regret_violation: float
    variance_violation: float
    total_weight: float
    worst_policy: Optional[int] = None
    variance_slack: np.ndarray = field(default=None, repr=False)

    @property
    def feasible(self) -> bool:
        return self.max_violation <= 0.0 and self.total_weight <= 1.0

    @property
    def max_violation(self) -> float:
        return max(self.regret_violation, self.variance_violation)


def feasibility_check(Q, history, params, policy_class) -> FeasibilityReport:
    """Evaluate both constraint families for every policy of a finite class.

    Regrets are measured against the best policy of the class.  Violations are
    ``max(lhs - rhs)``: positive means infeasible.
    """
    problem = OpProblem(history, params)
    ranks = policy_class.rankings(problem.contexts)  # (N, n, L)
    vals = problem.ips_mean[np.arange(len(problem.contexts))[None, :, None], ranks] @ params.w
    etas = vals @ problem.weights
    problem.eta_leader = float(etas.max())
    b = params.regret_scale * (problem.eta_leader - etas)
    qmu = problem.smoothed(Q)
    inv = 1.0 / qmu[np.arange(len(problem.contexts))[None, :, None], ranks]
    V = inv.sum(axis=2) @ problem.weights
    slack = V - params.threshold - b
    regret_sum = math.fsum(w * problem.b(p) for p, w in Q.items())
    return FeasibilityReport(
        regret_violation=regret_sum - params.threshold,
        variance_violation=float(slack.max()),
        total_weight=Q.total(),
        worst_policy=int(np.argmax(slack)),
        variance_slack=slack,
    )


class VCEE(SemibanditLearner):
    """Variance-constrained explore/exploit learner with known slot weights.

    Parameters
    ----------
    oracle : ExactOracle or RegressionOracle
        Argmax oracle over the policy class.
    w : array-like of shape (L,)
        Known slot weights.
    psi : float, default=100.0
        Scale of the regret term in the variance constraints.
    c : float or None, default=None
        If set, smoothing is ``min(1/2K, c * sqrt(1/(K L T)))`` (needs
        ``horizon``); otherwise the logarithmic schedule with ``delta`` and
        ``n_policies``.
    delta : float, default=0.05
    horizon : int or None
    n_policies : int or None
        Class size for the logarithmic schedule; defaults to the oracle's
        class size, or 1000 for infinite classes.
    schedule : {"epoch", "every"}, default="epoch"
        Re-solve at rounds ``ceil(2**(i/2))`` or after every round.
    p_min : float or None
        Defaults to ``L`` for unrestricted contexts and 1 otherwise.
    strict_solver : bool or None
        Enforce the exact iteration bound (default: when the oracle is exact).
    """

    def __init__(self, oracle=None, w=None, psi=100.0, c=None, delta=0.05, horizon=None,
                 n_policies=None, schedule="epoch", p_min=None, strict_solver=None,
                 record_trace=False):
        self.oracle = oracle
        self.w = w
        self.psi = psi
        self.c = c
        self.delta = delta
        self.horizon = horizon
        self.n_policies = n_policies
        self.schedule = schedule
        self.p_min = p_min
        self.strict_solver = strict_solver
        self.record_trace = record_trace

    def _slot_count(self):
        return self.L_

    def _init_state(self, context):
        if self.oracle is None:
            raise ConfigError("VCEE needs an oracle")
        if self.w is None:
            raise ConfigError("VCEE needs the slot weights w")
        self.w_ = np.asarray(self.w, dtype=float)
        self.L_ = self.w_.shape[0]
        if self.c is not None and self.horizon is None:
            raise ConfigError("the tuned smoothing schedule needs horizon")
        if self.schedule not in ("epoch", "every"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.p_min is not None:
            self.p_min_ = float(self.p_min)
        else:
            self.p_min_ = 1.0 if context.restricted else float(self.L_)
        if self.n_policies is not None:
            self.N_ = self.n_policies
        else:
            pc = getattr(self.oracle, "policy_class", None)
            self.N_ = len(pc) if pc is not None else 1000
        self.Q_ = SparseSubdistribution()
        self.mu_ = self._mu(1)
        self.Q_.leader = self.oracle.best_policy(self.history_, self.w_)
        self.n_solves_ = 0
        self.solver_iterations_ = 0
        self.solver_switches_ = 0
        self.traces_ = []

    def _mu(self, t):
        return mu_schedule(t, self.K_, self.p_min_, self.N_, self.delta,
                           c=self.c, L=self.L_, T=self.horizon)

    def _choose(self, context, rng):
        U = self.mixing_for(context, self.oracle)
        ranking, explored = sample_ranking(self.Q_, context, self.mu_, U, rng)
        q = smoothed_marginals(self.Q_, context, self.mu_, U)
        return ranking, q, explored, U

    def _after_observe(self, record):
        t = self.t_
        if self.schedule == "every" or is_epoch_boundary(t):
            self.mu_ = self._mu(t)
            params = OpParams(self.mu_, self.K_, self.L_, self.p_min_, self.w_, self.psi)
            solver = CoordinateAscentSolver(self.oracle, strict=self.strict_solver,
                                            record_trace=self.record_trace)
            self.Q_ = solver.solve(self.history_, params)
            self.n_solves_ += 1
            self.solver_iterations_ += solver.n_iter_
            self.solver_switches_ += solver.n_switches_
            if self.record_trace:
                self.traces_.append(solver.trace_)

    @property
    def leader_(self):
        return self.Q_.leader

    def predict(self, contexts):
        """Rankings of the current leader."""
        return self.Q_.leader.rank_many(list(contexts))

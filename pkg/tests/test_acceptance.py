"""Acceptance criteria, one test each, at their stated tolerances.

Each test prints a single ``PASS``/``FAIL`` line (visible under ``pytest -v``)
before asserting.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import logged_history, pool_env, random_subdistribution
from semibandit.baselines import LinUCB, UniformRandom
from semibandit.core import (
    Context,
    EnvironmentSpec,
    ReplayEnvironment,
    all_rankings,
    make_environment,
    make_tabular_class,
)
from semibandit.eels import EelsConfig, eels_run, vhat_term
from semibandit.estimation import build_mixing, ranking_probability, smoothed_marginals
from semibandit.harness import run_experiment, simulate
from semibandit.letor import build_replay_env, parse_letor_line, read_letor, serialize_letor
from semibandit.oracle import ExactOracle
from semibandit.vcee import CoordinateAscentSolver, OpParams, feasibility_check, iteration_bound

TOY = Path(__file__).parent / "data" / "toy.letor"


@pytest.fixture
def report(capsys):
    def emit(number, name, ok, detail=""):
        with capsys.disabled():
            print(f"\n[criterion {number}] {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
        return ok
    return emit


def test_criterion_1_ips_unbiasedness(report):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    env = pool_env(K=4, L=2, M=4, seed=1)
    pc = make_tabular_class(env, 12, np.random.default_rng(2))
    worst = 0.0
    for _ in range(20):
        Q = random_subdistribution(pc, rng, size=int(rng.integers(1, 5)))
        mu = float(rng.uniform(0.0, 0.25))
        y = rng.uniform(0, 1, size=4)
        x = env.contexts[int(rng.integers(4))]
        U = build_mixing(x, 2)
        q = smoothed_marginals(Q, x, mu, U)
        expect = np.zeros(4)
        for r in all_rankings(4, 2):
            p = ranking_probability(Q, x, mu, U, r)
            for a in r:
                expect[a] += p * y[a] / q[a]
        worst = max(worst, float(np.abs(expect - y).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 1.0
    report(1, "IPS unbiasedness", ok, f"(max error {worst:.2e}, {elapsed:.2f}s)")
    assert ok


def test_criterion_2_op_feasibility(report):
    start = time.perf_counter()
    rng = np.random.default_rng(10)
    worst, total_max, over_bound = -np.inf, 0.0, 0
    for h in range(30):
        restricted = h % 3 == 0
        env = pool_env(K=4, L=2, M=10, seed=h, restricted_fraction=0.5 if restricted else 0.0)
        pc = make_tabular_class(env, 50, np.random.default_rng(100 + h))
        oracle = ExactOracle(pc)
        mu = float(rng.uniform(0.01, 0.12))
        H = logged_history(env, pc, int(rng.integers(20, 300)), mu, rng, oracle=oracle)
        p_min = 1.0 if restricted else 2.0
        params = OpParams(mu, 4, 2, p_min, env.w, psi=1.0 if h % 2 else 100.0)
        solver = CoordinateAscentSolver(oracle)
        Q = solver.solve(H, params)
        rep = feasibility_check(Q, H, params, pc)
        worst = max(worst, rep.max_violation)
        total_max = max(total_max, rep.total_weight)
        over_bound += solver.n_iter_ > iteration_bound(params)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and total_max <= 1.0 + 1e-12 and over_bound == 0 and elapsed < 30
    report(2, "OP solver feasibility", ok,
           f"(max violation {worst:.2e}, max total {total_max:.4f}, over bound {over_bound}, {elapsed:.1f}s)")
    assert ok


def test_criterion_3_potential_mechanics(report):
    start = time.perf_counter()
    rng = np.random.default_rng(20)
    n_add, worst_gap, consecutive, closed_err, bound_ok = 0, np.inf, 0, 0.0, True
    K, L = 4, 2
    for h in range(12):
        env = pool_env(K=K, L=L, M=8, seed=50 + h)
        pc = make_tabular_class(env, 40, np.random.default_rng(h))
        mu = float(rng.uniform(0.01, 0.1))
        H = logged_history(env, pc, int(rng.integers(30, 200)), mu, rng)
        params = OpParams(mu, K, L, 2.0, env.w, psi=1.0)
        solver = CoordinateAscentSolver(ExactOracle(pc), record_trace=True)
        solver.solve(H, params)
        need = L * mu * params.p_min / (4 * (1 - K * mu))
        prev = None
        for row in solver.trace_:
            if row["kind"] == "add":
                n_add += 1
                worst_gap = min(worst_gap, (row["phi_before"] - row["phi_after"]) - need)
            if row["kind"] == "shrink" and prev == "shrink":
                consecutive += 1
            prev = row["kind"]
        phi0 = solver.trace_[0]["phi_before"] if solver.trace_ else None
        closed = L * (math.log(1 / (K * mu)) - (1 - K * mu)) / (1 - K * mu)
        if phi0 is not None:
            closed_err = max(closed_err, abs(phi0 - closed))
            bound_ok &= phi0 <= L * math.log(1 / (K * mu)) / (1 - K * mu)
    elapsed = time.perf_counter() - start
    ok = (n_add > 0 and worst_gap >= -1e-9 and consecutive == 0 and closed_err <= 1e-9
          and bound_ok and elapsed < 10)
    report(3, "potential mechanics", ok,
           f"({n_add} add steps, min excess decrease {worst_gap:.2e}, consecutive shrinks "
           f"{consecutive}, closed-form error {closed_err:.1e}, {elapsed:.1f}s)")
    assert ok


def test_criterion_4_vhat(report):
    start = time.perf_counter()
    worst, in_range = 0.0, True
    for y in ([1.0, 0.0, 0.0], [0.2, 0.7, 0.4], [0.5, 0.5, 0.5], [1.0, 1.0, 0.0]):
        y = np.array(y)
        V = float(np.mean(y**2) - np.mean(y) ** 2)
        terms = [vhat_term(r, y[list(r)], 3) for r in all_rankings(3, 2)]
        assert len(terms) == 6
        worst = max(worst, abs(np.mean(terms) - V))
        in_range &= all(0.0 <= v <= 0.5 for v in terms)
    exact_case = np.mean([vhat_term(r, np.array([1.0, 0, 0])[list(r)], 3) for r in all_rankings(3, 2)])
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and in_range and abs(exact_case - 2 / 9) <= 1e-9 and elapsed < 1
    report(4, "V-hat correctness", ok, f"(max error {worst:.2e}, y=(1,0,0) gives {exact_case:.12f})")
    assert ok


def _eels_env(noise, seed):
    spec = EnvironmentSpec(K=6, L=2, d=5, n_contexts=30, noise_halfwidth=noise,
                           latent_score_seed=seed, weights=[1.0, 0.5])
    return make_environment(spec)


def test_criterion_5_eels_weight_recovery(report):
    start = time.perf_counter()
    w_star = np.array([1.0, 0.5])
    cfg = EelsConfig(T=20000, K=6, L=2, N=100)
    noiseless = []
    env = _eels_env(0.0, 0)
    pc = make_tabular_class(env, 100, np.random.default_rng(0))
    _, w_hat, _, learner = eels_run(cfg, env, ExactOracle(pc), np.random.default_rng(0))
    gated = w_hat is not None and not learner.exhausted_
    noiseless_err = np.linalg.norm(w_hat - w_star) if w_hat is not None else np.inf
    errs = []
    for seed in range(10):
        env = _eels_env(0.1, seed)
        pc = make_tabular_class(env, 100, np.random.default_rng(seed))
        _, w_hat, _, learner = eels_run(cfg, env, ExactOracle(pc), np.random.default_rng(1000 + seed))
        errs.append(np.linalg.norm(w_hat - w_star) if w_hat is not None else np.inf)
    good = sum(e <= 0.1 for e in errs)
    elapsed = time.perf_counter() - start
    ok = gated and noiseless_err <= 1e-6 and good >= 9 and elapsed < 120
    report(5, "EELS weight recovery", ok,
           f"(noiseless error {noiseless_err:.1e}, noisy within 0.1: {good}/10, "
           f"max noisy error {max(errs):.3f}, {elapsed:.1f}s)")
    assert ok


REGRET_ENV = {"kind": "synth", "K": 6, "L": 2, "d": 5, "n_contexts": 20, "noise_halfwidth": 0.1,
              "latent_score_seed": 1}
REGRET_CLASS = {"kind": "tabular", "N": 100, "seed": 0, "anchor": "theta"}


def test_criterion_6_regret_ordering(report, tmp_path):
    start = time.perf_counter()
    T, seeds = 5000, list(range(10))
    grids = {
        "vcee": {"c": list(np.logspace(-2, 1, 10))},
        "egreedy": {"epsilon": list(np.logspace(-3, 0, 10))},
        "uniform": {},
    }
    params = {"vcee": {"psi": 1.0}, "egreedy": {}, "uniform": {}}
    results = {}
    for algo in ("uniform", "egreedy", "vcee"):
        results[algo] = run_experiment({
            "algo": algo, "T": T, "seeds": seeds, "env": REGRET_ENV, "policy_class": REGRET_CLASS,
            "params": params[algo], "grid": grids[algo], "checkpoints": [500],
        }, out=tmp_path / algo).summary
    final = {a: s["final_avg_reward"] for a, s in results.items()}
    best = results["vcee"]["best_in_class_reward"]
    at = {b["t"]: b for b in results["vcee"]["best_at_t"]}
    regret_500 = best - at[500]["mean_avg_reward"]
    regret_T = best - at[T]["mean_avg_reward"]
    ratio = regret_T / regret_500
    elapsed = time.perf_counter() - start
    ok = (final["vcee"] >= final["egreedy"] >= final["uniform"] and ratio <= 0.6 and elapsed < 600)
    report(6, "regret ordering", ok,
           f"(VCEE {final['vcee']:.4f} [c={at[T]['params']['c']:.3g}], eps-greedy "
           f"{final['egreedy']:.4f} [eps={results['egreedy']['best_at_t'][-1]['params']['epsilon']:.3g}], "
           f"uniform {final['uniform']:.4f}, regret ratio {ratio:.3f}, {elapsed:.0f}s)")
    assert ok


def _realizable_env(seed, K=6, d=4, M=200):
    # y = [phi, 1] . theta exactly, within [0, 1]
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=d - 1)
    theta = 0.5 * theta / np.abs(theta).sum()
    theta = np.append(theta, 0.5)
    contexts, ys = [], []
    for i in range(M):
        phi = np.hstack([rng.uniform(-1, 1, size=(K, d - 1)), np.ones((K, 1))])
        contexts.append(Context(i, phi))
        ys.append(phi @ theta)
    return contexts, ys


def test_criterion_7_linucb(report):
    start = time.perf_counter()
    T = 2000
    alphas = np.logspace(-3, 1, 10)
    finals = np.zeros((len(alphas), 10))
    uniform = np.zeros(10)
    for seed in range(10):
        contexts, ys = _realizable_env(seed)
        for i, alpha in enumerate(alphas):
            env = ReplayEnvironment(contexts, ys, 2, noise_halfwidth=0.1, shuffle=True)
            ss = np.random.SeedSequence(seed).spawn(2)
            r, _, _ = simulate(LinUCB(alpha=alpha, update_period=100, L=2), env, T,
                               np.random.default_rng(ss[0]), np.random.default_rng(ss[1]))
            finals[i, seed] = r.mean()
        env = ReplayEnvironment(contexts, ys, 2, noise_halfwidth=0.1, shuffle=True)
        ss = np.random.SeedSequence(seed).spawn(2)
        r, _, _ = simulate(UniformRandom(L=2), env, T, np.random.default_rng(ss[0]),
                           np.random.default_rng(ss[1]))
        uniform[seed] = r.mean()
    best = finals.mean(axis=1).max()
    lift = best / uniform.mean() - 1

    # every-round refits against an independent ridge implementation
    contexts, ys = _realizable_env(99, M=50)
    env = ReplayEnvironment(contexts, ys, 2, noise_halfwidth=0.1, shuffle=True)
    learner = LinUCB(alpha=0.3, update_period=1, L=2)
    rng = np.random.default_rng(5)
    d = contexts[0].d
    rows, targets = [], []
    max_dev, same_choice = 0.0, True
    for t in range(200):
        s = env.draw(rng)
        Sigma = np.eye(d) + sum((np.outer(r, r) for r in rows), np.zeros((d, d)))
        b = sum((r * y for r, y in zip(rows, targets)), np.zeros(d))
        theta = np.linalg.solve(Sigma, b)
        Sinv = np.linalg.inv(Sigma)
        ref_scores = np.array([phi @ theta + 0.3 * phi @ Sinv @ phi for phi in s.context.features])
        A = learner.select(s.context, rng)
        max_dev = max(max_dev, float(np.abs(learner.theta_ - theta).max()),
                      float(np.abs(learner.scores(s.context) - ref_scores).max()))
        same_choice &= set(A) == set(np.argsort(-ref_scores, kind="stable")[:2])
        y = s.y[list(A)] + 0.0
        learner.observe(y, float(y.sum()))
        rows += [s.context.features[a] for a in A]
        targets += list(y)
    elapsed = time.perf_counter() - start
    ok = lift >= 0.2 and max_dev <= 1e-8 and same_choice and elapsed < 120
    report(7, "LinUCB sanity", ok,
           f"(tuned {best:.4f} vs uniform {uniform.mean():.4f}: +{100 * lift:.1f}%, "
           f"ridge deviation {max_dev:.1e}, {elapsed:.1f}s)")
    assert ok


def test_criterion_8_parser_and_replay(report, tmp_path):
    import itertools

    from semibandit.core import TabularPolicy, exact_policy_reward

    start = time.perf_counter()
    recs = read_letor(TOY)
    fields_ok = (
        recs[0].relevance == 2 and recs[0].query_id == "1" and recs[0].features == {1: 0.1, 2: 0.5}
        and recs[0].comment == "q1-d1" and recs[2].features == {2: -0.2, 3: 0.7}
        and recs[4].features == {1: 0.0, 2: 0.8, 3: 0.25} and recs[4].comment is None
    )
    round_trip = all(parse_letor_line(serialize_letor(r)) == r for r in recs)
    env, dropped = build_replay_env(recs, 3, 2)
    tables = itertools.product(*[all_rankings(3, 2) for _ in env.contexts])
    exhaustive = max(exact_policy_reward(TabularPolicy(np.array(t)), env) for t in tables)
    summary = run_experiment({"algo": "uniform", "T": 6, "seeds": [0],
                              "env": {"kind": "letor", "path": str(TOY), "K": 3, "L": 2}},
                             out=tmp_path).summary
    elapsed = time.perf_counter() - start
    ok = (fields_ok and round_trip and dropped == 1
          and abs(summary["oracle_reward"] - exhaustive) <= 1e-12 and elapsed < 1)
    report(8, "parser and replay", ok,
           f"(exhaustive {exhaustive:.6f}, harness {summary['oracle_reward']:.6f}, {elapsed:.2f}s)")
    assert ok


def test_criterion_9_determinism(report, tmp_path):
    start = time.perf_counter()
    env = {"kind": "synth", "K": 5, "L": 2, "d": 3, "n_contexts": 10, "noise_halfwidth": 0.1}
    pc = {"kind": "tabular", "N": 30, "seed": 0}
    params = {"vcee": {"psi": 1.0, "c": 1.0}}
    identical = {}
    for algo in ("vcee", "eels", "egreedy", "linucb", "uniform"):
        outs = []
        for rep in range(2):
            out = tmp_path / f"{algo}_{rep}"
            run_experiment({"algo": algo, "T": 500, "seeds": [7], "env": env, "policy_class": pc,
                            "params": params.get(algo, {})}, out=out)
            outs.append((out / "rounds.csv").read_bytes())
        identical[algo] = outs[0] == outs[1]
    for rep in range(2):
        run_experiment({"algo": "egreedy", "T": 200, "seeds": [3],
                        "env": {"kind": "letor", "path": str(TOY), "K": 3, "L": 2, "shuffle": True}},
                       out=tmp_path / f"letor_{rep}")
    identical["egreedy/letor"] = ((tmp_path / "letor_0" / "rounds.csv").read_bytes()
                                  == (tmp_path / "letor_1" / "rounds.csv").read_bytes())
    elapsed = time.perf_counter() - start
    ok = all(identical.values()) and elapsed < 60
    report(9, "determinism", ok,
           f"({', '.join(f'{a}={v}' for a, v in identical.items())}, {elapsed:.1f}s)")
    assert ok

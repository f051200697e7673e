"""Acceptance checks, one test per criterion.

Each test records a one-line verdict that is repeated in the terminal
summary.  Run just this file with ``pytest tests/test_acceptance.py -v``.
"""

import time

import numpy as np
import pytest

from evcoord import cli
from evcoord.baselines import bau_rollout, dp_oracle, offline_optimum
from evcoord.config import FleetConfig
from evcoord.evaluation import evaluate_policy, run_scale_test
from evcoord.fqi import collect_exhaustive, collect_experience, fitted_q_iteration
from evcoord.mdp import apply_action, bin_sessions, count_actions, diagonal_counts, rollout
from evcoord.regressors import MLP, ExactTable, MLPConfig
from evcoord.sessions import generate_synthetic
from oracles import PerEVSimulator, make_day, random_triples


def verdict(record_property, name, ok, detail, seconds=None, limit=None):
    if limit is not None:
        ok = ok and seconds < limit
        detail += f"; {seconds:.1f}s (limit {limit}s)"
    record_property("criterion", f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def test_binning_fidelity(record_property):
    t0 = time.perf_counter()
    cfg = FleetConfig(n_max=2, h_max_hours=6, slot_hours=2)
    x = bin_sessions([(3, 2), (2, 1)], cfg).x
    want = np.zeros((3, 3))
    want[1, 2] = want[0, 1] = 0.5
    verdict(record_property, "binning fidelity", np.array_equal(x, want),
            "two cells of 1/2 at (charge 2, depart 3) and (charge 1, depart 2)",
            time.perf_counter() - t0, 1)


def test_action_combinatorics(record_property):
    a = count_actions([50] + [0] * 9, 1)
    b = count_actions([5] * 10, 1)
    verdict(record_property, "action combinatorics", a == 51 and b == 6**10, f"{a} and {b}")


def test_aggregate_matches_per_ev_dynamics(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20150101)
    mismatches = steps = 0
    for _ in range(1000):
        n_max, s_max = int(rng.integers(1, 9)), int(rng.integers(1, 7))
        cfg = FleetConfig(n_max=n_max, h_max_hours=s_max, slot_hours=1)
        arrivals = {}
        for a, d, c in random_triples(rng, s_max, n_max):
            arrivals.setdefault(a, []).append((d, c))
        sim = PerEVSimulator(s_max, n_max)
        sim.add(arrivals.get(1, ()))
        s = bin_sessions(arrivals.get(1, ()), cfg)
        while not s.is_terminal:
            steps += 1
            if not np.array_equal(s.counts, sim.matrix()):
                mismatches += 1
            u = tuple(int(rng.integers(0, c + 1)) for c in diagonal_counts(s))
            incoming = arrivals.get(s.t + 1, ())
            s = apply_action(s, u, incoming)
            _, _, stranded = sim.step(u, incoming)
            mismatches += s.stranded != stranded
        mismatches += not np.array_equal(s.counts, sim.matrix())
    verdict(record_property, "aggregate = per-EV dynamics", mismatches == 0,
            f"1000 days, {steps} steps, {mismatches} mismatches", time.perf_counter() - t0, 60)


def test_oracle_agreement(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(500):
        n_max, s_max = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        cfg = FleetConfig(n_max=n_max, h_max_hours=s_max, slot_hours=1)
        day = make_day(random_triples(rng, s_max, n_max, max_evs=6), cfg)
        _, opt = offline_optimum(day, cfg)
        dp = dp_oracle(day, cfg).value
        _, bau = bau_rollout(day, cfg)
        bad += not (dp == opt and opt <= bau and dp <= bau)
    verdict(record_property, "oracle agreement", bad == 0,
            f"500 days, {bad} disagreements", time.perf_counter() - t0, 120)


def test_fqi_exactness(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst = 0.0
    largest = 0
    for _ in range(100):
        n_max, s_max = int(rng.integers(2, 6)), int(rng.integers(3, 6))
        cfg = FleetConfig(n_max=n_max, h_max_hours=s_max, slot_hours=1)
        day = make_day(random_triples(rng, s_max, n_max, max_evs=10), cfg)
        f = collect_exhaustive(day, cfg)
        largest = max([largest] + [count_actions(diagonal_counts(tr.s), 1) for tr in f.transitions])
        policy = fitted_q_iteration(f, ExactTable(), cfg.s_max)
        ret = sum(tr.cost for tr in rollout(day.arrivals_by_slot(cfg), cfg, policy))
        worst = max(worst, abs(ret - dp_oracle(day, cfg).value))
    verdict(record_property, "FQI exactness", worst <= 1e-9 and largest <= 200,
            f"100 instances, max |greedy - DP| = {worst:.2e}, max actions per state {largest}",
            time.perf_counter() - t0, 300)


def test_mlp_gradient_check(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    n_in = 6 * 6 + 6 + 1
    worst = 0.0
    eps = 1e-6
    for batch in range(20):
        model = MLP(MLPConfig(seed=batch), n_inputs=n_in)
        X = rng.uniform(0, 1, size=(64, n_in))
        # targets spread so both Huber branches are exercised
        y = rng.normal(scale=3.0, size=64)
        w = rng.integers(1, 5, size=64).astype(float) if batch % 2 else None
        _, grads = model.loss_and_grads(X, y, w)
        for p, g in zip(model.params, grads):
            idx = [tuple(rng.integers(0, s) for s in p.shape) for _ in range(25)]
            num = np.empty(len(idx))
            for k, i in enumerate(idx):
                old = p[i]
                p[i] = old + eps
                up, _ = model.loss_and_grads(X, y, w)
                p[i] = old - eps
                down, _ = model.loss_and_grads(X, y, w)
                p[i] = old
                num[k] = (up - down) / (2 * eps)
            ana = np.array([g[i] for i in idx])
            scale = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-12)
            worst = max(worst, np.linalg.norm(ana - num) / scale)
    verdict(record_property, "MLP gradient check", worst < 1e-4,
            f"20 batches, max relative error {worst:.2e}", time.perf_counter() - t0, 30)


E2E_CFG = FleetConfig(n_max=10, h_max_hours=24, slot_hours=4)


@pytest.fixture(scope="module")
def e2e():
    t0 = time.perf_counter()
    days = generate_synthetic(80, E2E_CFG, seed=1)
    train, test = days[:60], days[60:]
    f = collect_experience(train, E2E_CFG, 2000, seed=0)
    policy = fitted_q_iteration(f, MLP(MLPConfig()), E2E_CFG.s_max)
    report = evaluate_policy(policy, test, E2E_CFG, "e2e")
    return policy, test, report, time.perf_counter() - t0


@pytest.mark.slow
def test_end_to_end_learning(record_property, e2e):
    _, _, rep, seconds = e2e
    threshold = rep.c_bau - 0.5 * (rep.c_bau - 1)
    ok = rep.c_rl <= threshold and rep.stranded == 0
    verdict(record_property, "end-to-end learning", ok,
            f"C_RL {rep.c_rl:.4f} <= {threshold:.4f} (C_BAU {rep.c_bau:.4f}), "
            f"{rep.stranded} stranded on {len(rep.scored)} scored days",
            seconds, 1800)


@pytest.mark.slow
def test_scale_generalization(record_property, e2e):
    policy, test, _, _ = e2e
    t0 = time.perf_counter()
    reports = run_scale_test(policy, test, [1, 2, 4, 8], E2E_CFG)
    c = [r.c_rl for r in reports]
    jumps = np.diff(c)
    ok = int(np.argmax(jumps)) == 0 and jumps[2] < 0.25 * jumps[0]
    verdict(record_property, "scale generalisation", ok,
            "C_RL at scales 1/2/4/8 = " + " / ".join(f"{v:.4f}" for v in c)
            + f"; 4->8 step {jumps[2]:.4f} vs 1->2 jump {jumps[0]:.4f}",
            time.perf_counter() - t0, 600)


def test_determinism(record_property, tmp_path):
    settings = ["--n-max", "6", "--slot-hours", "4", "--seed", "13", "--trajectories", "50", "--epochs", "3"]
    trees = []
    for name in ("first", "second"):
        out = tmp_path / name
        base = ["--out", str(out)] + settings
        assert cli.main(["synth", "--days", "12"] + base) == 0
        eps = str(out / "episodes.jsonl")
        assert cli.main(["collect", "--episodes", eps] + base) == 0
        assert cli.main(["train", "--experience", str(out / "experience.jsonl")] + base) == 0
        assert cli.main(["eval", "--policy", str(out / "policy.json"), "--episodes", eps] + base) == 0
        assert cli.main(["sweep", "scale", "--episodes", eps, "--policy", str(out / "policy.json"),
                         "--scales", "1", "2"] + base) == 0
        trees.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    a, b = trees
    same_manifests = all(a[k] == b[k] for k in a if k.endswith("manifest.json"))
    same_reports = all(a[k] == b[k] for k in ("report.json", "report.csv", "reports.json", "reports.csv"))
    verdict(record_property, "determinism", same_manifests and same_reports and a == b,
            f"{len(a)} files compared byte for byte across two runs")

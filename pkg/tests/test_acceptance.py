"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v``; the criterion lines are
printed even when output capture is on.
"""

import math
import time

import numpy as np
import pytest

from fairimprove.cli import EXIT_OK, run
from fairimprove.errors import AllRoundsFailed, Infeasible
from fairimprove.improvement import BootstrapCache, DeltaTriple, component_pvalues
from fairimprove.milpcheck import brute_force, milp_value, random_instance
from fairimprove.procedure import ProcedureConfig, run_procedure
from fairimprove.selection import Identity, OlsThreshold, build_calibration_milp, solve_built
from fairimprove.simulation import (
    GameSimConfig,
    PowerSimConfig,
    gen_synthetic,
    run_game,
    run_power_curve,
    synthetic_status_quo,
    verify_bounds,
)
from fairimprove.utility import Calibration, UtilityEstimates, UtilitySpec

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")

    return emit


def mc_se(rate, reps):
    return math.sqrt(rate * (1.0 - rate) / reps)


# -- 1: intersection-union exactness -----------------------------------------


def random_outcome(rng):
    Q = int(rng.integers(1, 200))
    A_pt = rng.uniform(0.1, 2.0, (2, 2))
    F_pt = rng.uniform(-1.0, 1.0, (2, 2))
    A = A_pt * rng.uniform(0.5, 1.5, (Q, 2, 2))
    F = F_pt + rng.normal(0.0, 0.2, (Q, 2, 2))
    # A few replicates with a vanished normalization.
    A[rng.random((Q, 2, 2)) < 0.02] = np.nan
    cache = BootstrapCache(A, F, int(rng.integers(2, 2000)), 0)
    delta = DeltaTriple(*rng.uniform(-0.3, 0.5, 2), rng.uniform(-1.0, 1.0))
    alpha = float(rng.uniform(0.005, 0.5))
    return component_pvalues(cache, UtilityEstimates(A_pt, F_pt), delta, alpha)


def test_criterion_1_iut_exactness(report):
    rng = np.random.default_rng(20240101)
    started = time.perf_counter()
    outcomes = [random_outcome(rng) for _ in range(1000)]
    elapsed = time.perf_counter() - started
    violations = sum(
        o.p != max(o.p_r, o.p_b, o.p_f) or o.reject != (o.reject_r and o.reject_b and o.reject_f)
        for o in outcomes
    )
    ok = violations == 0 and elapsed < 1.0
    report(1, ok, f"{violations} violations in 1000 fixtures, {elapsed:.2f} s")
    assert violations == 0
    assert elapsed < 1.0


# -- 2: size control ---------------------------------------------------------


def test_criterion_2_size_control(report):
    reps, alpha = 1000, 0.05
    spec = UtilitySpec(Calibration())
    rejections = no_verdict = 0
    for rep in range(reps):
        # A larger group b keeps every normalization cell populated at n = 400;
        # the status quo is still far from fair (population gap about 1.7).
        data = gen_synthetic(400, seed=rep, b_share=0.4)
        a0 = synthetic_status_quo(data, 0.1)
        cfg = ProcedureConfig(K=7, Q=500, alpha=alpha, seed=rep)
        try:
            rejections += run_procedure(data, a0, Identity(), spec, cfg).reject
        except AllRoundsFailed:
            no_verdict += 1  # no test could be run, so nothing was rejected
    rate = rejections / reps
    bound = alpha + 2 * mc_se(alpha, reps)
    ok = rate <= bound
    report(2, ok, f"rejection rate {rate:.4f} vs bound {bound:.4f} over {reps} replicates, "
                  f"{no_verdict} without a verdict")
    assert ok


# -- 3: power curve ----------------------------------------------------------


def test_criterion_3_power_curve(report):
    cfg = PowerSimConfig(reps=2000, Q=500, ells=(100,), seed=0)
    started = time.perf_counter()
    rows = run_power_curve(cfg)
    elapsed = time.perf_counter() - started
    rate = {r.eta: r.rate for r in rows}
    se = {r.eta: r.mc_se for r in rows}
    size_ok = rate[1.52] <= 0.05 + 0.015
    gap_ok = rate[0.0] - rate[1.5] >= 0.05
    # Rejection should fall as eta rises towards the null; allow reversals
    # within two Monte Carlo standard errors of the difference.
    etas = sorted(rate)
    reversals = [
        (a, b) for a, b in zip(etas, etas[1:])
        if rate[b] - rate[a] > 2 * math.sqrt(se[a] ** 2 + se[b] ** 2)
    ]
    monotone_ok = not reversals
    ok = size_ok and gap_ok and monotone_ok and elapsed < 900
    curve = ", ".join(f"{e:g}:{rate[e]:.3f}" for e in etas)
    report(3, ok, f"curve {curve}; size {'ok' if size_ok else 'FAIL'}, gap {'ok' if gap_ok else 'FAIL'}, "
                  f"reversals {reversals or 'none'}; {elapsed:.0f} s")
    assert size_ok
    assert gap_ok
    assert monotone_ok, f"reversals beyond 2 MC-SE: {reversals}"
    assert elapsed < 900


# -- 4: MILP correctness (classification) ------------------------------------


def test_criterion_4_milp_classification(report):
    started = time.perf_counter()
    worst, failures, feasible = 0.0, 0, 0
    for i in range(50):
        data, a0 = random_instance(4, i, calibration=False)
        assert data.n <= 10 and data.d <= 3
        for kind in ("fair", "acc-r", "acc-b"):
            got, want = milp_value(data, a0, kind), brute_force(data, a0, kind)
            if math.isnan(got) and math.isnan(want):
                continue
            feasible += 1
            dev = abs(got - want) if not (math.isnan(got) or math.isnan(want)) else math.inf
            worst = max(worst, dev)
            failures += dev > 1e-6
    elapsed = time.perf_counter() - started
    ok = failures == 0 and elapsed < 120
    report(4, ok, f"{failures} failures, {feasible} feasible programs of 150, max deviation {worst:.1e}, "
                  f"{elapsed:.0f} s")
    assert failures == 0
    assert elapsed < 120


# -- 5: calibration linearization --------------------------------------------


def test_criterion_5_milp_calibration(report):
    started = time.perf_counter()
    failures, feasible, worst_obj, worst_link = 0, 0, 0.0, 0.0
    for i in range(25):
        data, a0 = random_instance(5, i, calibration=True)
        kappa = 0.25
        assert data.n <= 8 and round(kappa * data.n) == 2
        built = build_calibration_milp(data, a0, kappa=kappa)
        oracle = brute_force(data, a0, "calibration", kappa=kappa)
        try:
            _, D, sol = solve_built(built)
        except Infeasible:
            failures += not math.isnan(oracle)
            continue
        feasible += 1
        if math.isnan(oracle):
            failures += 1
            continue
        worst_obj = max(worst_obj, abs(sol.objective - oracle))
        failures += abs(sol.objective - oracle) > 1e-6
        for s_key, t_key in (("s1", "t1"), ("s0", "t0")):
            s = sol.x[built.index[s_key]]
            t = sol.x[built.index[t_key]]
            worst_link = max(worst_link, float(np.abs(s - t * D).max()))
    elapsed = time.perf_counter() - started
    # "Exactly" is read as agreement to floating-point round-off.
    ok = failures == 0 and worst_link <= 1e-12 and elapsed < 120
    report(5, ok, f"{failures} failures, {feasible} feasible of 25, max objective deviation {worst_obj:.1e}, "
                  f"max |s - tD| {worst_link:.1e}, {elapsed:.0f} s")
    assert failures == 0
    assert worst_link <= 1e-12
    assert elapsed < 120


# -- 6: game bounds ----------------------------------------------------------


def test_criterion_6_game_bounds(report):
    started = time.perf_counter()
    res = run_game(GameSimConfig(model="iid", alpha=0.05, K=7, reps=100_000, max_m=20, seed=6))
    check = verify_bounds(0.05, 7)
    elapsed = time.perf_counter() - started
    m = np.arange(1, 21)
    exact = 1.0 - 0.95**m
    se = np.sqrt(exact * (1.0 - exact) / 100_000)
    v2_ok = bool(np.all(res.v2 < 0.05))
    v1_ok = bool(np.all(np.abs(res.v1 - exact) <= 3 * se))
    bound_ok = f"{check.threshold:.4f}" == "6.6387" and check.min_K == 7 and check.satisfied
    ok = v2_ok and v1_ok and bound_ok and elapsed < 60
    report(6, ok, f"max v2 {res.v2.max():.4f}, max |v1 - exact| / se {np.max(np.abs(res.v1 - exact) / se):.2f}, "
                  f"threshold {check.threshold:.4f}, minimal K {check.min_K}, {elapsed:.1f} s")
    assert v2_ok and v1_ok and bound_ok
    assert elapsed < 60


# -- 7: end-to-end power -----------------------------------------------------


def test_criterion_7_synthetic_power(report):
    spec = UtilitySpec(Calibration())
    started = time.perf_counter()
    rejections = 0
    runs = 200
    for s in range(runs):
        data = gen_synthetic(4000, seed=s)
        a0 = synthetic_status_quo(data, 0.1)
        cfg = ProcedureConfig(K=7, Q=500, seed=s, delta=DeltaTriple(0.0, 0.0, 0.0))
        rejections += run_procedure(data, a0, OlsThreshold(0.1), spec, cfg).reject
    elapsed = time.perf_counter() - started
    rate = rejections / runs
    ok = rate >= 0.9 and elapsed < 600
    report(7, ok, f"rejected in {rejections} of {runs} runs ({rate:.3f}), {elapsed:.0f} s")
    assert rate >= 0.9
    assert elapsed < 600


# -- 8: CLI determinism ------------------------------------------------------


def test_criterion_8_cli_determinism(report, tmp_path):
    gen = tmp_path / "gen"
    assert run(["gen-data", "--n", "4000", "--seed", "8", "--out", str(gen)]) == EXIT_OK
    sweep_cfg = tmp_path / "sweep.toml"
    sweep_cfg.write_text("[procedure]\nQ = 500\n[sweep]\ndelta_a = [0.0, 0.1, 0.2]\n"
                         "delta_f = [0.0, 0.25, 0.5]\n", encoding="utf-8")
    data = ["--data", str(gen / "data.csv"), "--schema", str(gen / "schema.toml")]
    commands = {
        "test": ["test", *data, "--Q", "500"],
        "sweep": ["sweep", "--config", str(sweep_cfg), *data],
        "simulate-power": ["simulate-power", "--reps", "300"],
        "simulate-game": ["simulate-game"],
        "verify-bounds": ["verify-bounds"],
        "gen-data": ["gen-data", "--n", "2000"],
        "milp-check": ["milp-check", "--instances", "10"],
    }
    mismatched = []
    for name, argv in commands.items():
        first = tmp_path / name / "first"
        assert run([*argv, "--seed", "123", "--out", str(first)]) == EXIT_OK, name
        artifacts = sorted(p.name for p in first.iterdir())
        for threads in (1, 4):
            again = tmp_path / name / f"rerun{threads}"
            code = run([name, "--config", str(first / "manifest.toml"), "--threads", str(threads),
                        "--out", str(again)])
            assert code == EXIT_OK, (name, threads)
            assert sorted(p.name for p in again.iterdir()) == artifacts
            for artifact in artifacts:
                if (first / artifact).read_bytes() != (again / artifact).read_bytes():
                    mismatched.append(f"{name}/{artifact}@{threads}")
    ok = not mismatched
    report(8, ok, f"{len(commands)} subcommands, threads 1 and 4, mismatches: {mismatched or 'none'}")
    assert not mismatched

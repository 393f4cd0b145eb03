"""Acceptance criteria 1-8.

Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line (visible in ``pytest -v``
output) before asserting. Tolerances are pinned in the constants below.
"""
import math
import random
import time

import numpy as np
import pytest
from oracles import BlockGen, brute_force_fitness, closed_truth, random_signals, replay_configuration

from drivefalsify.campaign import CampaignConfig, run_campaign
from drivefalsify.closedloop import run_closed_loop
from drivefalsify.controller import config_for_version
from drivefalsify.monitor import assess, requirement_assessments, robustness, trace_fitness
from drivefalsify.search import Evaluator, replay, uniform_random_search
from drivefalsify.testlang import configurations, instantiate, load_sequence, parse_block, parse_expr
from drivefalsify.trace import Trace

MONITOR_TRACES = 1000
MONITOR_MAX_SAMPLES = 10_000
MONITOR_RUNTIME_S = 30.0
SIGN_PAIRS = 100_000
STEP_BLOCKS = 200
FAULT_SEEDS = range(1, 11)
FAULT_BUDGET = 20
PERF_LIMIT_S = 1.0


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def test_1_monitor_oracle_equivalence(verdict):
    rng = random.Random(20261016)
    warm = parse_block(BlockGen(rng).block())
    assess(warm, Trace(0.5, random_signals(rng, 5)))
    mismatches, spent, longest = 0, 0.0, 0
    for i in range(MONITOR_TRACES):
        block = parse_block(BlockGen(rng).block())
        n = rng.randint(1, MONITOR_MAX_SAMPLES) if i % 20 == 0 else rng.randint(1, 400)
        longest = max(longest, n)
        dt = rng.choice([0.001, 0.01, 0.25])
        tr = Trace(dt, random_signals(rng, n))
        t0 = time.perf_counter()
        res = assess(block, tr)
        spent += time.perf_counter() - t0
        best, k, count = brute_force_fitness(block, tr)
        if count:
            same = res.min_robustness == best and res.argmin_time == k * dt
        else:
            same = res.min_robustness == math.inf and res.argmin_time is None
        mismatches += (not same) or res.evaluations != count
    ok = mismatches == 0 and spent < MONITOR_RUNTIME_S
    verdict(1, ok, f"{mismatches} mismatches over {MONITOR_TRACES} traces (longest {longest}), "
                   f"monitor time {spent:.2f} s < {MONITOR_RUNTIME_S} s")


def test_2_sign_soundness(verdict):
    rng = random.Random(7)
    n_expr = 2000
    per_expr = SIGN_PAIRS // n_expr
    bad, seen, skipped = 0, 0, 0
    for _ in range(n_expr):
        expr = parse_expr(BlockGen(rng).boolean(), ["a", "b"])
        for _ in range(per_expr):
            # coarse grid so that boundary cases (robustness exactly 0) occur often
            a = rng.choice([rng.uniform(-4, 4), float(rng.randint(-4, 4)), rng.randint(-8, 8) / 2])
            b = rng.choice([rng.uniform(-4, 4), float(rng.randint(-4, 4))])
            r = robustness(expr, {"a": a, "b": b}).value
            if math.isnan(r):
                skipped += 1
                continue
            env = {"sig": {"a": a, "b": b}, "prev": {"a": a, "b": b}, "t": 0.0, "et": 0.0}
            seen += 1
            bad += (r >= 0) != closed_truth(expr, env)
    ok = bad == 0 and seen + skipped == SIGN_PAIRS and skipped < SIGN_PAIRS // 100
    verdict(2, ok, f"{bad} counterexamples in {seen} pairs ({skipped} NaN skipped)")


def test_3_step_semantics_oracle(verdict):
    rng = random.Random(3)
    bad, samples = 0, 0
    for _ in range(STEP_BLOCKS):
        block = parse_block(BlockGen(rng, max_steps=5, max_levels=3).block())
        tr = Trace(0.25, random_signals(rng, 40))
        confs = configurations(block, tr)
        for k in range(len(tr)):
            samples += 1
            bad += replay_configuration(block, tr, k) != confs[k]
    verdict(3, bad == 0, f"{bad} mismatches over {STEP_BLOCKS} blocks, {samples} samples")


FAULTS = [
    ("1.0 x TS1 -> F1", "1.0", "TS1", ("F1",), {}, 9),
    ("2.1 x TS1 -> D1/D2", "2.1", "TS1", ("D1", "D2"), {}, 8),
    ("7.5 grade off x TS4 -> F1", "7.5", "TS4", ("F1",), {"grade_compensation": False}, 8),
]


@pytest.mark.parametrize("label,version,seq,reqs,overrides,need", FAULTS,
                         ids=["brakeless", "unsmoothed", "grade_off"])
def test_4_seeded_faults(verdict, label, version, seq, reqs, overrides, need):
    ev = Evaluator.for_version(version, seq, requirements=reqs, overrides=overrides)
    hits, replays_ok = 0, True
    for s in FAULT_SEEDS:
        res = uniform_random_search(ev.space, ev, FAULT_BUDGET, s)
        if not res.falsified:
            continue
        hits += 1
        assert set(res.outcome.report.violated_requirements) <= set(reqs)
        again = replay(res.outcome.candidate, ev.sequence, ev.controller, ev.assessments)
        replays_ok &= again.fitness < 0 and again.fitness == res.outcome.report.fitness
    ok = hits >= need and replays_ok
    verdict(4, ok, f"{label}: {hits}/{len(FAULT_SEEDS)} seeds within {FAULT_BUDGET} "
                   f"(need {need}), replays negative: {replays_ok}")


@pytest.mark.slow
def test_5_final_version_passes(verdict, tmp_path):
    cfg = CampaignConfig(versions=["7.5"], sequences="available", algorithm="random+sa",
                         budget=20, sa_budget=50, seeds=list(FAULT_SEEDS), check_invariants=True,
                         output_dir=str(tmp_path))
    report = run_campaign(cfg, write=False)
    runs = report.runs
    falsified = [(r.sequence, r.seed) for r in runs if r.falsified]
    traces = sum(r.invariants["traces"] for r in runs)
    violations = sum(r.invariants["mutex_violations"] + r.invariants["floor_violations"]
                     for r in runs)
    ok = len(runs) == 60 and not falsified and violations == 0
    verdict(5, ok, f"{len(runs)} runs, falsified {falsified or 'none'}, "
                   f"{violations} invariant violations over {traces} traces")


def _flat(n, dt=0.1, **cols):
    return Trace(dt, {k: np.full(n, float(v)) for k, v in cols.items()})


def test_6_threshold_exactness(verdict):
    req = requirement_assessments()
    cases = {
        "accel=5.0": (req["D1"], _flat(50, accel_long=5.0)),
        "accel=-3.5": (req["D1"], _flat(50, accel_long=-3.5)),
        "jerk=10": (req["D2"], _flat(50, jerk_long=10.0)),
        "jerk=-10": (req["D2"], _flat(50, jerk_long=-10.0)),
        "pitch=3": (req["D3"], _flat(50, pitch_accel=3.0)),
        "pitch=-3": (req["D3"], _flat(50, pitch_accel=-3.0)),
        "dv=+3": (req["F1"], _flat(500, desired_velocity=100, velocity=103,
                                   driver_throttle=0, driver_brake=0)),
        "dv=-3": (req["F1"], _flat(500, desired_velocity=100, velocity=97,
                                   driver_throttle=0, driver_brake=0)),
    }
    got = {name: trace_fitness(block, tr).fitness for name, (block, tr) in cases.items()}
    wrong = {k: v for k, v in got.items() if v != 0.0}
    verdict(6, not wrong, f"{len(cases)} boundary traces, non-zero: {wrong or 'none'}")


def test_7_rerun_determinism(verdict, tmp_path):
    def run():
        cfg = CampaignConfig(versions=["1.0", "2.1", "7.5"], sequences=["TS1"], budget=5,
                             sa_budget=5, seeds=[1, 2], output_dir=str(tmp_path))
        run_campaign(cfg)
        return {p.relative_to(tmp_path): p.read_bytes() for p in tmp_path.rglob("*")
                if p.is_file() and p.name != "metadata.json"}
    first, second = run(), run()
    diff = sorted(str(k) for k in first.keys() | second.keys() if first.get(k) != second.get(k))
    verdict(7, not diff and len(first) > 3,
            f"{len(first)} output files compared, differing: {diff or 'none'}")


def test_8_performance(verdict):
    ts6 = load_sequence("TS6")
    conc = instantiate(ts6, {p.name: 0.5 * (p.min + p.max) for p in ts6.params})
    cfg = config_for_version("7.5")
    run_closed_loop(conc, cfg, dt=0.01)  # compile outside the timed region
    t0 = time.perf_counter()
    tr = run_closed_loop(conc, cfg, dt=0.001)
    elapsed = time.perf_counter() - t0
    ok = len(tr) == 100_001 and elapsed < PERF_LIMIT_S
    verdict(8, ok, f"100 s at 1 ms ({len(tr)} rows) in {elapsed:.3f} s < {PERF_LIMIT_S} s")

import math
import random

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from oracles import BlockGen, brute_force_fitness, closed_truth, random_signals, rob, value

from drivefalsify.monitor import (VACUOUS, FitnessReport, assess, requirement_assessments,
                                  robustness, trace_fitness)
from drivefalsify.testlang import parse_block, parse_expr
from drivefalsify.trace import Trace

REQ = requirement_assessments()
F1_EXPR = "abs(desired_velocity - velocity) <= 3"


def flat(n, dt=0.01, **cols):
    return Trace(dt, {k: np.full(n, float(v)) if np.isscalar(v) else np.asarray(v, float)
                      for k, v in cols.items()})


def cc_trace(desired, velocity, n=None, dt=0.1, pedals=0.0):
    n = n or len(velocity)
    return flat(n, dt, desired_velocity=desired, velocity=velocity,
                driver_throttle=pedals, driver_brake=0.0)


# ------------------------------------------------------------------ single samples

@pytest.mark.parametrize("vel,expected", [(102, 1.0), (104, -1.0), (103, 0.0), (97, 0.0)])
def test_f1_margin(vel, expected):
    r = robustness(F1_EXPR, {"desired_velocity": 100, "velocity": vel})
    assert r.value == expected
    assert r.passed == (expected >= 0)


def test_atom_forms():
    s = {"x": 2.0, "y": 5.0}
    assert robustness("x <= y", s).value == 3.0
    assert robustness("x < y", s).value == 3.0
    assert robustness("x >= y", s).value == -3.0
    assert robustness("x == y", s).value == -3.0
    assert robustness("!(x == y)", s).value == 3.0
    assert robustness("x <= y && x >= 1.5", s).value == 0.5
    assert robustness("x >= y || x >= 1.5", s).value == 0.5
    assert robustness("!(x <= y && x >= 1.5)", s).value == -0.5
    assert robustness("true", s).value == math.inf
    assert robustness("!true || false", s).value == -math.inf
    assert robustness("t >= 1", s, t=3.0).value == 2.0


def test_robustness_errors():
    with pytest.raises(KeyError, match="y"):
        robustness(parse_expr("x <= y", ["x", "y"]), {"x": 1.0})
    with pytest.raises(Exception):
        robustness("x + 1", {"x": 1.0})


# ------------------------------------------------------------------ requirements

def test_f1_constant_tracking():
    rep = trace_fitness(REQ["F1"], cc_trace(100.0, 100.0, n=400))
    assert rep.fitness == 3.0 and rep.verdict == "pass"


def test_f1_checked_only_after_thirty_seconds():
    vel = np.full(400, 100.0)
    vel[:300] = 0.0  # way off for the first 30 s
    assert trace_fitness(REQ["F1"], cc_trace(100.0, vel)).fitness == 3.0
    vel[320] = 110.0
    rep = trace_fitness(REQ["F1"], cc_trace(100.0, vel))
    assert rep.fitness == -7.0
    assert rep.first_violation_time == pytest.approx(32.0)
    assert rep.argmin_time["F1"] == pytest.approx(32.0)


def test_f1_restarts_window_on_setpoint_change():
    des = np.full(700, 100.0)
    des[350:] = 60.0
    vel = np.full(700, 100.0)
    vel[350:600] = 80.0  # still converging inside the new 30 s window
    vel[600:] = 60.0
    assert trace_fitness(REQ["F1"], cc_trace(des, vel)).fitness == 3.0


def test_vacuous_when_driver_never_releases():
    rep = trace_fitness(REQ["F1"], cc_trace(100.0, 0.0, n=500, pedals=30.0))
    assert rep.fitness == math.inf
    assert rep.vacuous and rep.verdict == VACUOUS
    assert rep.to_dict()["fitness"] is None


def test_d1_spike():
    acc = np.zeros(100)
    acc[40] = -11.1
    rep = trace_fitness(REQ["D1"], flat(100, accel_long=acc))
    assert rep.fitness == pytest.approx(-7.6, abs=1e-12)
    assert rep.violated_requirements == ("D1",)
    assert rep.argmin_time["D1"] == pytest.approx(0.4)


def test_d1_upper_boundary_passes():
    assert trace_fitness(REQ["D1"], flat(50, accel_long=5.0)).fitness == 0.0


def test_d2_single_spike():
    jerk = np.zeros(100)
    jerk[10] = 12.0
    assert trace_fitness(REQ["D2"], flat(100, jerk_long=jerk)).fitness == -2.0


def test_combined_report():
    n = 200
    tr = flat(n, 0.5, desired_velocity=100, velocity=101, driver_throttle=0, driver_brake=0,
              accel_long=np.where(np.arange(n) == 150, -4.0, 0.0), jerk_long=0.0, pitch_accel=0.5)
    rep = trace_fitness(REQ, tr)
    assert rep.per_requirement == {"F1": 2.0, "D1": -0.5, "D2": 10.0, "D3": 2.5}
    assert rep.fitness == -0.5 and rep.violated_requirements == ("D1",)
    assert rep.first_violation_time == pytest.approx(75.0)
    again = FitnessReport.from_dict(rep.to_dict())
    assert again.per_requirement == rep.per_requirement


def test_missing_signal():
    with pytest.raises(KeyError, match="jerk_long"):
        assess(REQ["D2"], flat(10, accel_long=0.0))


def test_verify_scale():
    b = parse_block('assessment "s" { signals { x; } step A { verify(x <= 1, 2.5); } }')
    assert trace_fitness(b, flat(3, x=[0, 3, 1])).fitness == -5.0


# ------------------------------------------------------------------ properties

@settings(max_examples=100, deadline=None)
@given(shift=st.floats(0, 20), seed=st.integers(0, 2**32 - 1))
def test_d1_monotone_under_shift_toward_feasible(shift, seed):
    rng = np.random.default_rng(seed)
    acc = rng.uniform(-15, 15, 300)
    base = trace_fitness(REQ["D1"], flat(300, accel_long=acc)).fitness
    lower = acc < -3.5
    upper = acc > 5
    moved = acc.copy()
    moved[lower] = np.minimum(acc[lower] + shift, -3.5)
    moved[upper] = np.maximum(acc[upper] - shift, 5.0)
    assert trace_fitness(REQ["D1"], flat(300, accel_long=moved)).fitness >= base


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_fitness_bounded_by_every_active_pair(seed):
    rng = random.Random(seed)
    block = parse_block(BlockGen(rng).block())
    tr = Trace(0.5, random_signals(rng, 40))
    res = assess(block, tr)
    best, best_k, count = brute_force_fitness(block, tr)
    assert res.evaluations == count
    if count:
        assert res.min_robustness == best
        assert res.argmin_time == best_k * 0.5
    else:
        assert res.min_robustness == math.inf and res.argmin_time is None


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-4, 4), b=st.floats(-4, 4))
def test_sign_soundness(seed, a, b):
    expr = parse_expr(BlockGen(random.Random(seed)).boolean(), ["a", "b"])
    env = {"sig": {"a": a, "b": b}, "prev": {"a": a, "b": b}, "t": 0.0, "et": 0.0}
    r = robustness(expr, {"a": a, "b": b}).value
    assume(not math.isnan(r))
    assert r == rob(expr, env)
    assert (r >= 0) == closed_truth(expr, env)
    if r != 0:
        assert (r > 0) == value(expr, env)

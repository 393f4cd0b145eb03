"""Surrogate longitudinal vehicle: point mass plus a pitch oscillator.

The public functions take and return dataclasses; the numerics live in
``@njit`` kernels operating on flat float64 vectors so that the closed-loop
simulation (see :mod:`drivefalsify.closedloop`) can call them without
leaving compiled code.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np
from numba import njit

from .trace import Trace

G = 9.81
MS_TO_KMH = 3.6

# state vector layout
V, ACC, JERK, PITCH, PITCH_RATE, PITCH_ACC, THR_EFF, BRK_EFF = range(8)
N_STATE = 8

# parameter vector layout
(P_MASS, P_FDRIVE, P_PMAX, P_FBRAKE, P_DRAG, P_ROLL, P_INERTIA, P_STIFF, P_DAMP,
 P_COUPLING, P_DT, P_TAU_THR, P_TAU_BRK, P_V_STANDSTILL) = range(14)
N_PARAMS = 14

OUTPUT_SIGNALS = ("velocity", "velocity_ms", "accel_long", "jerk_long",
                  "pitch_angle", "pitch_rate", "pitch_accel")


class IntegrationError(RuntimeError):
    def __init__(self, index: int, dt: float):
        super().__init__(f"non-finite plant state or input at sample {index} (t={index * dt:.6g} s)")
        self.index = index
        self.t = index * dt


@dataclass(frozen=True)
class VehicleInput:
    throttle: float = 0.0
    brake: float = 0.0
    slope: float = 0.0

    def __post_init__(self):
        for name, lo, hi in (("throttle", 0, 100), ("brake", 0, 100), ("slope", -5, 5)):
            val = getattr(self, name)
            if not lo <= val <= hi:
                raise ValueError(f"{name}={val} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class VehicleState:
    velocity: float = 0.0  # m/s
    accel_long: float = 0.0
    jerk_long: float = 0.0
    pitch_angle: float = 0.0
    pitch_rate: float = 0.0
    pitch_accel: float = 0.0
    # first-order actuator states, fraction of full throttle/brake actually applied
    throttle_eff: float = 0.0
    brake_eff: float = 0.0

    def __post_init__(self):
        if self.velocity < 0:
            raise ValueError("velocity must be non-negative")

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    @classmethod
    def from_array(cls, x) -> "VehicleState":
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class PlantParams:
    mass: float = 1500.0
    max_drive_force: float = 6000.0
    max_power: float = 150e3
    max_brake_force: float = 12000.0
    drag_coeff: float = 0.4
    rolling_coeff: float = 150.0
    pitch_inertia: float = 2500.0
    pitch_stiffness: float = 166800.0
    pitch_damping: float = 16300.0
    pitch_coupling: float = 0.55
    dt: float = 0.001
    # Set the three below to zero to recover instantaneous actuators and the
    # discontinuous sign(v) rolling/brake terms.
    throttle_lag: float = 0.25
    brake_lag: float = 0.15
    standstill_speed: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name in ("throttle_lag", "brake_lag", "standstill_speed"):
                if val < 0:
                    raise ValueError(f"{f.name} must be >= 0")
            elif not val > 0:
                raise ValueError(f"{f.name} must be > 0")

    def with_dt(self, dt: float) -> "PlantParams":
        d = asdict(self)
        d["dt"] = dt
        return PlantParams(**d)

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    @classmethod
    def from_json(cls, path) -> "PlantParams":
        return cls(**json.loads(Path(path).read_text()))

    @classmethod
    def default(cls) -> "PlantParams":
        text = resources.files("drivefalsify.data").joinpath("plant_default.json").read_text()
        return cls(**json.loads(text))


@njit(cache=True)
def _lag(y, target, dt, tau):
    if tau <= dt:
        return target
    return y + (dt / tau) * (target - y)


@njit(cache=True)
def step_kernel(x, throttle, brake, slope, p, out):
    """Advance ``x`` by one step into ``out``. Returns False on non-finite values."""
    dt = p[P_DT]
    m = p[P_MASS]
    v = x[V]

    thr = _lag(x[THR_EFF], throttle / 100.0, dt, p[P_TAU_THR])
    brk = _lag(x[BRK_EFF], brake / 100.0, dt, p[P_TAU_BRK])

    vs = p[P_V_STANDSTILL]
    if v <= 0.0:
        moving = 0.0
    elif v < vs:
        moving = v / vs
    else:
        moving = 1.0

    f_drive = thr * min(p[P_FDRIVE], p[P_PMAX] / max(v, 0.1))
    f_brake = brk * p[P_FBRAKE] * moving
    f_drag = p[P_DRAG] * v * v
    f_roll = p[P_ROLL] * moving
    f_grade = m * G * math.sin(math.atan(slope / 100.0))

    a = (f_drive - f_brake - f_drag - f_roll - f_grade) / m
    v_new = v + dt * a
    if v_new < 0.0:
        v_new = 0.0
        a = -v / dt

    p_acc = (-p[P_STIFF] * x[PITCH] - p[P_DAMP] * x[PITCH_RATE] - p[P_COUPLING] * m * a) / p[P_INERTIA]
    rate_new = x[PITCH_RATE] + dt * p_acc

    out[V] = v_new
    out[ACC] = a
    out[JERK] = (a - x[ACC]) / dt
    out[PITCH] = x[PITCH] + dt * rate_new
    out[PITCH_RATE] = rate_new
    out[PITCH_ACC] = p_acc
    out[THR_EFF] = thr
    out[BRK_EFF] = brk
    for i in range(N_STATE):
        if not math.isfinite(out[i]):
            return False
    return math.isfinite(throttle) and math.isfinite(brake) and math.isfinite(slope)


@njit(cache=True)
def simulate_kernel(x0, throttle, brake, slope, p, states):
    """Fill ``states[k]`` for every sample; returns the failing index or -1."""
    n = throttle.shape[0]
    for i in range(N_STATE):
        states[0, i] = x0[i]
    for k in range(n - 1):
        if not step_kernel(states[k], throttle[k], brake[k], slope[k], p, states[k + 1]):
            return k
    return -1


def step_dynamics(state: VehicleState, inp: VehicleInput, params: PlantParams) -> VehicleState:
    out = np.empty(N_STATE)
    if not step_kernel(state.to_array(), inp.throttle, inp.brake, inp.slope, params.to_array(), out):
        raise IntegrationError(0, params.dt)
    return VehicleState.from_array(out)


def states_to_trace(states: np.ndarray, dt: float) -> Trace:
    return Trace(dt, {
        "velocity": states[:, V] * MS_TO_KMH,
        "velocity_ms": states[:, V],
        "accel_long": states[:, ACC],
        "jerk_long": states[:, JERK],
        "pitch_angle": states[:, PITCH],
        "pitch_rate": states[:, PITCH_RATE],
        "pitch_accel": states[:, PITCH_ACC],
    })


def simulate(initial: VehicleState, inputs: Trace, params: PlantParams) -> Trace:
    """Open-loop simulation. Row k of the result is the state at ``k * dt``;
    input row k drives the transition from k to k + 1."""
    if not math.isclose(inputs.dt, params.dt, rel_tol=1e-9, abs_tol=0.0):
        raise ValueError(f"input trace sampled at {inputs.dt} s, plant expects {params.dt} s")
    n = len(inputs)
    if n < 2:
        raise ValueError("input trace must span a positive duration")
    cols = []
    for name, lo, hi in (("throttle", 0, 100), ("brake", 0, 100), ("slope", -5, 5)):
        col = inputs[name] if name in inputs else np.zeros(n)
        finite = col[np.isfinite(col)]
        if finite.size and (finite.min() < lo or finite.max() > hi):
            raise ValueError(f"input signal {name} leaves [{lo}, {hi}]")
        cols.append(np.ascontiguousarray(col, dtype=np.float64))
    states = np.empty((n, N_STATE))
    bad = simulate_kernel(initial.to_array(), cols[0], cols[1], cols[2], params.to_array(), states)
    if bad >= 0:
        raise IntegrationError(bad, params.dt)
    return states_to_trace(states, params.dt)

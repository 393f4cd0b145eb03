"""Closed-loop execution: test sequence -> cruise controller -> vehicle.

Per sample k the sequence reads the plant outputs at k and writes its input
signals, the controller turns them into pedal commands, and those commands
drive the plant from k to k + 1. Everything runs inside one compiled loop.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .controller import N_CSTATE, ControllerConfig, controller_kernel
from .plant import (ACC, JERK, MS_TO_KMH, N_STATE, P_DT, PITCH, PITCH_ACC, PITCH_RATE, V,
                    IntegrationError, PlantParams, VehicleState, states_to_trace, step_kernel)
from .testlang.ast import Block
from .testlang.machine import H_PREV, H_SIG, assign, compile_block, machine_step
from .testlang.sequences import ParameterError, check_assignments, n_samples, scenario_duration
from .trace import Trace

INPUT_SIGNALS = ("desired_velocity", "driver_throttle", "driver_brake", "slope")
CONTROL_SIGNALS = ("throttle", "brake", "cc_active")
_OBSERVABLE = {"velocity": 0, "velocity_ms": 1, "accel_long": 2, "jerk_long": 3,
               "pitch_angle": 4, "pitch_rate": 5, "pitch_accel": 6}

OK, UNSTABLE, OUT_OF_RANGE = 0, 1, 2


class InputRangeError(ValueError):
    def __init__(self, signal: str, index: int, dt: float, value: float):
        super().__init__(f"sequence drives {signal}={value:g} out of range at t={index * dt:.6g} s")
        self.signal = signal
        self.index = index


@njit(cache=True)
def _observe(x, code):
    if code == 0:
        return x[V] * MS_TO_KMH
    if code == 1:
        return x[V]
    if code == 2:
        return x[ACC]
    if code == 3:
        return x[JERK]
    if code == 4:
        return x[PITCH]
    if code == 5:
        return x[PITCH_RATE]
    return x[PITCH_ACC]


@njit(cache=True)
def closed_loop_kernel(I0, F0, is_assigned, obs_slot, obs_code, in_slot, x0, p, c, cs,
                       signals, control, states, status, settle):
    """Run the loop; ``status`` receives [code, sample index, offending input]."""
    n = signals.shape[0]
    n_slots = signals.shape[1]
    dt = p[P_DT]
    I = I0.copy()  # noqa: E741
    F = F0.copy()
    sg = I[H_SIG]
    pv = I[H_PREV]
    u = np.zeros(4)
    ctrl = np.zeros(3)
    dry = np.zeros(N_STATE)
    for i in range(N_STATE):
        states[0, i] = x0[i]
    for k in range(n):
        t = k * dt
        x = states[k]
        for j in range(obs_slot.shape[0]):
            F[sg + obs_slot[j]] = _observe(x, obs_code[j])
        if k == 0:
            for j in range(n_slots):
                F[pv + j] = F[sg + j]
        machine_step(k, I, F, t)
        assign(I, F, t)
        for j in range(n_slots):
            signals[k, j] = F[sg + j]
            F[pv + j] = F[sg + j]
        for i in range(4):
            u[i] = F[sg + in_slot[i]] if in_slot[i] >= 0 else 0.0
            if not math.isfinite(u[i]):
                status[0] = UNSTABLE
                status[1] = k
                status[2] = i
                return
        if u[0] < 0.0 or u[1] < 0.0 or u[1] > 100.0 or u[2] < 0.0 or u[2] > 100.0 \
                or u[3] < -5.0 or u[3] > 5.0:
            status[0] = OUT_OF_RANGE
            status[1] = k
            for i in range(4):
                if (i == 0 and u[0] < 0.0) or (i in (1, 2) and not 0.0 <= u[i] <= 100.0) \
                        or (i == 3 and not -5.0 <= u[3] <= 5.0):
                    status[2] = i
                    break
            return
        measured = x[V] * MS_TO_KMH
        controller_kernel(cs, u[0], measured, u[3], u[1], u[2], t, dt, c, ctrl)
        control[k, 0] = ctrl[0]
        control[k, 1] = ctrl[1]
        control[k, 2] = ctrl[2]
        if k == 0 and settle:
            # start with the acceleration the first inputs produce, so the
            # first jerk sample does not measure a jump from an arbitrary zero
            step_kernel(x, ctrl[0], ctrl[1], u[3], p, dry)
            x[ACC] = dry[ACC]
        if k + 1 < n:
            if not step_kernel(x, ctrl[0], ctrl[1], u[3], p, states[k + 1]):
                status[0] = UNSTABLE
                status[1] = k
                status[2] = -1
                return
    status[0] = OK


class _Prepared:
    """Compiled sequence tables and slot bookkeeping, reusable across runs."""

    def __init__(self, concrete: Block):
        if concrete.params:
            raise ParameterError(f"{concrete.name} still has parameters; instantiate it first")
        check_assignments(concrete)
        unknown = [o for o in concrete.observed if o not in _OBSERVABLE]
        if unknown:
            raise ValueError(f"{concrete.name} observes unknown plant output(s): {', '.join(unknown)}")
        self.names = list(concrete.signals) + [o for o in concrete.observed if o not in concrete.signals]
        slot_map = {n: i for i, n in enumerate(self.names)}
        self.cb = compile_block(concrete, slot_map)
        self.is_assigned = np.array([n in concrete.signals for n in self.names])
        self.obs_slot = np.array([slot_map[o] for o in concrete.observed], dtype=np.int64)
        self.obs_code = np.array([_OBSERVABLE[o] for o in concrete.observed], dtype=np.int64)
        self.in_slot = np.array([slot_map[s] if s in concrete.signals else -1 for s in INPUT_SIGNALS],
                                dtype=np.int64)
        self.block = concrete


def run_closed_loop(concrete: Block, config: ControllerConfig, plant: PlantParams | None = None,
                    duration: float | None = None, dt: float | None = None,
                    initial: VehicleState | None = None, settle: bool = True) -> Trace:
    """Simulate an instantiated sequence against the controller and plant.

    The returned trace holds the sequence signals, the controller's pedal
    commands and ``cc_active``, and every plant output. With ``settle`` the
    initial acceleration is set to the one the first inputs produce (the
    car is released, not dropped, onto a slope).
    """
    plant = plant or PlantParams.default()
    if dt is not None and dt != plant.dt:
        plant = plant.with_dt(dt)
    prep = _Prepared(concrete)
    duration = scenario_duration(concrete, duration)
    n = n_samples(duration, plant.dt)
    if n < 2:
        raise ValueError("scenario shorter than one sample")
    signals = np.zeros((n, len(prep.names)))
    control = np.zeros((n, 3))
    states = np.zeros((n, N_STATE))
    status = np.zeros(3, dtype=np.int64)
    cs = np.zeros(N_CSTATE)
    x0 = (initial or VehicleState()).to_array()
    closed_loop_kernel(*prep.cb.packed, prep.is_assigned, prep.obs_slot, prep.obs_code, prep.in_slot,
                       x0, plant.to_array(), config.to_array(), cs, signals, control, states, status,
                       settle)
    code, k, which = (int(v) for v in status)
    if code == UNSTABLE:
        raise IntegrationError(k, plant.dt)
    if code == OUT_OF_RANGE:
        name = INPUT_SIGNALS[which]
        raise InputRangeError(name, k, plant.dt, float(signals[k, prep.in_slot[which]]))
    out = {name: signals[:, i].copy() for i, name in enumerate(prep.names) if prep.is_assigned[i]}
    for name in INPUT_SIGNALS:
        out.setdefault(name, np.zeros(n))
    for i, name in enumerate(CONTROL_SIGNALS):
        out[name] = control[:, i].copy()
    trace = Trace(plant.dt, out)
    return trace.merge(states_to_trace(states, plant.dt))

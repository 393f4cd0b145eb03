"""Cruise controller: PID, grade compensation, change detection, smoothing
and output split, each switchable so that every version of the design ladder
is a configuration rather than a code copy.

Commands are signed percentages: positive drives the throttle, negative the
brake. Velocities inside the controller are in km/h.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources

import numpy as np
from numba import njit

THROTTLE_FLOOR = 5.0


class SmoothingMode(enum.IntEnum):
    NONE = 0
    RATE_LIMIT = 1
    SIGMOID = 2
    CUBIC_SPLINE = 3
    QUINTIC_BRAKE = 4


class ChangeEvent(enum.IntEnum):
    NONE = 0
    TAKEOVER = 1
    SETPOINT_CHANGE = 2


# config vector layout
(C_KP, C_KI, C_KD, C_KFF, C_BRAKES, C_MODE, C_DUR, C_GRADE, C_GGAIN, C_FLOOR,
 C_CAP, C_RESET, C_ICLAMP, C_MUTEX, C_DEACT, C_RATE, C_SIGK, C_SLOPE_LAG,
 C_SP_THRESH) = range(19)
N_CONFIG = 19

# state vector layout
(S_INT, S_PREV_ERR, S_ACTIVE, S_SMOOTH, S_T0, S_U0, S_U1, S_PREV_DES, S_PREV_CMD,
 S_SLOPE, S_QUINTIC, S_STARTED) = range(12)
N_CSTATE = 12

PROFILE_NONE, PROFILE_SIGMOID, PROFILE_CUBIC, PROFILE_QUINTIC = range(4)


@dataclass(frozen=True)
class ControllerConfig:
    kp: float = 2.0
    ki: float = 0.1
    kd: float = 0.0
    kff: float = 0.1
    brakes_enabled: bool = True
    smoothing_mode: SmoothingMode = SmoothingMode.NONE
    smoothing_duration: float = 2.0
    grade_compensation: bool = False
    grade_gain: float = 3.0
    throttle_floor_enabled: bool = False
    brake_cap: float = 100.0
    integral_reset_on_change: bool = False
    integral_clamp: float = 100.0
    mutual_exclusion: bool = False
    deactivation_threshold: float = 5.0
    rate_limit: float = 50.0  # %/s, rate_limit mode only
    sigmoid_steepness: float = 12.0
    slope_lag: float = 0.0  # s; 0 feeds the road slope straight through
    setpoint_threshold: float = 0.5  # km/h

    def __post_init__(self):
        object.__setattr__(self, "smoothing_mode", SmoothingMode(self.smoothing_mode))
        if not 0 < self.brake_cap <= 100:
            raise ValueError(f"brake_cap must be in (0, 100], got {self.brake_cap}")
        if self.deactivation_threshold < 0:
            raise ValueError("deactivation_threshold must be >= 0")
        if self.smoothing_mode in (SmoothingMode.SIGMOID, SmoothingMode.CUBIC_SPLINE,
                                   SmoothingMode.QUINTIC_BRAKE) and not self.smoothing_duration > 0:
            raise ValueError("smoothing_duration must be positive")
        if self.integral_clamp < 0 or self.rate_limit <= 0 or self.slope_lag < 0:
            raise ValueError("integral_clamp, rate_limit and slope_lag must be non-negative")

    def to_array(self) -> np.ndarray:
        return np.array([float(getattr(self, f.name)) for f in fields(self)], dtype=np.float64)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["smoothing_mode"] = self.smoothing_mode.name.lower()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerConfig":
        d = dict(d)
        mode = d.get("smoothing_mode")
        if isinstance(mode, str):
            d["smoothing_mode"] = SmoothingMode[mode.upper()]
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown controller fields: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "ControllerConfig":
        return replace(self, **changes)


@dataclass
class ControllerState:
    integral_acc: float = 0.0
    prev_error: float = 0.0
    cc_active: bool = False
    smoothing_active: bool = False
    smoothing_start_time: float = 0.0
    smoothing_from: float = 0.0
    smoothing_to: float = 0.0
    prev_desired_velocity: float = 0.0
    prev_command: float = 0.0
    slope_estimate: float = 0.0
    smoothing_quintic: bool = False
    started: bool = False

    def to_array(self) -> np.ndarray:
        return np.array([float(getattr(self, f.name)) for f in fields(self)], dtype=np.float64)

    def load(self, x) -> None:
        for f, v in zip(fields(self), x):
            setattr(self, f.name, bool(v) if f.type in ("bool", bool) else float(v))


@dataclass(frozen=True)
class ControllerInput:
    desired_velocity: float
    measured_velocity: float
    slope: float = 0.0
    driver_throttle: float = 0.0
    driver_brake: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        for name in ("driver_throttle", "driver_brake"):
            if not 0 <= getattr(self, name) <= 100:
                raise ValueError(f"{name} outside [0, 100]")
        if not -5 <= self.slope <= 5:
            raise ValueError("slope outside [-5, 5]")


@dataclass(frozen=True)
class ControllerOutput:
    throttle: float
    brake: float
    cc_active: bool


# ---------------------------------------------------------------- kernels

@njit(cache=True)
def cubic_profile(x):
    return x * x * (3.0 - 2.0 * x)


@njit(cache=True)
def quintic_profile(x):
    return x * x * x * (10.0 + x * (-15.0 + 6.0 * x))


@njit(cache=True)
def sigmoid_profile(x, k):
    lo = 1.0 / (1.0 + math.exp(0.5 * k))
    hi = 1.0 / (1.0 + math.exp(-0.5 * k))
    return (1.0 / (1.0 + math.exp(-k * (x - 0.5))) - lo) / (hi - lo)


@njit(cache=True)
def pid_kernel(s, desired, measured, dt, c):
    e = desired - measured
    acc = s[S_INT] + e * dt
    lim = c[C_ICLAMP]
    if acc > lim:
        acc = lim
    elif acc < -lim:
        acc = -lim
    s[S_INT] = acc
    de = (e - s[S_PREV_ERR]) / dt
    s[S_PREV_ERR] = e
    return c[C_KP] * e + c[C_KI] * acc + c[C_KD] * de + c[C_KFF] * desired


@njit(cache=True)
def grade_kernel(raw, slope, c):
    if c[C_GRADE] != 0.0:
        return raw + c[C_GGAIN] * slope
    return raw


@njit(cache=True)
def detect_change_kernel(s, desired, measured, driver_throttle, driver_brake, c):
    thr = c[C_DEACT]
    pedals_high = driver_throttle > thr or driver_brake > thr
    if s[S_STARTED] == 0.0:
        s[S_PREV_DES] = desired
        s[S_STARTED] = 1.0
    event = 0
    if not pedals_high:
        if s[S_ACTIVE] == 0.0:
            event = 1
        elif abs(desired - s[S_PREV_DES]) > c[C_SP_THRESH]:
            event = 2
            if c[C_RESET] != 0.0:
                s[S_INT] = 0.0
    s[S_PREV_DES] = desired
    if event != 0:
        # no derivative kick on the event sample
        s[S_PREV_ERR] = desired - measured
    if event == 1:
        s[S_ACTIVE] = 1.0
        s[S_INT] = 0.0
    return event


@njit(cache=True)
def arm_smoothing(s, t):
    s[S_SMOOTH] = 1.0
    s[S_T0] = t
    s[S_U0] = s[S_PREV_CMD]
    s[S_U1] = math.nan


@njit(cache=True)
def smooth_kernel(s, raw, t, dt, c):
    mode = int(c[C_MODE])
    if mode == 0:
        return raw
    if mode == 1:
        step = c[C_RATE] * dt
        lo = s[S_PREV_CMD] - step
        hi = s[S_PREV_CMD] + step
        return min(max(raw, lo), hi)
    if s[S_SMOOTH] == 0.0:
        return raw
    if math.isnan(s[S_U1]):
        s[S_U1] = raw
        s[S_QUINTIC] = 1.0 if (mode == 4 and raw < 0.0) else 0.0
    tau = t - s[S_T0]
    dur = c[C_DUR]
    if tau >= dur:
        s[S_SMOOTH] = 0.0
        return raw
    x = tau / dur
    if mode == 2:
        w = sigmoid_profile(x, c[C_SIGK])
    elif s[S_QUINTIC] != 0.0:
        w = quintic_profile(x)
    else:
        w = cubic_profile(x)
    u0 = s[S_U0]
    return u0 + (raw - u0) * w


@njit(cache=True)
def split_kernel(s, cmd, driver_throttle, driver_brake, c, out):
    """Write (throttle, brake, cc_active) to ``out``."""
    thr_lim = c[C_DEACT]
    if driver_throttle > thr_lim or driver_brake > thr_lim:
        s[S_ACTIVE] = 0.0
        s[S_SMOOTH] = 0.0
        out[0] = driver_throttle
        out[1] = driver_brake
        out[2] = 0.0
        return
    if cmd > 0.0:
        throttle = min(cmd, 100.0)
        brake = 0.0
    else:
        throttle = 0.0
        brake = min(-cmd, c[C_CAP]) if c[C_BRAKES] != 0.0 else 0.0
    # pedals resting below the deactivation threshold still reach the vehicle
    throttle = min(throttle + driver_throttle, 100.0)
    brake = min(brake + driver_brake, 100.0)
    if c[C_MUTEX] != 0.0 and brake > 0.0:
        throttle = 0.0
    if c[C_FLOOR] != 0.0 and 0.0 < throttle < THROTTLE_FLOOR:
        throttle = THROTTLE_FLOOR
    out[0] = throttle
    out[1] = brake
    out[2] = s[S_ACTIVE]


@njit(cache=True)
def controller_kernel(s, desired, measured, slope, driver_throttle, driver_brake, t, dt, c, out):
    lag = c[C_SLOPE_LAG]
    if s[S_STARTED] == 0.0 or lag <= dt:
        s[S_SLOPE] = slope
    else:
        s[S_SLOPE] += (dt / lag) * (slope - s[S_SLOPE])

    event = detect_change_kernel(s, desired, measured, driver_throttle, driver_brake, c)
    if event != 0:
        arm_smoothing(s, t)

    cmd = 0.0
    thr_lim = c[C_DEACT]
    if s[S_ACTIVE] != 0.0 and not (driver_throttle > thr_lim or driver_brake > thr_lim):
        raw = pid_kernel(s, desired, measured, dt, c)
        raw = grade_kernel(raw, s[S_SLOPE], c)
        # saturate to what the actuators will accept before smoothing, so a
        # transition towards a capped brake is shaped over the reachable range
        lo = -c[C_CAP] if c[C_BRAKES] != 0.0 else -100.0
        raw = min(max(raw, lo), 100.0)
        cmd = smooth_kernel(s, raw, t, dt, c)
    split_kernel(s, cmd, driver_throttle, driver_brake, c, out)
    s[S_PREV_CMD] = out[0] - out[1]
    return event


# ---------------------------------------------------------------- wrappers

def _run(state: ControllerState, fn, *args):
    x = state.to_array()
    res = fn(x, *args)
    state.load(x)
    return res


def pid_update(state: ControllerState, inp: ControllerInput, cfg: ControllerConfig, dt: float = 0.001) -> float:
    """Advance the PID terms one sample and return the unclipped signed command."""
    return float(_run(state, pid_kernel, inp.desired_velocity, inp.measured_velocity, dt, cfg.to_array()))


def apply_grade(raw: float, slope: float, cfg: ControllerConfig) -> float:
    return float(grade_kernel(raw, slope, cfg.to_array()))


def detect_change(state: ControllerState, inp: ControllerInput, cfg: ControllerConfig) -> ChangeEvent:
    ev = _run(state, detect_change_kernel, inp.desired_velocity, inp.measured_velocity,
              inp.driver_throttle, inp.driver_brake, cfg.to_array())
    return ChangeEvent(ev)


def arm(state: ControllerState, t: float) -> None:
    """Start a smoothing window at ``t`` from the last applied command."""
    _run(state, arm_smoothing, t)


def smooth_transition(state: ControllerState, raw: float, t: float, cfg: ControllerConfig,
                      dt: float = 0.001) -> float:
    return float(_run(state, smooth_kernel, raw, t, dt, cfg.to_array()))


def output_split(command: float, inp: ControllerInput, cfg: ControllerConfig,
                 state: ControllerState) -> ControllerOutput:
    out = np.zeros(3)
    _run(state, split_kernel, command, inp.driver_throttle, inp.driver_brake, cfg.to_array(), out)
    return ControllerOutput(float(out[0]), float(out[1]), bool(out[2]))


def controller_step(state: ControllerState, inp: ControllerInput, cfg: ControllerConfig,
                    dt: float = 0.001) -> tuple[ControllerOutput, ControllerState]:
    """Compose change detection, PID, grade, smoothing and split for one sample.

    ``state`` is updated in place and also returned.
    """
    out = np.zeros(3)
    _run(state, controller_kernel, inp.desired_velocity, inp.measured_velocity, inp.slope,
         inp.driver_throttle, inp.driver_brake, inp.t, dt, cfg.to_array(), out)
    return ControllerOutput(float(out[0]), float(out[1]), bool(out[2])), state


# ---------------------------------------------------------------- versions

def load_versions(path=None) -> dict[str, ControllerConfig]:
    if path is None:
        text = resources.files("drivefalsify.data").joinpath("versions.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    raw = json.loads(text)
    return {vid: ControllerConfig.from_dict(d) for vid, d in raw["versions"].items()}


def version_ids() -> list[str]:
    return list(load_versions())


def config_for_version(version_id: str, overrides: dict | None = None) -> ControllerConfig:
    versions = load_versions()
    if version_id not in versions:
        raise KeyError(f"unknown controller version {version_id!r}; known: {', '.join(versions)}")
    cfg = versions[version_id]
    if overrides:
        d = cfg.to_dict()
        d.update(overrides)
        cfg = ControllerConfig.from_dict(d)
    return cfg


def requirements_for_version(version_id: str) -> tuple[str, ...]:
    """Requirements checked for a version: drivability joins at 2.1."""
    major, minor = (int(x) for x in version_id.split("."))
    if (major, minor) < (2, 1):
        return ("F1",)
    return ("F1", "D1", "D2", "D3")

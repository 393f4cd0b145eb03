"""Regenerate data/versions.json from the compact ladder below.

Each version lists only what changes relative to its predecessor; the
written file is fully expanded so every version reads on its own.
"""

import json
from pathlib import Path

BASE = {
    "kp": 3.0, "ki": 0.05, "kd": 0.0, "kff": 0.11,
    "brakes_enabled": False, "smoothing_mode": "none", "smoothing_duration": 2.0,
    "grade_compensation": False, "grade_gain": 2.5, "throttle_floor_enabled": False,
    "brake_cap": 100.0, "integral_reset_on_change": False, "integral_clamp": 60.0,
    "mutual_exclusion": False, "deactivation_threshold": 5.0, "rate_limit": 40.0,
    "sigmoid_steepness": 6.0, "slope_lag": 0.0, "setpoint_threshold": 0.5,
}

LADDER = [
    ("1.0", {}),
    ("2.0", {"brakes_enabled": True}),
    ("2.1", {}),
    ("3.0", {"smoothing_mode": "rate_limit"}),
    ("3.1", {}),
    ("3.2", {}),
    ("4.0", {"grade_compensation": True, "smoothing_mode": "sigmoid", "smoothing_duration": 3.0}),
    ("5.0", {"sigmoid_steepness": 8.0}),
    ("6.0", {"slope_lag": 1.0}),
    ("6.1", {"grade_gain": 3.0}),
    ("6.2", {"smoothing_duration": 2.0}),
    ("6.3", {"slope_lag": 0.0}),
    ("6.4", {"sigmoid_steepness": 12.0}),
    ("6.5", {"smoothing_mode": "cubic_spline"}),
    ("6.6", {"mutual_exclusion": True}),
    ("7.0", {"throttle_floor_enabled": True}),
    ("7.1", {"brake_cap": 30.0}),
    ("7.2", {"smoothing_mode": "quintic_brake"}),
    ("7.3", {"integral_reset_on_change": True}),
    ("7.4", {}),
    ("7.5", {}),
]


def expand():
    cfg = dict(BASE)
    out = {}
    for vid, delta in LADDER:
        cfg.update(delta)
        out[vid] = dict(cfg)
    return out


if __name__ == "__main__":
    path = Path(__file__).resolve().parents[1] / "src" / "drivefalsify" / "data" / "versions.json"
    path.write_text(json.dumps({"versions": expand()}, indent=2) + "\n")
    print(f"wrote {len(LADDER)} versions to {path}")

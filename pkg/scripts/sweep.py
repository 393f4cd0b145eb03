"""Evaluate a controller configuration on uniformly drawn scenarios.

Prints the worst robustness per requirement and sequence, which is the
quickest way to see how much margin a configuration has before running a
full campaign.

    python3 scripts/sweep.py --version 7.5 --n 50
    python3 scripts/sweep.py --version 7.5 --set kp=3 --set brake_cap=28
"""

import argparse
import json
import time

import numpy as np

from drivefalsify.closedloop import run_closed_loop
from drivefalsify.controller import config_for_version, requirements_for_version
from drivefalsify.monitor import requirement_assessments, trace_fitness
from drivefalsify.testlang import SEQUENCE_IDS, instantiate, load_sequence


def parse_set(items):
    out = {}
    for item in items:
        key, _, val = item.partition("=")
        out[key] = json.loads(val) if val not in ("none", "sigmoid", "cubic_spline", "quintic_brake",
                                                  "rate_limit") else val
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--version", default="7.5")
    ap.add_argument("--set", action="append", default=[])
    ap.add_argument("--sequences", default=",".join(SEQUENCE_IDS))
    ap.add_argument("--n", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--worst", action="store_true", help="print the worst candidate per cell")
    args = ap.parse_args()

    cfg = config_for_version(args.version, parse_set(args.set))
    reqs = requirement_assessments(requirements_for_version(args.version))
    rng = np.random.default_rng(args.seed)
    t0 = time.time()
    for sid in args.sequences.split(","):
        seq = load_sequence(sid)
        worst = {r: (np.inf, None) for r in reqs}
        fails = 0
        for _ in range(args.n):
            values = {p.name: float(rng.uniform(p.min, p.max)) for p in seq.params}
            rep = trace_fitness(reqs, run_closed_loop(instantiate(seq, values), cfg))
            fails += rep.fitness < 0
            for r, v in rep.per_requirement.items():
                if v < worst[r][0]:
                    worst[r] = (v, values)
        row = "  ".join(f"{r}={w[0]:8.3f}" for r, w in worst.items())
        print(f"{sid}: fails {fails:3d}/{args.n}  {row}", flush=True)
        if args.worst:
            for r, (v, vals) in worst.items():
                if vals is not None and v < 1.0:
                    short = {k.removeprefix("Hecate_"): round(x, 3) for k, x in vals.items()}
                    print(f"    {r} {v:.3f} {short}")
    print(f"elapsed {time.time() - t0:.1f} s")


if __name__ == "__main__":
    main()

"""Run the version-ladder campaign and print the summary table.

    python3 scripts/ladder_experiment.py                       # full ladder, ~1 h on one core
    python3 scripts/ladder_experiment.py --versions 1.0,2.1,7.5 --seeds 3 --dt 0.01

Rows are one (version, sequence) cell; #IT is the median number of
evaluations to the first failure over falsified seeds, ">budget" when no
seed falsified. Set DRIVEFALSIFY_WORKERS to spread simulations over cores.
"""

import argparse
import logging
import time
from pathlib import Path

from drivefalsify.campaign import CampaignConfig, ladder, ladder_text

HERE = Path(__file__).resolve().parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=str(HERE / "configs" / "ladder.json"))
    ap.add_argument("--versions", help="comma separated subset, e.g. 1.0,2.1,7.5")
    ap.add_argument("--seeds", type=int, help="use seeds 1..N")
    ap.add_argument("--dt", type=float)
    ap.add_argument("--output")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = CampaignConfig.load(args.config)
    if args.versions:
        cfg.versions = args.versions.split(",")
    if args.seeds:
        cfg.seeds = list(range(1, args.seeds + 1))
    if args.dt:
        cfg.dt = args.dt
    if args.output:
        cfg.output_dir, cfg.base_dir = args.output, "."
    cfg.validate()

    t0 = time.time()
    done = []
    total = len(cfg.cells())

    def progress(cell, raw):
        done.append(cell)
        hit = next((r for r in raw["results"] if r.falsified), None)
        used = sum(r.iterations_used for r in raw["results"])
        tag = f"falsified after {used}" if hit else f"NFF after {used}"
        print(f"[{len(done):4d}/{total}] {cell['version']:>4} {cell['sequence']} "
              f"seed {cell['seed']:2d}: {tag}", flush=True)

    report, rows = ladder(cfg, progress=progress)
    print()
    print(ladder_text(rows))
    falsified = sorted({r.version for r in report.runs if r.falsified}, key=lambda v: tuple(map(int, v.split("."))))
    print(f"\nversions with a failure: {len(falsified)}/{len(cfg.versions)}  ({', '.join(falsified)})")
    print(f"wrote {cfg.output_path()}  [{time.time() - t0:.0f} s]")


if __name__ == "__main__":
    main()

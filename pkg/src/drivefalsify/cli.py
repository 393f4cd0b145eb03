"""Command line entry point: ``drivefalsify {run,ladder,simulate,replay}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .campaign import (EXIT_OK, CampaignConfig, ConfigError, exit_code_for, ladder,
                       ladder_text, run_campaign, simulate_once, summary_text)
from .search import ReplayFile, replay_file

log = logging.getLogger("drivefalsify")


def _params(pairs: list[str]) -> dict[str, float]:
    out = {}
    for item in pairs:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--param expects name=value, got {item!r}")
        try:
            out[key.strip()] = float(val)
        except ValueError as exc:
            raise ConfigError(f"--param {key}: {val!r} is not a number") from exc
    return out


def _progress(cell, res):
    verdict = "falsified" if any(x.falsified for x in res["results"]) else "NFF"
    log.info("%s %s seed %d: %s after %d", cell["version"], cell["sequence"], cell["seed"], verdict,
             sum(x.iterations_used for x in res["results"]))


def cmd_run(args) -> int:
    cfg = CampaignConfig.load(args.config)
    if args.output:
        cfg.output_dir = args.output
    report = run_campaign(cfg, progress=_progress)
    print(summary_text(report), end="")
    print(f"reports written to {cfg.output_path()}")
    return EXIT_OK


def cmd_ladder(args) -> int:
    cfg = CampaignConfig.load(args.config)
    if args.output:
        cfg.output_dir = args.output
    _, rows = ladder(cfg, progress=_progress)
    print(ladder_text(rows), end="")
    print(f"ladder written to {cfg.output_path() / 'ladder.csv'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    res = simulate_once(args.version, args.sequence, _params(args.param), out_dir=args.output,
                        dt=args.dt)
    rep = res["report"]
    print(json.dumps(rep.to_dict(), indent=2))
    for kind, path in res["files"].items():
        print(f"{kind}: {path}")
    return EXIT_OK


def cmd_replay(args) -> int:
    rf = ReplayFile.read(args.file)
    extra = [] if args.dt is None else [args.dt]
    if args.compare_dt:
        extra.append(0.01 if rf.dt != 0.01 else 0.001)
    reports = replay_file(args.file, dts=extra)
    recorded = rf.fitness
    print(f"recorded fitness: {recorded}")
    for dt, rep in reports.items():
        note = ""
        if dt == rf.dt and recorded is not None:
            note = "  (matches record)" if rep.fitness == recorded else "  (DIFFERS from record)"
        print(f"dt={dt:g} s: fitness {rep.fitness!r} verdict {rep.verdict} "
              f"violated {','.join(rep.violated_requirements) or '-'}{note}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drivefalsify",
                                description="Search-based falsification of a cruise controller.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-run progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a campaign from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--output", help="override the config's output_dir")
    r.set_defaults(func=cmd_run)

    lad = sub.add_parser("ladder", help="run a campaign and print the version-ladder table")
    lad.add_argument("--config", required=True)
    lad.add_argument("--output", help="override the config's output_dir")
    lad.set_defaults(func=cmd_ladder)

    s = sub.add_parser("simulate", help="simulate one concrete scenario")
    s.add_argument("--version", required=True)
    s.add_argument("--sequence", required=True, help="TS1..TS6 or a .seq file")
    s.add_argument("--param", action="append", default=[], metavar="NAME=VALUE")
    s.add_argument("--dt", type=float, default=0.001)
    s.add_argument("--output", help="directory for inputs.csv, outputs.csv and report.json")
    s.set_defaults(func=cmd_simulate)

    rp = sub.add_parser("replay", help="re-run a stored falsifying candidate")
    rp.add_argument("file")
    rp.add_argument("--dt", type=float, help="also replay at this step size")
    rp.add_argument("--compare-dt", action="store_true",
                    help="also replay at the other of 1 ms / 10 ms")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        code = exit_code_for(exc)
        print(f"drivefalsify: error: {exc}", file=sys.stderr)
        if code == 1:
            raise
        return code


if __name__ == "__main__":
    sys.exit(main())

"""Campaign orchestration: search runs over (version, sequence, seed) cells,
reports, trace dumps and the version-ladder table."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .closedloop import INPUT_SIGNALS, InputRangeError
from .controller import ControllerConfig, config_for_version, requirements_for_version, version_ids
from .monitor import FitnessReport, requirement_assessments, trace_fitness
from .plant import IntegrationError
from .search import (AnnealingSchedule, Evaluator, ReplayFile, SearchResult,
                     simulated_annealing, uniform_random_search)
from .testlang import (REQUIREMENT_IDS, SEQUENCE_IDS, DSLError, ParameterError, load_assessment,
                       load_sequence, resolve_values)
from .trace import Trace

WORKERS_ENV = "DRIVEFALSIFY_WORKERS"
DEFAULT_SEEDS = tuple(range(1, 11))
ALGORITHMS = ("random", "sa", "random+sa")

EXIT_OK, EXIT_CONFIG, EXIT_PARSE, EXIT_PLANT, EXIT_IO = 0, 2, 3, 4, 5

# version at which each shipped sequence joins the ladder
SEQUENCE_SINCE = {"TS1": "1.0", "TS2": "3.1", "TS3": "3.2", "TS4": "4.0", "TS5": "7.4", "TS6": "7.5"}

PASS_MARK, FAIL_MARK, NOT_TESTED = "✓", "✗", "N.T."


class ConfigError(ValueError):
    pass


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, ParameterError, KeyError)):
        return EXIT_CONFIG
    if isinstance(exc, DSLError):
        return EXIT_PARSE
    if isinstance(exc, (IntegrationError, InputRangeError)):
        return EXIT_PLANT
    if isinstance(exc, OSError):
        return EXIT_IO
    cause = exc.__cause__
    if cause is not None and cause is not exc:
        return exit_code_for(cause)
    return 1


def _vkey(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split("."))


def sequences_for_version(version: str) -> list[str]:
    return [s for s in SEQUENCE_IDS if _vkey(SEQUENCE_SINCE[s]) <= _vkey(version)]


# ------------------------------------------------------------------ config

@dataclass
class CampaignConfig:
    versions: list = field(default_factory=lambda: ["7.5"])
    sequences: list | str = "available"  # ids / paths, or "available" per version
    requirements: list | None = None     # None: per-version default
    assessments: dict | None = None      # name -> .ta path, replaces requirements
    controller: dict | None = None       # inline config (single-version campaigns)
    overrides: dict = field(default_factory=dict)
    algorithm: str = "random+sa"
    budget: int = 20
    sa_budget: int = 50
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    dt: float = 0.001
    duration: float | None = None
    output_dir: str = "campaign_out"
    schedule: dict = field(default_factory=dict)
    check_invariants: bool = False
    dump_traces: bool = True
    name: str = "campaign"
    base_dir: str = field(default=".", repr=False)

    def __post_init__(self):
        if isinstance(self.versions, str):
            self.versions = version_ids() if self.versions == "all" else [self.versions]
        self.validate()

    def validate(self) -> None:
        if not self.versions:
            raise ConfigError("no controller versions given")
        if self.controller is None:
            known = set(version_ids())
            unknown = [v for v in self.versions if v not in known]
            if unknown:
                raise ConfigError(f"unknown version(s): {', '.join(unknown)}")
        elif len(self.versions) != 1:
            raise ConfigError("an inline controller config needs exactly one version label")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {', '.join(ALGORITHMS)}")
        if int(self.budget) < 1 or (self.algorithm != "random" and int(self.sa_budget) < 1):
            raise ConfigError("budget must be >= 1")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative integers")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.requirements is not None:
            bad = [r for r in self.requirements if r not in REQUIREMENT_IDS]
            if bad:
                raise ConfigError(f"unknown requirement(s): {', '.join(bad)}")
        if isinstance(self.sequences, str) and self.sequences != "available":
            self.sequences = [self.sequences]
        if not isinstance(self.sequences, str):
            if not self.sequences:
                raise ConfigError("no sequences given")
            for s in self.sequences:
                if s not in SEQUENCE_IDS and not self._path(s).is_file():
                    raise ConfigError(f"sequence file not found: {s}")
        for p in (self.assessments or {}).values():
            if not self._path(p).is_file():
                raise ConfigError(f"assessment file not found: {p}")
        try:
            AnnealingSchedule(**self.schedule)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad schedule: {exc}") from exc

    def _path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "CampaignConfig":
        d = dict(d)
        if "version" in d:
            if "versions" in d:
                raise ConfigError("give either 'version' or 'versions'")
            d["versions"] = [d.pop("version")]
        if "sequence" in d:
            if "sequences" in d:
                raise ConfigError("give either 'sequence' or 'sequences'")
            d["sequences"] = [d.pop("sequence")]
        known = {f for f in cls.__dataclass_fields__ if f != "base_dir"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(extra))}")
        return cls(**d, base_dir=base_dir)

    @classmethod
    def load(cls, path) -> "CampaignConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(d, base_dir=str(path.parent))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    @property
    def total_budget(self) -> int:
        return {"random": self.budget, "sa": self.sa_budget}.get(self.algorithm, self.budget + self.sa_budget)

    def output_path(self) -> Path:
        return self._path(self.output_dir)

    def cells(self) -> list[dict]:
        out = []
        for v in self.versions:
            seqs = sequences_for_version(v) if self.sequences == "available" else list(self.sequences)
            for s in seqs:
                for seed in self.seeds:
                    out.append({"version": v, "sequence": s, "seed": int(seed)})
        return out


# ------------------------------------------------------------------ cells

class InvariantMonitor:
    """Counts samples breaking throttle*brake = 0 or the 5% throttle floor."""

    def __init__(self, mutex: bool, floor: bool):
        self.mutex, self.floor = mutex, floor
        self.traces = 0
        self.mutex_violations = 0
        self.floor_violations = 0

    def __call__(self, tr: Trace) -> None:
        self.traces += 1
        thr, brk = tr["throttle"], tr["brake"]
        if self.mutex:
            self.mutex_violations += int(np.count_nonzero(thr * brk != 0.0))
        if self.floor:
            self.floor_violations += int(np.count_nonzero((thr > 0.0) & (thr < 5.0)))

    def to_dict(self) -> dict:
        return {"traces": self.traces, "mutex_violations": self.mutex_violations,
                "floor_violations": self.floor_violations}


def _controller(cfg: CampaignConfig, version: str) -> ControllerConfig:
    if cfg.controller is not None:
        base = ControllerConfig.from_dict(dict(cfg.controller))
        return ControllerConfig.from_dict({**base.to_dict(), **cfg.overrides}) if cfg.overrides else base
    return config_for_version(version, dict(cfg.overrides))


def _requirements(cfg: CampaignConfig, version: str) -> tuple[str, ...]:
    if cfg.assessments:
        return tuple(cfg.assessments)
    if cfg.requirements is not None:
        return tuple(cfg.requirements)
    if cfg.controller is not None and version not in version_ids():
        return REQUIREMENT_IDS
    return requirements_for_version(version)


def _assessments(cfg: CampaignConfig, version: str) -> dict:
    if cfg.assessments:
        return {k: load_assessment(str(cfg._path(p))) for k, p in cfg.assessments.items()}
    return requirement_assessments(_requirements(cfg, version))


def _load_seq(cfg: CampaignConfig, seq: str):
    block = load_sequence(seq if seq in SEQUENCE_IDS else str(cfg._path(seq)))
    if cfg.duration is not None and block.duration is not None \
            and not math.isclose(cfg.duration, block.duration):
        raise ConfigError(f"{seq} is a {block.duration:g} s scenario, config asks for {cfg.duration:g} s")
    return block


def run_cell(cfg: CampaignConfig, cell: dict) -> dict:
    """One (version, sequence, seed) search; returns plain data."""
    version, seed = cell["version"], cell["seed"]
    ctrl = _controller(cfg, version)
    monitor = InvariantMonitor(ctrl.mutual_exclusion, ctrl.throttle_floor_enabled) \
        if cfg.check_invariants else None
    ev = Evaluator(_load_seq(cfg, cell["sequence"]), ctrl, _assessments(cfg, version),
                   dt=cfg.dt, trace_hook=monitor)
    schedule = AnnealingSchedule(**cfg.schedule)
    results: list[SearchResult] = []
    if cfg.algorithm in ("random", "random+sa"):
        results.append(uniform_random_search(ev.space, ev, cfg.budget, seed))
    if cfg.algorithm == "sa" or (cfg.algorithm == "random+sa" and not results[-1].falsified):
        results.append(simulated_annealing(ev.space, ev, cfg.sa_budget, seed, schedule))
    return {"cell": cell, "results": results,
            "invariants": monitor.to_dict() if monitor else None}


def _run_cell_star(args):
    return run_cell(*args)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


# ------------------------------------------------------------------ report

@dataclass
class RunRecord:
    version: str
    sequence: str
    seed: int
    requirements: tuple
    searches: list
    invariants: dict | None = None
    replay_file: str | None = None
    replay_fitness: float | None = None
    trace_files: dict | None = None

    @property
    def falsification(self):
        for r in self.searches:
            if r.falsified:
                return r.outcome
        return None

    @property
    def falsified(self) -> bool:
        return self.falsification is not None

    @property
    def iterations(self) -> int:
        """Evaluations spent until the verdict, across chained searches."""
        return sum(r.iterations_used for r in self.searches)

    @property
    def violated_requirements(self) -> tuple:
        f = self.falsification
        return tuple(f.report.violated_requirements) if f else ()

    @property
    def wall_time(self) -> float:
        return sum(r.wall_time for r in self.searches)

    def to_dict(self) -> dict:
        f = self.falsification
        return {
            "version": self.version,
            "sequence": self.sequence,
            "seed": self.seed,
            "requirements": list(self.requirements),
            "outcome": "falsified" if f else "NFF",
            "iterations": self.iterations,
            "violated_requirements": list(self.violated_requirements),
            "fitness": f.report.fitness if f else _finite(min((r.best_fitness for r in self.searches),
                                                               default=math.inf)),
            "replay_file": self.replay_file,
            "replay_fitness": self.replay_fitness,
            "trace_files": self.trace_files,
            "invariants": self.invariants,
            "searches": [r.to_dict() for r in self.searches],
        }


def _finite(x):
    return x if math.isfinite(x) else None


@dataclass
class CampaignReport:
    config: CampaignConfig
    runs: list

    def summary(self) -> list[dict]:
        groups: dict[tuple, list[RunRecord]] = {}
        for r in self.runs:
            groups.setdefault((r.version, r.sequence), []).append(r)
        rows = []
        for (v, s), rs in groups.items():
            its = [r.iterations for r in rs]
            rows.append({
                "version": v, "sequence": s, "seeds": len(rs),
                "falsified": sum(r.falsified for r in rs),
                "iterations_mean": statistics.fmean(its), "iterations_min": min(its),
                "iterations_max": max(its),
                "violated_requirements": sorted({q for r in rs for q in r.violated_requirements}),
            })
        return rows

    def ladder_rows(self) -> list[dict]:
        return ladder_rows(self.runs, self.config)

    @property
    def invariant_violations(self) -> int:
        return sum(r.invariants["mutex_violations"] + r.invariants["floor_violations"]
                   for r in self.runs if r.invariants)

    def to_dict(self) -> dict:
        return {
            "name": self.config.name,
            "config": self.config.to_dict(),
            "runs": [r.to_dict() for r in self.runs],
            "summary": self.summary(),
            "ladder": self.ladder_rows(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    def metadata(self, started: str, elapsed: float) -> dict:
        groups: dict[tuple, list[float]] = {}
        for r in self.runs:
            groups.setdefault((r.version, r.sequence), []).append(r.wall_time)
        return {
            "started_utc": started,
            "elapsed_s": elapsed,
            "workers": worker_count(),
            "python": platform.python_version(),
            "platform": platform.platform(),
            "runs": [{"version": r.version, "sequence": r.sequence, "seed": r.seed,
                      "wall_time_s": r.wall_time} for r in self.runs],
            "wall_time_s": [{"version": v, "sequence": s, "mean": statistics.fmean(ts),
                             "min": min(ts), "max": max(ts)} for (v, s), ts in groups.items()],
        }


def _seq_label(seq: str) -> str:
    return seq[2:] if seq in SEQUENCE_IDS else Path(seq).stem


def ladder_rows(runs: list[RunRecord], cfg: CampaignConfig | None = None) -> list[dict]:
    """One row per (version, sequence).

    ``#IT`` is the median evaluations-to-failure over seeds, with NFF seeds
    counted as infinite; when at least half the seeds end NFF it reads
    ``>budget``.
    """
    groups: dict[tuple, list[RunRecord]] = {}
    for r in runs:
        groups.setdefault((r.version, r.sequence), []).append(r)
    rows = []
    for (v, s), rs in groups.items():
        its = sorted(r.iterations if r.falsified else math.inf for r in rs)
        med = its[(len(its) - 1) // 2]
        budget = cfg.total_budget if cfg is not None else max(sum(x.budget for x in r.searches) for r in rs)
        row = {"ID": v, "TS#": _seq_label(s),
               "#IT": str(med) if math.isfinite(med) else f">{budget}",
               "falsified": f"{sum(r.falsified for r in rs)}/{len(rs)}"}
        checked = set(rs[0].requirements)
        for q in REQUIREMENT_IDS:
            if q not in checked:
                row[q] = NOT_TESTED
            else:
                row[q] = FAIL_MARK if any(q in r.violated_requirements for r in rs) else PASS_MARK
        rows.append(row)
    return rows


LADDER_COLUMNS = ("ID", "TS#", "#IT", "F1", "D1", "D2", "D3", "falsified")


def ladder_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=LADDER_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r[k] for k in LADDER_COLUMNS})
    return buf.getvalue()


def ladder_text(rows: list[dict]) -> str:
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) if rows else len(c) for c in LADDER_COLUMNS}
    line = lambda vals: "  ".join(str(v).ljust(widths[c]) for c, v in zip(LADDER_COLUMNS, vals)).rstrip()  # noqa: E731
    out = [line(LADDER_COLUMNS), line("-" * widths[c] for c in LADDER_COLUMNS)]
    out += [line(r[c] for c in LADDER_COLUMNS) for r in rows]
    return "\n".join(out) + "\n"


def summary_text(report: CampaignReport) -> str:
    lines = [f"campaign {report.config.name}: {len(report.runs)} runs, "
             f"{sum(r.falsified for r in report.runs)} falsified", ""]
    for s in report.summary():
        viol = ",".join(s["violated_requirements"]) or "-"
        lines.append(f"{s['version']:>5} {s['sequence']:<6} falsified {s['falsified']}/{s['seeds']}  "
                     f"iterations mean {s['iterations_mean']:.1f} min {s['iterations_min']} "
                     f"max {s['iterations_max']}  violated {viol}")
    if any(r.invariants for r in report.runs):
        lines.append("")
        lines.append(f"invariant violations (mutex + floor): {report.invariant_violations}")
    lines += ["", ladder_text(report.ladder_rows())]
    return "\n".join(lines)


# ------------------------------------------------------------------ running

def split_trace(tr: Trace, seq) -> tuple[Trace, Trace]:
    """Inputs (sequence-assigned signals) and everything the loop produced."""
    inputs = [n for n in tr.names if n in seq.signals or n in INPUT_SIGNALS]
    outputs = [n for n in tr.names if n not in inputs]
    return tr.select(inputs), tr.select(outputs)


def _dump(cfg: CampaignConfig, rec: RunRecord, out: Path) -> None:
    f = rec.falsification
    ctrl = _controller(cfg, rec.version)
    seq = _load_seq(cfg, rec.sequence)
    ev = Evaluator(seq, ctrl, _assessments(cfg, rec.version), dt=cfg.dt)
    tr = ev.trace(f.candidate.values)
    rep = trace_fitness(ev.assessments, tr)
    rec.replay_fitness = rep.fitness
    seq_id = rec.sequence if rec.sequence in SEQUENCE_IDS else Path(rec.sequence).stem
    stem = f"v{rec.version}_{seq_id}_seed{rec.seed}"
    rf = ReplayFile(sequence=rec.sequence if rec.sequence in SEQUENCE_IDS else str(cfg._path(rec.sequence).resolve()),
                    parameters=f.candidate.to_dict(),
                    version=rec.version if cfg.controller is None else None,
                    controller=ctrl.to_dict() if (cfg.controller is not None or cfg.overrides) else None,
                    requirements=rec.requirements, dt=cfg.dt, seed=rec.seed, fitness=f.report.fitness)
    (out / "replays").mkdir(parents=True, exist_ok=True)
    rf.write(out / "replays" / f"{stem}.replay.json")
    rec.replay_file = f"replays/{stem}.replay.json"
    if cfg.dump_traces:
        (out / "traces").mkdir(parents=True, exist_ok=True)
        ins, outs = split_trace(tr, seq)
        ins.to_csv(out / "traces" / f"{stem}_inputs.csv")
        outs.to_csv(out / "traces" / f"{stem}_outputs.csv")
        rec.trace_files = {"inputs": f"traces/{stem}_inputs.csv", "outputs": f"traces/{stem}_outputs.csv"}


def run_campaign(cfg: CampaignConfig, write: bool = True, progress=None) -> CampaignReport:
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    cells = cfg.cells()
    # parse everything up front so bad files fail before any simulation
    for s in {c["sequence"] for c in cells}:
        _load_seq(cfg, s)
    for v in cfg.versions:
        _controller(cfg, v)
        _assessments(cfg, v)
    workers = worker_count()
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_run_cell_star, [(cfg, c) for c in cells]))
    else:
        raw = []
        for c in cells:
            raw.append(run_cell(cfg, c))
            if progress:
                progress(c, raw[-1])
    runs = [RunRecord(x["cell"]["version"], x["cell"]["sequence"], x["cell"]["seed"],
                      _requirements(cfg, x["cell"]["version"]), x["results"], x["invariants"])
            for x in raw]
    report = CampaignReport(cfg, runs)
    out = cfg.output_path()
    if write:
        out.mkdir(parents=True, exist_ok=True)
    for rec in runs:
        if rec.falsified:
            if write:
                _dump(cfg, rec, out)
            else:
                f = rec.falsification
                rec.replay_fitness = Evaluator(_load_seq(cfg, rec.sequence), _controller(cfg, rec.version),
                                               _assessments(cfg, rec.version), dt=cfg.dt)(f.candidate.values).fitness
    if write:
        (out / "report.json").write_text(report.to_json(), encoding="utf-8")
        (out / "summary.txt").write_text(summary_text(report), encoding="utf-8")
        rows = report.ladder_rows()
        (out / "ladder.csv").write_text(ladder_csv(rows), encoding="utf-8")
        (out / "ladder.txt").write_text(ladder_text(rows), encoding="utf-8")
        meta = report.metadata(started, time.perf_counter() - t0)
        (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return report


def ladder(cfg: CampaignConfig, write: bool = True, progress=None) -> tuple[CampaignReport, list[dict]]:
    report = run_campaign(cfg, write=write, progress=progress)
    return report, report.ladder_rows()


# ------------------------------------------------------------------ single run

def simulate_once(version: str | None, sequence: str, candidate, out_dir=None, dt: float = 0.001,
                  controller: ControllerConfig | None = None, requirements=None) -> dict:
    """Run one concrete scenario; optionally write input/output CSVs and the report."""
    seq = load_sequence(sequence)
    values = resolve_values(seq, candidate)  # range check before simulating
    if controller is None:
        if version is None:
            raise ConfigError("need a version or a controller config")
        try:
            controller = config_for_version(version)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from exc
    reqs = tuple(requirements) if requirements else (requirements_for_version(version) if version
                                                     else REQUIREMENT_IDS)
    ev = Evaluator(seq, controller, requirement_assessments(reqs), dt=dt)
    tr = ev.trace(values)
    rep: FitnessReport = trace_fitness(ev.assessments, tr)
    result = {"trace": tr, "report": rep, "files": {}}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ins, outs = split_trace(tr, seq)
        ins.to_csv(out / "inputs.csv")
        outs.to_csv(out / "outputs.csv")
        (out / "report.json").write_text(json.dumps(
            {"sequence": sequence, "version": version, "dt": dt, "parameters": values,
             "report": rep.to_dict()}, indent=2) + "\n", encoding="utf-8")
        result["files"] = {k: str(out / f"{k}.csv") for k in ("inputs", "outputs")}
        result["files"]["report"] = str(out / "report.json")
    return result


__all__ = [
    "ALGORITHMS", "CampaignConfig", "CampaignReport", "ConfigError", "DEFAULT_SEEDS",
    "EXIT_CONFIG", "EXIT_IO", "EXIT_OK", "EXIT_PARSE", "EXIT_PLANT", "InvariantMonitor", "RunRecord",
    "WORKERS_ENV", "exit_code_for", "ladder", "ladder_csv", "ladder_rows", "ladder_text",
    "run_campaign", "run_cell", "sequences_for_version", "simulate_once", "split_trace", "summary_text",
]

"""Falsification drivers: uniform random sampling and simulated annealing.

Both drivers take an evaluator mapping a candidate to a ``FitnessReport`` and
stop at the first strictly negative fitness. Randomness comes from numpy's
PCG64 so that a seed fixes the whole run.
"""

from __future__ import annotations

import json
import math
import time
from collections.abc import Callable, Mapping
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .closedloop import run_closed_loop
from .controller import ControllerConfig, config_for_version, requirements_for_version
from .monitor import FitnessReport, requirement_assessments, trace_fitness
from .plant import PlantParams
from .testlang import (SEQUENCE_IDS, Block, SearchParameter, instantiate, list_parameters,
                       load_sequence, resolve_values)
from .trace import Trace

DEFAULT_RANDOM_BUDGET = 20
DEFAULT_SA_BUDGET = 50


class SearchError(RuntimeError):
    """An evaluation raised; the offending candidate is attached."""

    def __init__(self, candidate: "Candidate", iteration: int, cause: BaseException):
        super().__init__(f"evaluation {iteration} failed for {candidate.values}: {cause}")
        self.candidate = candidate
        self.iteration = iteration


@dataclass(frozen=True)
class Candidate:
    values: dict

    def __post_init__(self):
        object.__setattr__(self, "values", {k: float(v) for k, v in self.values.items()})

    def within(self, space) -> bool:
        return all(p.min <= self.values[p.name] <= p.max for p in space)

    def to_dict(self) -> dict:
        return dict(self.values)


@dataclass
class Falsification:
    candidate: Candidate
    report: FitnessReport
    iteration: int  # 1-based index of the evaluation that revealed the failure


@dataclass
class SearchResult:
    algorithm: str
    seed: int
    budget: int
    outcome: Falsification | None
    iterations_used: int
    fitness_history: list
    candidates: list
    wall_time: float = 0.0
    best_index: int = -1

    @property
    def falsified(self) -> bool:
        return self.outcome is not None

    @property
    def nff(self) -> bool:
        return self.outcome is None

    @property
    def best_candidate(self) -> Candidate | None:
        return self.candidates[self.best_index] if self.best_index >= 0 else None

    @property
    def best_fitness(self) -> float:
        return self.fitness_history[self.best_index] if self.best_index >= 0 else math.inf

    def to_dict(self, wall_time: bool = False) -> dict:
        d = {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "budget": self.budget,
            "outcome": "falsified" if self.falsified else "NFF",
            "iterations_used": self.iterations_used,
            "fitness_history": [_finite_or_none(f) for f in self.fitness_history],
            "candidates": [c.to_dict() for c in self.candidates],
            "best_index": self.best_index,
        }
        if self.outcome is not None:
            d["falsification"] = {
                "iteration": self.outcome.iteration,
                "candidate": self.outcome.candidate.to_dict(),
                "report": self.outcome.report.to_dict(),
            }
        if wall_time:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _finite_or_none(x):
    return x if math.isfinite(x) else None


def _best(history) -> int:
    if not history:
        return -1
    return int(min(range(len(history)), key=lambda i: (history[i], i)))


# ------------------------------------------------------------------ evaluator

@dataclass
class Evaluator:
    """instantiate -> closed-loop simulation -> fitness, for one sequence.

    ``trace_hook`` (if given) sees every simulated trace; campaigns use it to
    check invariants on all evaluated runs.
    """

    sequence: Block
    controller: ControllerConfig
    assessments: dict
    plant: PlantParams | None = None
    dt: float | None = None
    trace_hook: Callable | None = field(default=None, repr=False)

    @classmethod
    def for_version(cls, version: str, sequence: str | Block, requirements=None,
                    overrides: Mapping | None = None, dt: float | None = None, **kw) -> "Evaluator":
        seq = load_sequence(sequence) if isinstance(sequence, str) else sequence
        reqs = tuple(requirements) if requirements else requirements_for_version(version)
        return cls(seq, config_for_version(version, dict(overrides or {})),
                   requirement_assessments(reqs), dt=dt, **kw)

    @property
    def space(self) -> list[SearchParameter]:
        return list_parameters(self.sequence)

    def trace(self, candidate) -> Trace:
        concrete = instantiate(self.sequence, candidate)
        return run_closed_loop(concrete, self.controller, plant=self.plant, dt=self.dt)

    def __call__(self, candidate) -> FitnessReport:
        tr = self.trace(candidate)
        if self.trace_hook is not None:
            self.trace_hook(tr)
        return trace_fitness(self.assessments, tr)


def _space_of(space) -> list[SearchParameter]:
    if isinstance(space, Block):
        return list_parameters(space)
    return list(space)


def uniform_draw(space, rng: np.random.Generator) -> Candidate:
    return Candidate({p.name: float(rng.uniform(p.min, p.max)) if p.max > p.min else p.min
                      for p in space})


def _evaluate(evaluator, cand: Candidate, iteration: int) -> FitnessReport:
    try:
        return evaluator(cand)
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise SearchError(cand, iteration, exc) from exc


# ------------------------------------------------------------------ random

def uniform_random_search(space, evaluator, budget: int = DEFAULT_RANDOM_BUDGET, seed: int = 0,
                          workers: int = 1) -> SearchResult:
    """Sample candidates independently and uniformly until one fails.

    With ``workers > 1`` candidates are evaluated in parallel batches; the
    reported falsification is still the lowest-index failing one, so the
    result equals the sequential run.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    space = _space_of(space)
    rng = np.random.Generator(np.random.PCG64(seed))
    # draws do not depend on outcomes, so the whole stream can be fixed up front
    draws = [uniform_draw(space, rng) for _ in range(budget)]
    t0 = time.perf_counter()
    history: list[float] = []
    outcome = None
    if workers <= 1:
        for i, cand in enumerate(draws):
            rep = _evaluate(evaluator, cand, i + 1)
            history.append(rep.fitness)
            if rep.fitness < 0:
                outcome = Falsification(cand, rep, i + 1)
                break
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for start in range(0, budget, workers):
                batch = draws[start:start + workers]
                futs = [pool.submit(evaluator, c) for c in batch]
                reps = []
                for j, f in enumerate(futs):
                    try:
                        reps.append(f.result())
                    except Exception as exc:  # noqa: BLE001
                        raise SearchError(batch[j], start + j + 1, exc) from exc
                for j, rep in enumerate(reps):
                    history.append(rep.fitness)
                    if rep.fitness < 0:
                        outcome = Falsification(batch[j], rep, start + j + 1)
                        break
                if outcome is not None:
                    break
    used = len(history)
    return SearchResult("random", seed, budget, outcome, used, history, draws[:used],
                        time.perf_counter() - t0, _best(history))


# ------------------------------------------------------------------ annealing

@dataclass(frozen=True)
class AnnealingSchedule:
    t0: float | None = None  # None: magnitude of the first fitness
    alpha: float = 0.95
    sigma_fraction: float = 0.10

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if self.sigma_fraction <= 0:
            raise ValueError("sigma_fraction must be positive")
        if self.t0 is not None and not self.t0 > 0:
            raise ValueError("t0 must be positive")

    def initial_temperature(self, f0: float) -> float:
        if self.t0 is not None:
            return self.t0
        return abs(f0) if math.isfinite(f0) and f0 != 0 else 1.0

    def temperature(self, t0: float, k: int) -> float:
        return t0 * self.alpha ** k


def reflect(x: float, lo: float, hi: float) -> float:
    """Fold ``x`` back into [lo, hi] by mirroring at the bounds."""
    if hi <= lo:
        return lo
    w = hi - lo
    y = math.fmod(x - lo, 2 * w)
    if y < 0:
        y += 2 * w
    y = w - abs(w - y)
    return min(max(lo + y, lo), hi)


def neighbor(cand: Candidate, space, rng: np.random.Generator, sigma_fraction: float) -> Candidate:
    vals = {}
    for p in space:
        step = rng.normal(0.0, sigma_fraction * (p.max - p.min))
        vals[p.name] = reflect(cand.values[p.name] + step, p.min, p.max)
    return Candidate(vals)


def accept_probability(delta: float, temperature: float) -> float:
    """Metropolis rule. Improvements and moves across a vacuous plateau
    (``inf - inf``) are always taken."""
    if math.isnan(delta) or delta < 0:
        return 1.0
    if temperature <= 0:
        return 0.0
    return math.exp(-delta / temperature)


def simulated_annealing(space, evaluator, budget: int = DEFAULT_SA_BUDGET, seed: int = 0,
                        schedule: AnnealingSchedule | None = None) -> SearchResult:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    space = _space_of(space)
    schedule = schedule or AnnealingSchedule()
    rng = np.random.Generator(np.random.PCG64(seed))
    t_start = time.perf_counter()

    cur = uniform_draw(space, rng)
    rep = _evaluate(evaluator, cur, 1)
    history, cands = [rep.fitness], [cur]
    outcome = Falsification(cur, rep, 1) if rep.fitness < 0 else None
    f_cur = rep.fitness
    temp0 = schedule.initial_temperature(f_cur)
    k = 1
    while outcome is None and k < budget:
        cand = neighbor(cur, space, rng, schedule.sigma_fraction)
        rep = _evaluate(evaluator, cand, k + 1)
        history.append(rep.fitness)
        cands.append(cand)
        if rep.fitness < 0:
            outcome = Falsification(cand, rep, k + 1)
            break
        p = accept_probability(rep.fitness - f_cur, schedule.temperature(temp0, k))
        if p >= 1.0 or rng.random() < p:
            cur, f_cur = cand, rep.fitness
        k += 1
    return SearchResult("sa", seed, budget, outcome, len(history), history, cands,
                        time.perf_counter() - t_start, _best(history))


def random_then_annealing(space, evaluator, seed: int = 0, random_budget: int = DEFAULT_RANDOM_BUDGET,
                          sa_budget: int = DEFAULT_SA_BUDGET, schedule: AnnealingSchedule | None = None,
                          workers: int = 1) -> list[SearchResult]:
    """Uniform random first; annealing only when random search ends NFF."""
    first = uniform_random_search(space, evaluator, random_budget, seed, workers)
    if first.falsified or sa_budget <= 0:
        return [first]
    return [first, simulated_annealing(space, evaluator, sa_budget, seed, schedule)]


# ------------------------------------------------------------------ replay

def replay(candidate, sequence: Block, controller: ControllerConfig, assessments,
           dt: float | None = None, plant: PlantParams | None = None) -> FitnessReport:
    """Re-run one evaluation from scratch."""
    if isinstance(assessments, Block):
        assessments = {assessments.name: assessments}
    resolve_values(sequence, candidate)
    return Evaluator(sequence, controller, dict(assessments), plant=plant, dt=dt)(candidate)


@dataclass
class ReplayFile:
    sequence: str  # shipped id or a path
    parameters: dict
    version: str | None = None
    controller: dict | None = None  # full config, takes precedence over version
    requirements: tuple = ("F1", "D1", "D2", "D3")
    dt: float = 0.001
    seed: int | None = None
    fitness: float | None = None

    def config(self) -> ControllerConfig:
        if self.controller is not None:
            return ControllerConfig.from_dict(dict(self.controller))
        if self.version is None:
            raise ValueError("replay file names neither a version nor a controller config")
        return config_for_version(self.version)

    def load_sequence(self, base: Path | None = None) -> Block:
        if self.sequence in SEQUENCE_IDS:
            return load_sequence(self.sequence)
        path = Path(self.sequence)
        if not path.is_absolute() and base is not None:
            path = base / path
        return load_sequence(str(path))

    def to_dict(self) -> dict:
        return {
            "sequence": self.sequence,
            "parameters": dict(self.parameters),
            "version": self.version,
            "controller": self.controller,
            "requirements": list(self.requirements),
            "dt": self.dt,
            "seed": self.seed,
            "fitness": _finite_or_none(self.fitness) if self.fitness is not None else None,
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "ReplayFile":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        missing = [k for k in ("sequence", "parameters") if k not in d]
        if missing:
            raise ValueError(f"replay file lacks {', '.join(missing)}")
        return cls(sequence=d["sequence"], parameters=dict(d["parameters"]),
                   version=d.get("version"), controller=d.get("controller"),
                   requirements=tuple(d.get("requirements") or ("F1", "D1", "D2", "D3")),
                   dt=float(d.get("dt", 0.001)), seed=d.get("seed"), fitness=d.get("fitness"))


def replay_file(path, dts=None) -> dict[float, FitnessReport]:
    """Replay a stored candidate at its recorded step size and any extra ``dts``."""
    rf = ReplayFile.read(path)
    seq = rf.load_sequence(Path(path).parent)
    cfg = rf.config()
    assessments = requirement_assessments(rf.requirements)
    out = {}
    for dt in [rf.dt, *(dts or ())]:
        if dt not in out:
            out[dt] = replay(rf.parameters, seq, cfg, assessments, dt=dt)
    return out

"""Signed robustness of verify statements and trace-level fitness."""

from __future__ import annotations

import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .testlang.ast import BOOL, Block, Changed, Expr, Sig, walk_expr
from .testlang.machine import assessment_kernel, compile_block, compile_expr, eval_single
from .testlang.parser import parse_expr
from .testlang.sequences import REQUIREMENT_IDS, _trace_matrix, load_assessment
from .trace import Trace

VACUOUS = "vacuous pass"


@dataclass(frozen=True)
class RobustnessValue:
    value: float

    @property
    def passed(self) -> bool:
        return self.value >= 0.0

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"


def robustness(expr: Expr | str, sample: Mapping[str, float], t: float = 0.0) -> RobustnessValue:
    """Robustness of a boolean expression at one sample.

    ``changed()`` has no history here and is always false.
    """
    if isinstance(expr, str):
        expr = parse_expr(expr, list(sample))
    if expr.kind != BOOL:
        raise TypeError("robustness needs a boolean expression")
    names = []
    for node in walk_expr(expr):
        if isinstance(node, (Sig, Changed)) and node.name not in names:
            names.append(node.name)
    missing = [n for n in names if n not in sample]
    if missing:
        raise KeyError(f"sample lacks signal(s) {', '.join(missing)}")
    slot_map = {n: i for i, n in enumerate(names)}
    packed, prog = compile_expr(expr, slot_map, robust=True)
    sig = np.array([float(sample[n]) for n in names]) if names else np.zeros(1)
    return RobustnessValue(float(eval_single(*packed, prog, sig, float(t))))


@dataclass
class RequirementResult:
    name: str
    min_robustness: float
    argmin_time: float | None
    first_violation_time: float | None
    evaluations: int

    @property
    def vacuous(self) -> bool:
        return self.evaluations == 0

    @property
    def violated(self) -> bool:
        return self.min_robustness < 0.0


def assess(assessment: Block, trace: Trace) -> RequirementResult:
    """Minimum robustness of one assessment over a trace."""
    if assessment.is_sequence:
        raise TypeError(f"{assessment.name} is a test sequence, not an assessment")
    data, slot_map = _trace_matrix(assessment, trace)
    cb = compile_block(assessment, slot_map)
    stats = np.zeros(4)
    assessment_kernel(*cb.packed, data, trace.dt, stats)
    n_eval = int(stats[3])
    best_k = int(stats[1])
    bad_k = int(stats[2])
    return RequirementResult(
        name=assessment.name,
        min_robustness=float(stats[0]) if n_eval else math.inf,
        argmin_time=best_k * trace.dt if best_k >= 0 else None,
        first_violation_time=bad_k * trace.dt if bad_k >= 0 else None,
        evaluations=n_eval,
    )


def _num(x):
    return None if x is None or not math.isfinite(x) else x


@dataclass
class FitnessReport:
    fitness: float
    first_violation_time: float | None
    violated_requirements: tuple
    per_requirement: dict = field(default_factory=dict)
    argmin_time: dict = field(default_factory=dict)

    @property
    def vacuous(self) -> bool:
        return math.isinf(self.fitness) and self.fitness > 0

    @property
    def verdict(self) -> str:
        if self.fitness < 0:
            return "fail"
        return VACUOUS if self.vacuous else "pass"

    def to_dict(self) -> dict:
        # JSON has no infinity; a requirement that was never checked serializes as null
        return {
            "fitness": _num(self.fitness),
            "verdict": self.verdict,
            "first_violation_time": self.first_violation_time,
            "violated_requirements": list(self.violated_requirements),
            "per_requirement": {k: _num(v) for k, v in self.per_requirement.items()},
            "argmin_time": dict(self.argmin_time),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "FitnessReport":
        inf = lambda x: math.inf if x is None else float(x)  # noqa: E731
        return cls(fitness=inf(d["fitness"]), first_violation_time=d.get("first_violation_time"),
                   violated_requirements=tuple(d.get("violated_requirements", ())),
                   per_requirement={k: inf(v) for k, v in d.get("per_requirement", {}).items()},
                   argmin_time=dict(d.get("argmin_time", {})))


def trace_fitness(assessments, trace: Trace) -> FitnessReport:
    """Combine one or more assessments by raw minimum (no unit normalization)."""
    if isinstance(assessments, Block):
        assessments = [assessments]
    elif isinstance(assessments, Mapping):
        assessments = list(assessments.values())
    results = [assess(a, trace) for a in assessments]
    if not results:
        raise ValueError("no assessments given")
    fitness = min(r.min_robustness for r in results)
    firsts = [r.first_violation_time for r in results if r.first_violation_time is not None]
    return FitnessReport(
        fitness=fitness,
        first_violation_time=min(firsts) if firsts else None,
        violated_requirements=tuple(r.name for r in results if r.violated),
        per_requirement={r.name: r.min_robustness for r in results},
        argmin_time={r.name: r.argmin_time for r in results},
    )


def requirement_assessments(ids=REQUIREMENT_IDS) -> dict[str, Block]:
    return {rid: load_assessment(rid) for rid in ids}

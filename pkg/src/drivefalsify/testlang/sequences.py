"""Instantiation, input generation and step semantics for parsed blocks."""

from __future__ import annotations

import copy
import math
from collections.abc import Mapping
from importlib import resources

import numpy as np

from ..trace import Trace
from .ast import (PARAM_PREFIX, BinOp, Block, Call, Neg, Num, Param, SearchParameter,
                  TestSequenceBlock, map_expr)
from .machine import compile_block, configurations_kernel, generate_kernel
from .parser import check_assignments, parse_block


class ParameterError(ValueError):
    pass


def list_parameters(seq: Block) -> list[SearchParameter]:
    return list(seq.params)


def canonical_name(name: str) -> str:
    return name if name.startswith(PARAM_PREFIX) else PARAM_PREFIX + name


def resolve_values(seq: Block, candidate) -> dict[str, float]:
    """Map a candidate (mapping or object with ``.values``) onto the declared
    parameters, checking presence and range."""
    values = candidate.values if hasattr(candidate, "values") and not isinstance(candidate, Mapping) else candidate
    values = {canonical_name(k): float(v) for k, v in dict(values).items()}
    declared = {p.name for p in seq.params}
    extra = set(values) - declared
    if extra:
        raise ParameterError(f"unknown parameter(s) for {seq.name}: {', '.join(sorted(extra))}")
    out = {}
    for p in seq.params:
        if p.name not in values:
            raise ParameterError(f"missing value for parameter {p.name}")
        v = values[p.name]
        if not (math.isfinite(v) and p.min <= v <= p.max):
            raise ParameterError(f"{p.name}={v} outside [{p.min}, {p.max}]")
        out[p.name] = v
    return out


class ConcreteSequence(TestSequenceBlock):
    """A sequence whose parameters have been replaced by constants."""

    values: dict


def instantiate(seq: Block, candidate) -> ConcreteSequence:
    values = resolve_values(seq, candidate)

    def subst(e):
        return fold(Num(values[e.name]) if isinstance(e, Param) else e)

    out = copy.deepcopy(seq)
    for step in out.walk():
        step.actions = [type(a)(a.signal, map_expr(a.expr, subst), a.line) for a in step.actions]
        step.verifies = [type(v)(map_expr(v.expr, subst), v.scale, v.line) for v in step.verifies]
        step.transitions = [type(tr)(map_expr(tr.condition, subst), tr.target) for tr in step.transitions]
        if step.when is not None:
            step.when = map_expr(step.when, subst)
    out.__class__ = ConcreteSequence
    out.params = []
    out.values = values
    return out


_FOLD_OPS = {"+": lambda a, b: a + b, "-": lambda a, b: a - b, "*": lambda a, b: a * b,
             "/": lambda a, b: a / b if b != 0 else None}
_FOLD_FUNCS = {"abs": abs, "sin": math.sin, "cos": math.cos,
               # match the compiled min/max tie rule
               "min": lambda a, b: b if b < a else a, "max": lambda a, b: b if b > a else a}


def fold(e):
    """Collapse an operator whose operands are all constants (one level)."""
    if isinstance(e, Neg) and isinstance(e.arg, Num):
        return Num(-e.arg.value)
    if isinstance(e, BinOp) and isinstance(e.left, Num) and isinstance(e.right, Num):
        v = _FOLD_OPS[e.op](e.left.value, e.right.value)
        return e if v is None else Num(v)
    if isinstance(e, Call) and all(isinstance(a, Num) for a in e.args):
        return Num(float(_FOLD_FUNCS[e.fn](*(a.value for a in e.args))))
    return e


def n_samples(duration: float, dt: float) -> int:
    return int(round(duration / dt)) + 1


def scenario_duration(seq: Block, duration: float | None) -> float:
    if duration is None:
        if seq.duration is None:
            raise ValueError(f"{seq.name} declares no duration; pass one explicitly")
        return seq.duration
    if seq.duration is not None and not math.isclose(duration, seq.duration):
        raise ValueError(f"{seq.name} is a {seq.duration:g} s scenario, got duration={duration:g}")
    return duration


def generate_input_trace(concrete: Block, duration: float | None = None, dt: float = 0.001,
                         observed: Trace | None = None) -> Trace:
    """Evaluate the sequence sample by sample and return its assigned signals.

    Sequences that observe plant outputs need those outputs in ``observed``;
    the closed-loop runner produces them together with the inputs.
    """
    if concrete.params:
        raise ParameterError(f"{concrete.name} still has parameters; instantiate it first")
    check_assignments(concrete)
    duration = scenario_duration(concrete, duration)
    n = n_samples(duration, dt)
    names = list(concrete.signals) + [o for o in concrete.observed if o not in concrete.signals]
    slot_map = {name: i for i, name in enumerate(names)}
    data = np.zeros((n, len(names)))
    if concrete.observed:
        if observed is None:
            raise ValueError(f"{concrete.name} observes {', '.join(concrete.observed)}; "
                             "pass an observed trace or run it in closed loop")
        if len(observed) < n:
            raise ValueError("observed trace is shorter than the scenario")
        for name in concrete.observed:
            data[:, slot_map[name]] = observed[name][:n]
    cb = compile_block(concrete, slot_map)
    assigned = np.array([slot_map[s] for s in concrete.signals], dtype=np.int64)
    generate_kernel(*cb.packed, data, assigned, dt)
    return Trace(dt, {name: data[:, slot_map[name]].copy() for name in concrete.signals})


def _trace_matrix(block: Block, trace: Trace) -> tuple[np.ndarray, dict]:
    names = list(block.signals) + [o for o in block.observed if o not in block.signals]
    missing = [n for n in names if n not in trace]
    if missing:
        raise KeyError(f"trace lacks signal(s) {', '.join(missing)} needed by {block.name}")
    data = np.ascontiguousarray(np.column_stack([trace[n] for n in names])) if names \
        else np.zeros((len(trace), 0))
    return data, {n: i for i, n in enumerate(names)}


def configurations(block: Block, trace: Trace) -> list[tuple[str, ...]]:
    """Active configuration (root-to-leaf qualified step names) at every sample."""
    if block.params:
        raise ParameterError(f"{block.name} has parameters; instantiate it first")
    data, slot_map = _trace_matrix(block, trace)
    cb = compile_block(block, slot_map)
    leaves = np.empty(len(trace), dtype=np.int64)
    configurations_kernel(*cb.packed, data, trace.dt, leaves)
    cache: dict[int, tuple[str, ...]] = {}
    out = []
    for leaf in leaves:
        leaf = int(leaf)
        if leaf not in cache:
            cache[leaf] = tuple(cb.chain(leaf))
        out.append(cache[leaf])
    return out


def step_semantics(block: Block, trace_prefix: Trace, t: float) -> tuple[str, ...]:
    """Active configuration at time ``t`` given the signals observed so far."""
    k = int(round(t / trace_prefix.dt))
    if not 0 <= k < len(trace_prefix):
        raise ValueError(f"t={t} is outside the supplied trace")
    prefix = Trace(trace_prefix.dt, {n: v[:k + 1] for n, v in trace_prefix.signals.items()})
    return configurations(block, prefix)[k]


# ------------------------------------------------------------------ corpus

SEQUENCE_IDS = ("TS1", "TS2", "TS3", "TS4", "TS5", "TS6")
REQUIREMENT_IDS = ("F1", "D1", "D2", "D3")


def _data_text(kind: str, name: str) -> str:
    ext = "seq" if kind == "sequences" else "ta"
    return resources.files("drivefalsify.data").joinpath(kind, f"{name}.{ext}").read_text(encoding="utf-8")


def load_sequence(name_or_path: str) -> Block:
    """Load a shipped sequence by id (``TS1``..``TS6``) or a file path."""
    if name_or_path in SEQUENCE_IDS:
        return parse_block(_data_text("sequences", name_or_path))
    with open(name_or_path, encoding="utf-8") as fh:
        block = parse_block(fh.read())
    if not block.is_sequence:
        raise ValueError(f"{name_or_path} is not a test sequence")
    return block


def load_assessment(name_or_path: str) -> Block:
    if name_or_path in REQUIREMENT_IDS:
        return parse_block(_data_text("assessments", name_or_path))
    with open(name_or_path, encoding="utf-8") as fh:
        block = parse_block(fh.read())
    if block.is_sequence:
        raise ValueError(f"{name_or_path} is not a test assessment")
    return block


def shipped_sequences() -> dict[str, Block]:
    return {sid: load_sequence(sid) for sid in SEQUENCE_IDS}

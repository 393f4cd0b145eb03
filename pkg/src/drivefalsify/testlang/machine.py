"""Flat-table compilation of test blocks and the compiled step interpreter.

Expressions become postfix programs over a small stack machine. Boolean
programs push 1.0/0.0; robustness programs are emitted in negation normal
form and push signed margins. Steps are numbered depth first with a virtual
root at index 0 whose children are the block's root steps, so that the
active configuration is always ``active[0:levels]`` with ``active[0] == 0``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numba import njit

from .ast import (And, BinOp, Block, BoolLit, Call, Changed, Compare, Elapsed, Expr, Neg, Not,
                  Num, Or, Param, Sig, Time)

(OP_CONST, OP_SIG, OP_PREV, OP_TIME, OP_ET, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_NEG, OP_ABS,
 OP_MIN, OP_MAX, OP_SIN, OP_COS) = range(15)
OP_LE, OP_LT, OP_GE, OP_GT, OP_EQ, OP_NE, OP_AND, OP_OR, OP_NOT = range(20, 29)
OP_RSUB, OP_NEGABSDIFF, OP_ABSDIFF, OP_BOOL2ROB = range(30, 34)

STACK_SIZE = 64

_ARITH = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV}
_FUNCS = {"abs": OP_ABS, "min": OP_MIN, "max": OP_MAX, "sin": OP_SIN, "cos": OP_COS}
_BOOL_CMP = {"<=": OP_LE, "<": OP_LT, ">=": OP_GE, ">": OP_GT, "==": OP_EQ}
# margin op for an atom ``left OP right`` when positive / when negated
_ROB_CMP = {
    "<=": (OP_RSUB, OP_SUB), "<": (OP_RSUB, OP_SUB),
    ">=": (OP_SUB, OP_RSUB), ">": (OP_SUB, OP_RSUB),
    "==": (OP_NEGABSDIFF, OP_ABSDIFF),
}


class Tables(NamedTuple):
    depth: np.ndarray
    child_start: np.ndarray
    child_count: np.ndarray
    children: np.ndarray
    when_parent: np.ndarray
    when_prog: np.ndarray
    trans_start: np.ndarray
    trans_count: np.ndarray
    trans_prog: np.ndarray
    trans_target: np.ndarray
    asg_start: np.ndarray
    asg_count: np.ndarray
    asg_slot: np.ndarray
    asg_prog: np.ndarray
    ver_start: np.ndarray
    ver_count: np.ndarray
    ver_prog: np.ndarray
    ver_scale: np.ndarray
    prog_start: np.ndarray
    prog_len: np.ndarray
    code: np.ndarray
    arg: np.ndarray
    consts: np.ndarray
    max_depth: int


class CompiledBlock:
    """Tables plus the bookkeeping needed to report results by name."""

    def __init__(self, block: Block, tables: Tables, step_names, slot_map, verify_info):
        self.block = block
        self.tables = tables
        self.step_names = step_names  # index -> qualified name; index 0 is the virtual root
        self.slot_map = slot_map
        self.verify_info = verify_info  # global verify index -> (step name, Verify)
        self.packed = pack(tables, len(slot_map))

    def chain(self, leaf: int) -> list[str]:
        """Qualified names of the active steps from the root down to ``leaf``."""
        names = []
        parent = self._parents
        s = leaf
        while s > 0:
            names.append(self.step_names[s])
            s = parent[s]
        return names[::-1]

    @property
    def _parents(self):
        if not hasattr(self, "_parent_cache"):
            tb = self.tables
            par = np.zeros(len(tb.depth), dtype=np.int64)
            for p in range(len(tb.depth)):
                for j in range(tb.child_start[p], tb.child_start[p] + tb.child_count[p]):
                    par[tb.children[j]] = p
            self._parent_cache = par
        return self._parent_cache


class _Emitter:
    def __init__(self, slot_map):
        self.slot_map = slot_map
        self.code: list[int] = []
        self.arg: list[int] = []
        self.consts: list[float] = []
        self._const_idx: dict = {}
        self.prog_start: list[int] = []
        self.prog_len: list[int] = []

    def const(self, value: float) -> int:
        key = (float(value), math.copysign(1.0, value))
        if key not in self._const_idx:
            self._const_idx[key] = len(self.consts)
            self.consts.append(float(value))
        return self._const_idx[key]

    def emit(self, op, a=0):
        self.code.append(op)
        self.arg.append(a)

    def program(self, expr: Expr, step: int, robust: bool) -> int:
        start = len(self.code)
        depth = self._rob(expr, step, False) if robust else self._expr(expr, step)
        if depth > STACK_SIZE:
            raise ValueError("expression too deeply nested")
        self.prog_start.append(start)
        self.prog_len.append(len(self.code) - start)
        return len(self.prog_start) - 1

    def _slot(self, name):
        try:
            return self.slot_map[name]
        except KeyError:
            raise KeyError(f"signal {name!r} has no slot in this evaluation context") from None

    # Each helper returns the stack depth it needs.
    def _expr(self, e, step) -> int:
        if isinstance(e, Num):
            self.emit(OP_CONST, self.const(e.value))
            return 1
        if isinstance(e, BoolLit):
            self.emit(OP_CONST, self.const(1.0 if e.value else 0.0))
            return 1
        if isinstance(e, Sig):
            self.emit(OP_SIG, self._slot(e.name))
            return 1
        if isinstance(e, Param):
            raise ValueError(f"parameter {e.name} must be instantiated before compilation")
        if isinstance(e, Time):
            self.emit(OP_TIME)
            return 1
        if isinstance(e, Elapsed):
            self.emit(OP_ET, step)
            return 1
        if isinstance(e, Changed):
            slot = self._slot(e.name)
            self.emit(OP_SIG, slot)
            self.emit(OP_PREV, slot)
            self.emit(OP_NE)
            return 2
        if isinstance(e, Neg):
            d = self._expr(e.arg, step)
            self.emit(OP_NEG)
            return d
        if isinstance(e, Not):
            d = self._expr(e.arg, step)
            self.emit(OP_NOT)
            return d
        if isinstance(e, Call):
            depth = 0
            for i, a in enumerate(e.args):
                depth = max(depth, i + self._expr(a, step))
            self.emit(_FUNCS[e.fn])
            return depth
        if isinstance(e, (BinOp, Compare, And, Or)):
            dl = self._expr(e.left, step)
            dr = self._expr(e.right, step)
            if isinstance(e, BinOp):
                op = _ARITH[e.op]
            elif isinstance(e, Compare):
                op = _BOOL_CMP[e.op]
            else:
                op = OP_AND if isinstance(e, And) else OP_OR
            self.emit(op)
            return max(dl, dr + 1)
        raise TypeError(f"cannot compile {e!r}")

    def _rob(self, e, step, negated) -> int:
        if isinstance(e, Not):
            return self._rob(e.arg, step, not negated)
        if isinstance(e, (And, Or)):
            # De Morgan: a negated conjunction is a disjunction of negations
            is_min = isinstance(e, And) != negated
            dl = self._rob(e.left, step, negated)
            dr = self._rob(e.right, step, negated)
            self.emit(OP_MIN if is_min else OP_MAX)
            return max(dl, dr + 1)
        if isinstance(e, Compare):
            dl = self._expr(e.left, step)
            dr = self._expr(e.right, step)
            self.emit(_ROB_CMP[e.op][1 if negated else 0])
            return max(dl, dr + 1)
        # Boolean atoms without a magnitude: +inf when true, -inf when false.
        d = self._expr(e, step)
        if negated:
            self.emit(OP_NOT)
        self.emit(OP_BOOL2ROB)
        return d


def compile_expr(expr: Expr, slot_map: dict, robust: bool = False):
    """Compile a single expression; returns (packed tables, program index).

    The tables describe a block with only the virtual root, which is enough
    to evaluate the program with :func:`eval_single`.
    """
    em = _Emitter(slot_map)
    prog = em.program(expr, 0, robust)
    tables = _tables(em, [(0, [], [], [], [], None)], 0)
    return pack(tables, len(slot_map)), prog


def _tables(em: _Emitter, steps, max_depth) -> Tables:
    """``steps``: list of (depth, children, transitions, assigns, verifies(prog, scale), when)."""
    i64 = lambda xs: np.asarray(xs, dtype=np.int64)  # noqa: E731
    child_start, child_count, children = [], [], []
    trans_start, trans_count, trans_prog, trans_target = [], [], [], []
    asg_start, asg_count, asg_slot, asg_prog = [], [], [], []
    ver_start, ver_count, ver_prog, ver_scale = [], [], [], []
    when_parent, when_prog = [], []
    for depth, kids, trans, asgs, vers, when in steps:
        child_start.append(len(children))
        child_count.append(len(kids))
        children.extend(kids)
        trans_start.append(len(trans_prog))
        trans_count.append(len(trans))
        for p, tgt in trans:
            trans_prog.append(p)
            trans_target.append(tgt)
        asg_start.append(len(asg_prog))
        asg_count.append(len(asgs))
        for slot, p in asgs:
            asg_slot.append(slot)
            asg_prog.append(p)
        ver_start.append(len(ver_prog))
        ver_count.append(len(vers))
        for p, scale in vers:
            ver_prog.append(p)
            ver_scale.append(scale)
        when_prog.append(-1 if when is None else when)
    for depth, kids, *_ in steps:
        when_parent.append(1 if any(steps[k][5] is not None for k in kids) else 0)
    return Tables(
        depth=i64([s[0] for s in steps]),
        child_start=i64(child_start), child_count=i64(child_count), children=i64(children),
        when_parent=i64(when_parent), when_prog=i64(when_prog),
        trans_start=i64(trans_start), trans_count=i64(trans_count),
        trans_prog=i64(trans_prog), trans_target=i64(trans_target),
        asg_start=i64(asg_start), asg_count=i64(asg_count),
        asg_slot=i64(asg_slot), asg_prog=i64(asg_prog),
        ver_start=i64(ver_start), ver_count=i64(ver_count),
        ver_prog=i64(ver_prog), ver_scale=np.asarray(ver_scale, dtype=np.float64),
        prog_start=i64(em.prog_start), prog_len=i64(em.prog_len),
        code=i64(em.code), arg=i64(em.arg),
        consts=np.asarray(em.consts if em.consts else [0.0], dtype=np.float64),
        max_depth=int(max_depth),
    )


def compile_block(block: Block, slot_map: dict) -> CompiledBlock:
    em = _Emitter(slot_map)
    order = [None]  # index 0: virtual root
    names = ["<root>"]
    index = {}

    def number(steps, prefix):
        for s in steps:
            index[id(s)] = len(order)
            order.append(s)
            names.append(prefix + s.name)
            number(s.children, prefix + s.name + ".")

    number(block.steps, "")

    rows = []
    verify_info = []
    max_depth = 0

    def kids_of(steps):
        return [index[id(c)] for c in steps]

    root_kids = kids_of(block.steps)
    rows.append([0, root_kids, [], [], [], None])

    def fill(steps, parent_idx, depth, siblings):
        nonlocal max_depth
        max_depth = max(max_depth, depth)
        by_name = {s.name: index[id(s)] for s in siblings}
        for s in steps:
            i = index[id(s)]
            trans = [(em.program(tr.condition, i, False), by_name[tr.target]) for tr in s.transitions]
            asgs = [(em._slot(a.signal), em.program(a.expr, i, False)) for a in s.actions]
            vers = []
            for v in s.verifies:
                vers.append((em.program(v.expr, i, True), float(v.scale)))
                verify_info.append((names[i], v))
            when = em.program(s.when, parent_idx, False) if s.when is not None else None
            while len(rows) <= i:
                rows.append(None)
            rows[i] = [depth, kids_of(s.children), trans, asgs, vers, when]
            fill(s.children, i, depth + 1, s.children)

    fill(block.steps, 0, 1, block.steps)
    tables = _tables(em, [tuple(r) for r in rows], max_depth)
    return CompiledBlock(block, tables, names, dict(slot_map), verify_info)


# ------------------------------------------------------------------ packing
#
# Kernels see a block as two flat arrays. ``I`` holds every integer table
# behind a header of offsets, plus the mutable active configuration. ``F``
# holds constants and verify scales, plus the mutable entry times, the
# evaluation stack and the current and previous sample. Compiled functions
# pay a reference-count round trip per array argument on each call, so
# keeping the argument list to two arrays is what makes the per-sample
# interpreter cheap.

_INT_FIELDS = ("depth", "child_start", "child_count", "children", "when_parent", "when_prog",
               "trans_start", "trans_count", "trans_prog", "trans_target", "asg_start",
               "asg_count", "asg_slot", "asg_prog", "ver_start", "ver_count", "ver_prog",
               "prog_start", "prog_len", "code", "arg")
(H_DEPTH, H_CHILD_START, H_CHILD_COUNT, H_CHILDREN, H_WHEN_PARENT, H_WHEN_PROG,
 H_TRANS_START, H_TRANS_COUNT, H_TRANS_PROG, H_TRANS_TARGET, H_ASG_START, H_ASG_COUNT,
 H_ASG_SLOT, H_ASG_PROG, H_VER_START, H_VER_COUNT, H_VER_PROG, H_PROG_START, H_PROG_LEN,
 H_CODE, H_ARG) = range(21)
# integer state
H_ACTIVE, H_LEVELS, H_N_STEPS, H_N_SLOTS = range(21, 25)
# offsets into F
H_SCALE, H_CONSTS, H_ENTRY, H_STACK, H_SIG, H_PREV = range(25, 31)
HEADER = 31


def pack(tb: Tables, n_slots: int) -> tuple[np.ndarray, np.ndarray]:
    ints = [np.asarray(getattr(tb, f), dtype=np.int64) for f in _INT_FIELDS]
    n_steps = len(tb.depth)
    header = np.zeros(HEADER, dtype=np.int64)
    pos = HEADER
    for i, arr in enumerate(ints):
        header[i] = pos
        pos += len(arr)
    header[H_ACTIVE] = pos
    header[H_N_STEPS] = n_steps
    header[H_N_SLOTS] = n_slots
    I = np.concatenate([header, *ints, np.zeros(tb.max_depth + 1, dtype=np.int64)])  # noqa: E741

    floats = [tb.ver_scale, tb.consts, np.zeros(n_steps), np.zeros(STACK_SIZE),
              np.zeros(n_slots), np.zeros(n_slots)]
    pos = 0
    for h, arr in zip((H_SCALE, H_CONSTS, H_ENTRY, H_STACK, H_SIG, H_PREV), floats):
        I[h] = pos
        pos += len(arr)
    F = np.concatenate(floats).astype(np.float64)
    return I, F


# ------------------------------------------------------------------ kernels

@njit(cache=True, error_model="numpy")
def eval_prog(p, I, F, t):  # noqa: E741
    start = I[I[H_PROG_START] + p]
    code = I[H_CODE]
    argo = I[H_ARG]
    co = I[H_CONSTS]
    sg = I[H_SIG]
    pv = I[H_PREV]
    en = I[H_ENTRY]
    st = I[H_STACK]
    sp = st
    for i in range(start, start + I[I[H_PROG_LEN] + p]):
        op = I[code + i]
        a = I[argo + i]
        if op == OP_CONST:
            F[sp] = F[co + a]
            sp += 1
        elif op == OP_SIG:
            F[sp] = F[sg + a]
            sp += 1
        elif op == OP_PREV:
            F[sp] = F[pv + a]
            sp += 1
        elif op == OP_TIME:
            F[sp] = t
            sp += 1
        elif op == OP_ET:
            F[sp] = t - F[en + a]
            sp += 1
        elif op == OP_NEG:
            F[sp - 1] = -F[sp - 1]
        elif op == OP_ABS:
            F[sp - 1] = abs(F[sp - 1])
        elif op == OP_SIN:
            F[sp - 1] = math.sin(F[sp - 1])
        elif op == OP_COS:
            F[sp - 1] = math.cos(F[sp - 1])
        elif op == OP_NOT:
            F[sp - 1] = 0.0 if F[sp - 1] != 0.0 else 1.0
        elif op == OP_BOOL2ROB:
            F[sp - 1] = math.inf if F[sp - 1] != 0.0 else -math.inf
        else:
            sp -= 1
            r = F[sp]
            l = F[sp - 1]  # noqa: E741
            if op == OP_ADD:
                v = l + r
            elif op == OP_SUB:
                v = l - r
            elif op == OP_MUL:
                v = l * r
            elif op == OP_DIV:
                v = l / r
            elif op == OP_MIN:
                # same tie and NaN behaviour as Python's builtin min/max
                v = r if r < l else l
            elif op == OP_MAX:
                v = r if r > l else l
            elif op == OP_LE:
                v = 1.0 if l <= r else 0.0
            elif op == OP_LT:
                v = 1.0 if l < r else 0.0
            elif op == OP_GE:
                v = 1.0 if l >= r else 0.0
            elif op == OP_GT:
                v = 1.0 if l > r else 0.0
            elif op == OP_EQ:
                v = 1.0 if l == r else 0.0
            elif op == OP_NE:
                v = 1.0 if l != r else 0.0
            elif op == OP_AND:
                v = 1.0 if (l != 0.0 and r != 0.0) else 0.0
            elif op == OP_OR:
                v = 1.0 if (l != 0.0 or r != 0.0) else 0.0
            elif op == OP_RSUB:
                v = r - l
            elif op == OP_NEGABSDIFF:
                v = -abs(l - r)
            else:  # OP_ABSDIFF
                v = abs(l - r)
            F[sp - 1] = v
    return F[st]


@njit(cache=True, error_model="numpy")
def _select_child(p, I, F, t):  # noqa: E741
    first = I[I[H_CHILD_START] + p]
    count = I[I[H_CHILD_COUNT] + p]
    ch = I[H_CHILDREN]
    if I[I[H_WHEN_PARENT] + p] == 0:
        return I[ch + first]
    for j in range(first, first + count):
        c = I[ch + j]
        w = I[I[H_WHEN_PROG] + c]
        if w < 0 or eval_prog(w, I, F, t) != 0.0:
            return c
    return I[ch + first + count - 1]


@njit(cache=True, error_model="numpy")
def enter(step, I, F, t):  # noqa: E741
    """Enter ``step`` and its chain of default children."""
    depth = I[H_DEPTH]
    act = I[H_ACTIVE]
    en = I[H_ENTRY]
    cur = step
    I[act + I[depth + cur]] = cur
    F[en + cur] = t
    while I[I[H_CHILD_COUNT] + cur] > 0:
        cur = _select_child(cur, I, F, t)
        I[act + I[depth + cur]] = cur
        F[en + cur] = t
    I[H_LEVELS] = I[depth + cur] + 1


@njit(cache=True, error_model="numpy")
def advance(I, F, t):  # noqa: E741
    """Find the step to enter at this sample, scanning from the outermost level down.

    A transition at an outer level exits every descendant, so deeper levels
    are not examined in the same sample. Returns -1 when nothing fires.
    """
    ts = I[H_TRANS_START]
    tc = I[H_TRANS_COUNT]
    tp = I[H_TRANS_PROG]
    tt = I[H_TRANS_TARGET]
    act = I[H_ACTIVE]
    for d in range(1, I[H_LEVELS]):
        s = I[act + d]
        p = I[act + d - 1]
        if I[I[H_WHEN_PARENT] + p] != 0:
            c = _select_child(p, I, F, t)
            if c != s:
                return c
        else:
            first = I[ts + s]
            for j in range(first, first + I[tc + s]):
                if eval_prog(I[tp + j], I, F, t) != 0.0:
                    return I[tt + j]
    return -1


@njit(cache=True, error_model="numpy")
def assign(I, F, t):  # noqa: E741
    """Run assignments root to leaf, so a child's value overrides its ancestors'."""
    a_start = I[H_ASG_START]
    a_count = I[H_ASG_COUNT]
    a_slot = I[H_ASG_SLOT]
    a_prog = I[H_ASG_PROG]
    act = I[H_ACTIVE]
    sg = I[H_SIG]
    for d in range(1, I[H_LEVELS]):
        s = I[act + d]
        first = I[a_start + s]
        for j in range(first, first + I[a_count + s]):
            F[sg + I[a_slot + j]] = eval_prog(I[a_prog + j], I, F, t)


@njit(cache=True, error_model="numpy")
def machine_step(k, I, F, t):  # noqa: E741
    """Update the active configuration for sample ``k``; True if it changed."""
    if k == 0:
        I[I[H_ACTIVE]] = 0
        F[I[H_ENTRY]] = t
        enter(0, I, F, t)
        return True
    target = advance(I, F, t)
    if target >= 0:
        enter(target, I, F, t)
        return True
    return False


@njit(cache=True, error_model="numpy")
def active_leaf(I):  # noqa: E741
    return I[I[H_ACTIVE] + I[H_LEVELS] - 1]


@njit(cache=True, error_model="numpy")
def load_sample(I, F, data, k):  # noqa: E741
    """Copy row k (and row k-1, or row k again at k = 0) into the sample slots."""
    sg = I[H_SIG]
    pv = I[H_PREV]
    kp = k - 1 if k > 0 else k
    for j in range(data.shape[1]):
        F[sg + j] = data[k, j]
        F[pv + j] = data[kp, j]


@njit(cache=True, error_model="numpy")
def configurations_kernel(I0, F0, data, dt, leaf_out):
    """Active leaf step per sample of an externally supplied trace."""
    I = I0.copy()  # noqa: E741
    F = F0.copy()
    for k in range(data.shape[0]):
        t = k * dt
        load_sample(I, F, data, k)
        machine_step(k, I, F, t)
        leaf_out[k] = active_leaf(I)


@njit(cache=True, error_model="numpy")
def assessment_kernel(I0, F0, data, dt, stats):
    """Minimum robustness over all samples and active verify statements.

    ``stats`` receives [min, argmin sample, first violation sample, active
    evaluations]; sample indices are -1 when undefined.
    """
    I = I0.copy()  # noqa: E741
    F = F0.copy()
    v_start = I[H_VER_START]
    v_count = I[H_VER_COUNT]
    v_prog = I[H_VER_PROG]
    sc = I[H_SCALE]
    act = I[H_ACTIVE]
    sg = I[H_SIG]
    pv = I[H_PREV]
    n_slots = data.shape[1]
    # blocks without transitions or 'when' selection never change configuration
    static = True
    for s in range(I[H_N_STEPS]):
        if I[I[H_TRANS_COUNT] + s] > 0 or I[I[H_WHEN_PARENT] + s] != 0:
            static = False
    best = math.inf
    best_k = -1
    first_bad = -1
    n_eval = 0
    for k in range(data.shape[0]):
        t = k * dt
        kp = k - 1 if k > 0 else k
        for j in range(n_slots):
            F[sg + j] = data[k, j]
            F[pv + j] = data[kp, j]
        if k == 0 or not static:
            machine_step(k, I, F, t)
        for d in range(1, I[H_LEVELS]):
            s = I[act + d]
            first = I[v_start + s]
            for j in range(first, first + I[v_count + s]):
                r = eval_prog(I[v_prog + j], I, F, t) * F[sc + j]
                n_eval += 1
                if best_k < 0 or r < best:
                    best = r
                    best_k = k
                if r < 0.0 and first_bad < 0:
                    first_bad = k
    stats[0] = best
    stats[1] = best_k
    stats[2] = first_bad
    stats[3] = n_eval


@njit(cache=True, error_model="numpy")
def generate_kernel(I0, F0, data, assigned, dt):
    """Evaluate a sequence over ``data`` in place.

    Columns in ``assigned`` are written from the sequence's assignments;
    the remaining columns are read as observed signals. Assigned values hold
    between samples, starting from zero.
    """
    I = I0.copy()  # noqa: E741
    F = F0.copy()
    sg = I[H_SIG]
    pv = I[H_PREV]
    n_slots = data.shape[1]
    is_assigned = np.zeros(n_slots, dtype=np.bool_)
    for j in range(assigned.shape[0]):
        is_assigned[assigned[j]] = True
    for k in range(data.shape[0]):
        t = k * dt
        for j in range(n_slots):
            if not is_assigned[j]:
                F[sg + j] = data[k, j]
        if k == 0:
            for j in range(n_slots):
                F[pv + j] = F[sg + j]
        machine_step(k, I, F, t)
        assign(I, F, t)
        for j in range(n_slots):
            data[k, j] = F[sg + j]
            F[pv + j] = F[sg + j]


@njit(cache=True, error_model="numpy")
def eval_single(I0, F0, p, sig, t):
    I = I0.copy()  # noqa: E741
    F = F0.copy()
    for j in range(sig.shape[0]):
        F[I[H_SIG] + j] = sig[j]
        F[I[H_PREV] + j] = sig[j]
    return eval_prog(p, I, F, t)

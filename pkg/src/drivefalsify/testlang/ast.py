"""Syntax tree for test sequence and test assessment blocks."""

from __future__ import annotations

from dataclasses import dataclass, field

PARAM_PREFIX = "Hecate_"

NUM = "num"
BOOL = "bool"


class Expr:
    kind: str = NUM


@dataclass(frozen=True)
class Num(Expr):
    value: float
    kind = NUM


@dataclass(frozen=True)
class BoolLit(Expr):
    value: bool
    kind = BOOL


@dataclass(frozen=True)
class Sig(Expr):
    name: str
    kind = NUM


@dataclass(frozen=True)
class Param(Expr):
    name: str
    kind = NUM


@dataclass(frozen=True)
class Time(Expr):
    kind = NUM


@dataclass(frozen=True)
class Elapsed(Expr):
    """Time since the enclosing step was entered."""
    kind = NUM


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr
    kind = NUM


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # + - * /
    left: Expr
    right: Expr
    kind = NUM


@dataclass(frozen=True)
class Call(Expr):
    fn: str  # abs min max sin cos
    args: tuple
    kind = NUM


@dataclass(frozen=True)
class Changed(Expr):
    """True when a signal differs from its value at the previous sample."""
    name: str
    kind = BOOL


@dataclass(frozen=True)
class Compare(Expr):
    op: str  # <= < >= > ==
    left: Expr
    right: Expr
    kind = BOOL


@dataclass(frozen=True)
class And(Expr):
    left: Expr
    right: Expr
    kind = BOOL


@dataclass(frozen=True)
class Or(Expr):
    left: Expr
    right: Expr
    kind = BOOL


@dataclass(frozen=True)
class Not(Expr):
    arg: Expr
    kind = BOOL


@dataclass(frozen=True)
class Assign:
    signal: str
    expr: Expr
    line: int = 0


@dataclass(frozen=True)
class Verify:
    expr: Expr
    scale: float = 1.0
    line: int = 0


@dataclass(frozen=True)
class Transition:
    condition: Expr
    target: str


@dataclass
class TestStep:
    name: str
    actions: list = field(default_factory=list)
    verifies: list = field(default_factory=list)
    children: list = field(default_factory=list)
    transitions: list = field(default_factory=list)
    when: Expr | None = None
    line: int = 0


@dataclass(frozen=True)
class SearchParameter:
    name: str
    min: float
    max: float

    @property
    def short_name(self) -> str:
        return self.name[len(PARAM_PREFIX):]


@dataclass
class Block:
    kind: str  # "sequence" | "assessment"
    name: str
    steps: list
    params: list = field(default_factory=list)
    signals: list = field(default_factory=list)
    observed: list = field(default_factory=list)
    duration: float | None = None

    @property
    def is_sequence(self) -> bool:
        return self.kind == "sequence"

    def walk(self):
        """Yield every step, depth first, in declaration order."""
        stack = list(reversed(self.steps))
        while stack:
            s = stack.pop()
            yield s
            stack.extend(reversed(s.children))

    def param(self, name: str) -> SearchParameter:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)


class TestSequenceBlock(Block):
    pass


class TestAssessmentBlock(Block):
    pass


def walk_expr(e: Expr):
    yield e
    for child in _children(e):
        yield from walk_expr(child)


def _children(e):
    if isinstance(e, (Neg, Not)):
        return (e.arg,)
    if isinstance(e, (BinOp, Compare, And, Or)):
        return (e.left, e.right)
    if isinstance(e, Call):
        return e.args
    return ()


def map_expr(e: Expr, fn) -> Expr:
    """Rebuild ``e`` bottom-up, replacing each node by ``fn(node)``."""
    if isinstance(e, Neg):
        e = Neg(map_expr(e.arg, fn))
    elif isinstance(e, Not):
        e = Not(map_expr(e.arg, fn))
    elif isinstance(e, BinOp):
        e = BinOp(e.op, map_expr(e.left, fn), map_expr(e.right, fn))
    elif isinstance(e, Compare):
        e = Compare(e.op, map_expr(e.left, fn), map_expr(e.right, fn))
    elif isinstance(e, And):
        e = And(map_expr(e.left, fn), map_expr(e.right, fn))
    elif isinstance(e, Or):
        e = Or(map_expr(e.left, fn), map_expr(e.right, fn))
    elif isinstance(e, Call):
        e = Call(e.fn, tuple(map_expr(a, fn) for a in e.args))
    return fn(e)


def to_source(e: Expr) -> str:
    """Render an expression back to DSL text (fully parenthesized)."""
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, (Sig, Param)):
        return e.name
    if isinstance(e, Time):
        return "t"
    if isinstance(e, Elapsed):
        return "et"
    if isinstance(e, Neg):
        return f"(-{to_source(e.arg)})"
    if isinstance(e, Not):
        return f"(!{to_source(e.arg)})"
    if isinstance(e, (BinOp, Compare)):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    if isinstance(e, And):
        return f"({to_source(e.left)} && {to_source(e.right)})"
    if isinstance(e, Or):
        return f"({to_source(e.left)} || {to_source(e.right)})"
    if isinstance(e, Call):
        return f"{e.fn}({', '.join(to_source(a) for a in e.args)})"
    if isinstance(e, Changed):
        return f"changed({e.name})"
    raise TypeError(e)

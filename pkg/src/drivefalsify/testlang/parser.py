"""Recursive-descent parser for the test block language.

Grammar (informal)::

    block      := ("sequence" | "assessment") STRING "{" header* step+ "}"
    header     := "duration" NUM ";"
                | "params" "{" (IDENT "in" "[" NUM "," NUM "]" ";")+ "}"
                | "signals" "{" IDENT ("," | ";" IDENT)* ";" "}"
                | "observe" "{" IDENT ("," | ";" IDENT)* ";" "}"
    step       := "step" IDENT ["when" "(" expr ")"] "{" item+ "}" transition*
    item       := IDENT "=" expr ";" | "verify" "(" expr ["," NUM] ")" ";" | "pass" ";" | step
    transition := "until" "(" expr ")" "->" IDENT

    expr := or;  or := and ("||" and)*;  and := not ("&&" not)*
    not  := "!" not | cmp;  cmp := sum [("<="|"<"|">="|">"|"==") sum]
    sum  := prod (("+"|"-") prod)*;  prod := unary (("*"|"/") unary)*
    unary := "-" unary | atom
    atom := NUM | "true" | "false" | "t" | "et" | "pi" | IDENT | IDENT "(" args ")" | "(" expr ")"
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

from .ast import (BOOL, NUM, PARAM_PREFIX, And, Assign, BinOp, Block, BoolLit, Call,
                  Changed, Compare, Elapsed, Expr, Neg, Not, Num, Or, Param, SearchParameter,
                  Sig, TestAssessmentBlock, TestSequenceBlock, TestStep, Time, Transition,
                  Verify)


class DSLError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        where = f"line {line}, column {col}: " if line else ""
        super().__init__(where + message)
        self.message = message
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+|//[^\n]*)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<str>"[^"\n]*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|==|&&|\|\||->|[<>+\-*/(){}\[\],;=!])
""", re.VERBOSE)

FUNCTIONS = {"abs": 1, "min": 2, "max": 2, "sin": 1, "cos": 1}
RESERVED = {"sequence", "assessment", "params", "signals", "observe", "duration", "step",
            "when", "until", "verify", "pass", "in", "true", "false", "t", "et", "pi",
            "changed", "and", "or", "not"} | set(FUNCTIONS)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise DSLError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        tok = m.group()
        if kind != "ws":
            tokens.append(Token(kind, tok, line, pos - line_start + 1))
        nl = tok.count("\n")
        if nl:
            line += nl
            line_start = pos + tok.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.block: Block | None = None

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        return DSLError(msg, tok.line, tok.col)

    def at(self, text) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "ident")

    def accept(self, text) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        tok = self.tok
        self.i += 1
        return tok

    def ident(self) -> Token:
        if self.tok.kind != "ident":
            raise self.error(f"expected identifier, found {self.tok.text or 'end of input'!r}")
        tok = self.tok
        self.i += 1
        return tok

    def number(self) -> float:
        sign = -1.0 if self.accept("-") else 1.0
        if self.accept("pi"):
            return sign * math.pi
        if self.tok.kind != "num":
            raise self.error(f"expected number, found {self.tok.text!r}")
        val = float(self.tok.text)
        self.i += 1
        return sign * val

    # -- block structure
    def parse_block(self) -> Block:
        kind_tok = self.tok
        if not (self.at("sequence") or self.at("assessment")):
            raise self.error("expected 'sequence' or 'assessment'")
        self.i += 1
        if self.tok.kind != "str":
            raise self.error("expected quoted block name")
        name = self.tok.text[1:-1]
        self.i += 1
        cls = TestSequenceBlock if kind_tok.text == "sequence" else TestAssessmentBlock
        block = cls(kind=kind_tok.text, name=name, steps=[])
        self.block = block
        self.expect("{")
        seen = set()
        while self.tok.text in ("duration", "params", "signals", "observe") and self.tok.kind == "ident":
            head = self.tok
            if head.text in seen:
                raise self.error(f"duplicate '{head.text}' section")
            seen.add(head.text)
            self.i += 1
            if head.text == "duration":
                block.duration = self.number()
                if not block.duration > 0:
                    raise self.error("duration must be positive", head)
                self.expect(";")
            elif head.text == "params":
                self.parse_params(block)
            else:
                if head.text == "observe" and not block.is_sequence:
                    raise self.error("'observe' is only allowed in sequences", head)
                names = self.parse_name_list()
                (block.signals if head.text == "signals" else block.observed).extend(names)
        if not self.at("step"):
            raise self.error("block needs at least one step")
        while self.at("step"):
            block.steps.append(self.parse_step())
        self.expect("}")
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r} after block")
        return block

    def parse_params(self, block):
        self.expect("{")
        while not self.accept("}"):
            tok = self.ident()
            if not tok.text.startswith(PARAM_PREFIX):
                raise self.error(f"parameter {tok.text!r} must start with {PARAM_PREFIX!r}", tok)
            if any(p.name == tok.text for p in block.params):
                raise self.error(f"duplicate parameter {tok.text!r}", tok)
            self.expect("in")
            self.expect("[")
            lo = self.number()
            self.expect(",")
            hi = self.number()
            self.expect("]")
            self.expect(";")
            if lo > hi:
                raise self.error(f"parameter {tok.text!r} has min > max", tok)
            block.params.append(SearchParameter(tok.text, lo, hi))

    def parse_name_list(self) -> list[str]:
        self.expect("{")
        names = []
        while not self.accept("}"):
            tok = self.ident()
            if tok.text in RESERVED or tok.text.startswith(PARAM_PREFIX):
                raise self.error(f"{tok.text!r} cannot be used as a signal name", tok)
            names.append(tok.text)
            if not (self.accept(",") or self.accept(";")):
                if not self.at("}"):
                    raise self.error("expected ',' or ';' between signal names")
        return names

    def parse_step(self) -> TestStep:
        start = self.expect("step")
        name = self.ident()
        if name.text in RESERVED:
            raise self.error(f"{name.text!r} is reserved", name)
        step = TestStep(name=name.text, line=start.line)
        if self.accept("when"):
            self.expect("(")
            step.when = self.bool_expr()
            self.expect(")")
        brace = self.expect("{")
        n_items = 0
        while not self.accept("}"):
            n_items += 1
            if self.at("step"):
                step.children.append(self.parse_step())
            elif self.at("verify"):
                step.verifies.append(self.parse_verify())
            elif self.accept("pass"):
                self.expect(";")
            else:
                step.actions.append(self.parse_assign())
        if n_items == 0:
            raise self.error(f"step {step.name!r} has an empty body", brace)
        while self.at("until"):
            self.i += 1
            self.expect("(")
            cond = self.bool_expr()
            self.expect(")")
            self.expect("->")
            target = self.ident()
            step.transitions.append(Transition(cond, target.text))
        return step

    def parse_verify(self) -> Verify:
        tok = self.expect("verify")
        if self.block.is_sequence:
            raise self.error("'verify' is only allowed in assessments", tok)
        self.expect("(")
        expr = self.bool_expr()
        scale = 1.0
        if self.accept(","):
            scale = self.number()
            if not scale > 0:
                raise self.error("verify scale must be positive", tok)
        self.expect(")")
        self.expect(";")
        return Verify(expr, scale, tok.line)

    def parse_assign(self) -> Assign:
        tok = self.ident()
        if not self.block.is_sequence:
            raise self.error("assignments are only allowed in sequences", tok)
        if tok.text not in self.block.signals:
            raise self.error(f"assignment to undeclared signal {tok.text!r}", tok)
        self.expect("=")
        expr = self.num_expr()
        self.expect(";")
        return Assign(tok.text, expr, tok.line)

    # -- expressions
    def bool_expr(self) -> Expr:
        tok = self.tok
        e = self.expr()
        if e.kind != BOOL:
            raise self.error("expected a boolean expression", tok)
        return e

    def num_expr(self) -> Expr:
        tok = self.tok
        e = self.expr()
        if e.kind != NUM:
            raise self.error("expected a numeric expression", tok)
        return e

    def _check(self, e, kind, tok):
        if e.kind != kind:
            raise self.error(f"operand must be {'boolean' if kind == BOOL else 'numeric'}", tok)
        return e

    def expr(self) -> Expr:
        tok = self.tok
        left = self.and_expr()
        while self.at("||") or self.at("or"):
            op = self.tok
            self.i += 1
            right = self.and_expr()
            left = Or(self._check(left, BOOL, tok), self._check(right, BOOL, op))
        return left

    def and_expr(self) -> Expr:
        tok = self.tok
        left = self.not_expr()
        while self.at("&&") or self.at("and"):
            op = self.tok
            self.i += 1
            right = self.not_expr()
            left = And(self._check(left, BOOL, tok), self._check(right, BOOL, op))
        return left

    def not_expr(self) -> Expr:
        if self.at("!") or self.at("not"):
            tok = self.tok
            self.i += 1
            return Not(self._check(self.not_expr(), BOOL, tok))
        return self.cmp_expr()

    def cmp_expr(self) -> Expr:
        tok = self.tok
        left = self.sum_expr()
        for op in ("<=", "<", ">=", ">", "=="):
            if self.at(op):
                op_tok = self.tok
                self.i += 1
                right = self.sum_expr()
                return Compare(op, self._check(left, NUM, tok), self._check(right, NUM, op_tok))
        return left

    def sum_expr(self) -> Expr:
        tok = self.tok
        left = self.prod_expr()
        while self.at("+") or self.at("-"):
            op = self.tok
            self.i += 1
            right = self.prod_expr()
            left = BinOp(op.text, self._check(left, NUM, tok), self._check(right, NUM, op))
        return left

    def prod_expr(self) -> Expr:
        tok = self.tok
        left = self.unary_expr()
        while self.at("*") or self.at("/"):
            op = self.tok
            self.i += 1
            right = self.unary_expr()
            left = BinOp(op.text, self._check(left, NUM, tok), self._check(right, NUM, op))
        return left

    def unary_expr(self) -> Expr:
        if self.at("-"):
            tok = self.tok
            self.i += 1
            return Neg(self._check(self.unary_expr(), NUM, tok))
        return self.atom()

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if tok.kind != "ident":
            raise self.error(f"unexpected {tok.text or 'end of input'!r} in expression")
        self.i += 1
        word = tok.text
        if word == "true":
            return BoolLit(True)
        if word == "false":
            return BoolLit(False)
        if word == "t":
            return Time()
        if word == "et":
            return Elapsed()
        if word == "pi":
            return Num(math.pi)
        if word == "changed":
            self.expect("(")
            sig = self.ident()
            self.expect(")")
            self._resolve_signal(sig)
            return Changed(sig.text)
        if word in FUNCTIONS:
            self.expect("(")
            args = [self.num_expr()]
            while self.accept(","):
                args.append(self.num_expr())
            self.expect(")")
            if len(args) != FUNCTIONS[word]:
                raise self.error(f"{word}() takes {FUNCTIONS[word]} argument(s)", tok)
            return Call(word, tuple(args))
        if word.startswith(PARAM_PREFIX):
            if not any(p.name == word for p in self.block.params):
                raise self.error(f"undeclared parameter {word!r}", tok)
            return Param(word)
        self._resolve_signal(tok)
        return Sig(word)

    def _resolve_signal(self, tok):
        b = self.block
        if tok.text not in b.signals and tok.text not in b.observed:
            raise self.error(f"undeclared signal {tok.text!r}", tok)


def _validate(block: Block) -> None:
    def check_level(steps, where):
        names = set()
        for s in steps:
            if s.name in names:
                raise DSLError(f"duplicate step name {s.name!r} in {where}", s.line)
            names.add(s.name)
        whens = [s.when is not None for s in steps]
        if any(whens):
            if not all(whens[:-1]):
                raise DSLError(f"in {where}, every step but the last needs a 'when' condition", steps[0].line)
            if whens[-1]:
                raise DSLError(f"in {where}, the last step must be an unconditional default "
                               "when siblings use 'when'", steps[-1].line)
        for s in steps:
            if any(whens) and s.transitions:
                raise DSLError(f"step {s.name!r} mixes 'when' selection with transitions", s.line)
            for tr in s.transitions:
                if tr.target not in names:
                    raise DSLError(f"transition target {tr.target!r} from step {s.name!r} "
                                   f"is not a step in {where}", s.line)
            check_level(s.children, f"step {s.name!r}")

    check_level(block.steps, f"block {block.name!r}")
    if block.is_sequence:
        check_assignments(block)


def check_assignments(block: Block) -> None:
    """Every root-to-leaf chain of a sequence must assign every declared signal."""
    if not block.is_sequence:
        return

    def visit(step, assigned):
        assigned = assigned | {a.signal for a in step.actions}
        if not step.children:
            missing = [n for n in block.signals if n not in assigned]
            if missing:
                raise DSLError(f"signal(s) {', '.join(missing)} unassigned when step "
                               f"{step.name!r} is active", step.line)
            return
        for c in step.children:
            visit(c, assigned)

    for s in block.steps:
        visit(s, frozenset())


def parse_block(text: str) -> TestSequenceBlock | TestAssessmentBlock:
    block = _Parser(text).parse_block()
    _validate(block)
    return block


def parse_file(path) -> TestSequenceBlock | TestAssessmentBlock:
    return parse_block(Path(path).read_text(encoding="utf-8"))


def parse_expr(text: str, signals) -> Expr:
    """Parse a standalone boolean expression over the given signal names."""
    p = _Parser(text)
    p.block = TestAssessmentBlock(kind="assessment", name="<expr>", steps=[], signals=list(signals))
    e = p.bool_expr()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r} after expression")
    return e

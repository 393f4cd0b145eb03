"""Independent reference implementations used by the tests.

Everything here walks the parsed syntax tree directly in plain Python. It
shares nothing with the compiled stack machine except the parser, so an
agreement between the two is evidence about the compiler and the kernels.
"""

from __future__ import annotations

import math
import random

from drivefalsify.testlang.ast import (And, BinOp, BoolLit, Call, Changed, Compare, Elapsed,
                                       Neg, Not, Num, Or, Sig, Time)

INF = math.inf


# ------------------------------------------------------------------ expressions

def ieee_div(l, r):
    if r != 0.0:
        return l / r
    if l != l or l == 0.0:
        return math.nan
    return math.copysign(INF, l) * math.copysign(1.0, r)


def value(e, env):
    """Numeric value (float) or truth value (bool) of an expression.

    ``env`` holds ``sig``/``prev`` dicts, ``t`` and ``et``.
    """
    if isinstance(e, Num):
        return float(e.value)
    if isinstance(e, BoolLit):
        return bool(e.value)
    if isinstance(e, Sig):
        return env["sig"][e.name]
    if isinstance(e, Time):
        return env["t"]
    if isinstance(e, Elapsed):
        return env["et"]
    if isinstance(e, Changed):
        return env["sig"][e.name] != env["prev"][e.name]
    if isinstance(e, Neg):
        return -value(e.arg, env)
    if isinstance(e, Not):
        return not value(e.arg, env)
    if isinstance(e, And):
        l, r = value(e.left, env), value(e.right, env)
        return l and r
    if isinstance(e, Or):
        l, r = value(e.left, env), value(e.right, env)
        return l or r
    if isinstance(e, Call):
        args = [value(a, env) for a in e.args]
        if e.fn == "abs":
            return abs(args[0])
        if e.fn == "sin":
            return math.sin(args[0])
        if e.fn == "cos":
            return math.cos(args[0])
        l, r = args
        if e.fn == "min":
            return r if r < l else l
        return r if r > l else l
    if isinstance(e, BinOp):
        l, r = value(e.left, env), value(e.right, env)
        if e.op == "+":
            return l + r
        if e.op == "-":
            return l - r
        if e.op == "*":
            return l * r
        return ieee_div(l, r)
    if isinstance(e, Compare):
        l, r = value(e.left, env), value(e.right, env)
        return {"<=": l <= r, "<": l < r, ">=": l >= r, ">": l > r, "==": l == r}[e.op]
    raise TypeError(e)


def rob(e, env, negated=False):
    """Robustness with negation pushed to the atoms."""
    if isinstance(e, Not):
        return rob(e.arg, env, not negated)
    if isinstance(e, (And, Or)):
        l = rob(e.left, env, negated)
        r = rob(e.right, env, negated)
        if isinstance(e, And) != negated:
            return r if r < l else l
        return r if r > l else l
    if isinstance(e, Compare):
        l, r = value(e.left, env), value(e.right, env)
        if e.op == "==":
            return abs(l - r) if negated else -abs(l - r)
        upper = e.op in ("<=", "<")  # margin r - l when the atom bounds l from above
        if upper != negated:
            return r - l
        return l - r
    truth = value(e, env)
    if negated:
        truth = not truth
    return INF if truth else -INF


def closed_truth(e, env, negated=False):
    """Boolean value with every comparison closed at its boundary.

    This is the truth notion robustness is sound for: a margin of exactly
    zero counts as satisfied whatever the strictness of the atom.
    """
    if isinstance(e, Not):
        return closed_truth(e.arg, env, not negated)
    if isinstance(e, (And, Or)):
        l = closed_truth(e.left, env, negated)
        r = closed_truth(e.right, env, negated)
        return (l and r) if isinstance(e, And) != negated else (l or r)
    if isinstance(e, Compare):
        l, r = value(e.left, env), value(e.right, env)
        if e.op == "==":
            return True if negated else l == r
        upper = e.op in ("<=", "<")
        return l <= r if upper != negated else l >= r
    truth = value(e, env)
    return (not truth) if negated else truth


# ------------------------------------------------------------------ step machine

class _Root:
    name = "<root>"
    transitions = ()
    when = None

    def __init__(self, steps):
        self.children = list(steps)


class Machine:
    """Reference step interpreter advanced one sample at a time."""

    def __init__(self, block):
        self.root = _Root(block.steps)
        self.parent = {}
        self.qual = {id(self.root): ""}
        stack = [self.root]
        while stack:
            s = stack.pop()
            for c in s.children:
                self.parent[id(c)] = s
                pre = self.qual[id(s)]
                self.qual[id(c)] = f"{pre}.{c.name}" if pre else c.name
                stack.append(c)
        self.chain = []
        self.entry = {}
        self.k = 0

    def _env(self, sig, prev, t, ref):
        return {"sig": sig, "prev": prev, "t": t, "et": t - self.entry[id(ref)]}

    def _select(self, parent, sig, prev, t):
        kids = parent.children
        if all(c.when is None for c in kids):
            return kids[0]
        env = self._env(sig, prev, t, parent)
        for c in kids:
            if c.when is None or value(c.when, env):
                return c
        return kids[-1]

    def _enter(self, step, sig, prev, t):
        depth = self._depth(step)
        self.chain = self.chain[:depth] + [step]
        self.entry[id(step)] = t
        cur = step
        while cur.children:
            cur = self._select(cur, sig, prev, t)
            self.chain.append(cur)
            self.entry[id(cur)] = t

    def _depth(self, step):
        d = 0
        while step is not self.root:
            step = self.parent[id(step)]
            d += 1
        return d

    def _target(self, sig, prev, t):
        for d in range(1, len(self.chain)):
            s, p = self.chain[d], self.chain[d - 1]
            if any(c.when is not None for c in p.children):
                c = self._select(p, sig, prev, t)
                if c is not s:
                    return c
                continue
            env = self._env(sig, prev, t, s)
            for tr in s.transitions:
                if value(tr.condition, env):
                    return next(x for x in p.children if x.name == tr.target)
        return None

    def step(self, sig, prev, t):
        """Advance to the next sample; returns the active chain (root excluded)."""
        if self.k == 0:
            self.chain = [self.root]
            self.entry[id(self.root)] = t
            self._enter(self.root, sig, prev, t)
        else:
            target = self._target(sig, prev, t)
            if target is not None:
                self._enter(target, sig, prev, t)
        self.k += 1
        return self.chain[1:]

    def names(self):
        return tuple(self.qual[id(s)] for s in self.chain[1:])


def _rows(trace, names):
    n = len(trace)
    cols = [trace[name] for name in names]
    return [{nm: float(c[k]) for nm, c in zip(names, cols)} for k in range(n)]


def replay_configuration(block, trace, k):
    """Configuration at sample ``k``, rebuilt from t = 0 with a fresh machine."""
    names = list(block.signals) + [o for o in block.observed if o not in block.signals]
    rows = _rows(trace, names)
    m = Machine(block)
    for j in range(k + 1):
        m.step(rows[j], rows[j - 1] if j else rows[j], j * trace.dt)
    return m.names()


def brute_force_fitness(block, trace):
    """(min robustness, argmin sample, number of active verify evaluations)."""
    names = list(block.signals) + [o for o in block.observed if o not in block.signals]
    rows = _rows(trace, names)
    m = Machine(block)
    best, best_k, count = INF, -1, 0
    for k, row in enumerate(rows):
        t = k * trace.dt
        prev = rows[k - 1] if k else row
        for s in m.step(row, prev, t):
            env = {"sig": row, "prev": prev, "t": t, "et": t - m.entry[id(s)]}
            for v in s.verifies:
                r = rob(v.expr, env) * float(v.scale)
                count += 1
                if best_k < 0 or r < best:
                    best, best_k = r, k
    return best, best_k, count


# ------------------------------------------------------------------ random blocks

SIGNALS = ("a", "b")
CONSTS = ("0.0", "1.0", "-1.0", "0.5", "2.0", "3.0", "-2.5", "0.25")


class BlockGen:
    """Random small assessment blocks rendered as source text.

    Division is left out so no sample can produce NaN, which would make
    ordering-based comparisons between implementations meaningless.
    """

    def __init__(self, rng: random.Random, max_steps=5, max_levels=3, trig=True):
        self.rng = rng
        self.max_steps = max_steps
        self.max_levels = max_levels
        self.trig = trig
        self._n = 0

    def num(self, depth=0):
        r = self.rng
        leaves = ["sig", "sig", "const", "t", "et"]
        if depth >= 3 or r.random() < 0.45:
            kind = r.choice(leaves)
            if kind == "sig":
                return r.choice(SIGNALS)
            if kind == "const":
                return r.choice(CONSTS)
            return kind
        kind = r.choice(["bin", "bin", "neg", "abs", "minmax", "trig"])
        if kind == "bin":
            return f"({self.num(depth + 1)} {r.choice('+-*')} {self.num(depth + 1)})"
        if kind == "neg":
            return f"(-{self.num(depth + 1)})"
        if kind == "abs":
            return f"abs({self.num(depth + 1)})"
        if kind == "trig" and self.trig:
            return f"{r.choice(['sin', 'cos'])}({self.num(depth + 1)})"
        return f"{r.choice(['min', 'max'])}({self.num(depth + 1)}, {self.num(depth + 1)})"

    def boolean(self, depth=0):
        r = self.rng
        if depth >= 3 or r.random() < 0.4:
            x = r.random()
            if x < 0.75:
                return f"({self.num(depth + 1)} {r.choice(['<=', '<', '>=', '>', '=='])} " \
                       f"{self.num(depth + 1)})"
            if x < 0.9:
                return f"changed({r.choice(SIGNALS)})"
            return r.choice(["true", "false"])
        kind = r.choice(["and", "or", "not"])
        if kind == "not":
            return f"(!{self.boolean(depth + 1)})"
        op = "&&" if kind == "and" else "||"
        return f"({self.boolean(depth + 1)} {op} {self.boolean(depth + 1)})"

    def _name(self):
        self._n += 1
        return f"S{self._n}"

    def _shape(self, budget, level):
        """Sibling list as nested lists of child counts, using at most ``budget`` steps."""
        r = self.rng
        count = r.randint(1, min(3, budget))
        budget -= count
        kids = []
        for _ in range(count):
            sub = []
            if level < self.max_levels and budget > 0 and r.random() < 0.5:
                sub = self._shape(budget, level + 1)
                budget -= _size(sub)
            kids.append(sub)
        return kids

    def _steps(self, shape, indent, level):
        r = self.rng
        names = [self._name() for _ in shape]
        use_when = level > 1 and len(shape) > 1 and r.random() < 0.5
        out = []
        pad = "  " * indent
        for i, (name, sub) in enumerate(zip(names, shape)):
            when = ""
            if use_when and i < len(shape) - 1:
                when = f" when ({self.boolean()})"
            body = []
            for _ in range(r.randint(0, 2)):
                scale = f", {r.choice(['2.0', '0.5'])}" if r.random() < 0.15 else ""
                body.append(f"{pad}  verify({self.boolean()}{scale});")
            if sub:
                body.append(self._steps(sub, indent + 1, level + 1))
            if not body:
                body.append(f"{pad}  pass;")
            trans = ""
            if not use_when:
                for _ in range(r.choice([0, 1, 1, 2])):
                    trans += f"\n{pad}  until ({self.boolean()}) -> {r.choice(names)}"
            out.append(f"{pad}step {name}{when} {{\n" + "\n".join(body) + f"\n{pad}}}{trans}")
        return "\n".join(out)

    def block(self) -> str:
        self._n = 0
        shape = self._shape(self.max_steps, 1)
        return ('assessment "rand" {\n  signals { a; b; }\n'
                + self._steps(shape, 1, 1) + "\n}\n")


def _size(shape):
    return sum(1 + _size(s) for s in shape)


def random_signals(rng: random.Random, n: int) -> dict:
    """Piecewise-constant signals on a coarse grid so ties and edges are common."""
    grid = [-3.0, -2.5, -1.0, -0.5, 0.0, 0.25, 0.5, 1.0, 2.0, 3.0]
    out = {}
    for name in SIGNALS:
        vals = []
        cur = rng.choice(grid)
        for _ in range(n):
            x = rng.random()
            if x < 0.15:
                cur = rng.choice(grid)
            elif x < 0.2:
                cur = rng.uniform(-4.0, 4.0)
            vals.append(cur)
        out[name] = vals
    return out

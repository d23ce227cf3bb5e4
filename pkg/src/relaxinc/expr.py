"""Arithmetic expressions and the line-oriented system description format.

Expression grammar (``^`` is right associative and binds tighter than unary
minus, so ``-x^2`` is ``-(x^2)``)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'

Functions: sin, cos, exp, abs.  Names: ``t``, ``x1..xn``, ``u1..um`` and
``u`` (alias of ``u1``).

A system description is a sequence of statements separated by newlines or
``;``; ``#`` starts a comment::

    x1' = x2^2
    x2' = x3^2
    x3' = u
    U = {-1, 1}

Other statement forms::

    x2' in {-1, 0.5*x1}          # finite list of alternatives
    x2' in [-1, 1] samples 5     # uniformly sampled interval
    U = {(0, 1), (1, 0)}         # vector-valued control points
    U = [-1, 1] samples 5        # sampled interval
    U = [-1, 1] x [0, 2] samples 3   # product grid
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass

import numpy as np

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs}


class ParseError(ValueError):
    def __init__(self, message, line=1, col=1):
        super().__init__(f"{message} (line {line}, column {col})")
        self.message = message
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<prime>')
  | (?P<op>[-+*/^(){}\[\],;=∈])
    """,
    re.VERBOSE,
)


def tokenize(text):
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "newline":
            tokens.append(Token("sep", "\n", line, col))
            line += 1
            line_start = m.end()
        elif kind == "op" and m.group() == ";":
            tokens.append(Token("sep", ";", line, col))
        elif kind == "op" and m.group() == "∈":
            tokens.append(Token("name", "in", line, col))
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# AST nodes are plain tuples: ("num", v) ("var", name) ("neg", a)
# ("bin", op, a, b) ("call", fname, a)


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def advance(self):
        t = self.tokens[self.i]
        self.i += 1
        return t

    def error(self, message, tok=None):
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.col)

    def expect(self, text):
        if self.tok.text != text:
            shown = self.tok.text if self.tok.kind != "eof" else "end of input"
            raise self.error(f"expected {text!r}, found {shown!r}")
        return self.advance()

    def at(self, text):
        return self.tok.text == text and self.tok.kind in ("op", "name", "prime")

    def expr(self):
        node = self.term()
        while self.at("+") or self.at("-"):
            op = self.advance().text
            node = ("bin", op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.at("*") or self.at("/"):
            op = self.advance().text
            node = ("bin", op, node, self.unary())
        return node

    def unary(self):
        if self.at("-"):
            self.advance()
            return ("neg", self.unary())
        if self.at("+"):
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.at("^"):
            self.advance()
            return ("bin", "^", base, self.unary())
        return base

    def atom(self):
        tok = self.tok
        if tok.kind == "number":
            self.advance()
            return ("num", float(tok.text))
        if tok.kind == "name":
            self.advance()
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return ("call", tok.text, arg)
            return ("var", tok.text, tok.line, tok.col)
        if self.at("("):
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        shown = tok.text if tok.kind != "eof" else "end of input"
        raise self.error(f"unexpected {shown!r} in expression")


def _variables(node, out):
    kind = node[0]
    if kind == "var":
        out.append(node)
    elif kind == "neg":
        _variables(node[1], out)
    elif kind == "bin":
        _variables(node[2], out)
        _variables(node[3], out)
    elif kind == "call":
        _variables(node[2], out)
    return out


def _compile(node):
    kind = node[0]
    if kind == "num":
        v = node[1]
        return lambda env: v
    if kind == "var":
        name = "u1" if node[1] == "u" else node[1]
        return lambda env: env[name]
    if kind == "neg":
        a = _compile(node[1])
        return lambda env: -a(env)
    if kind == "call":
        f = FUNCTIONS[node[1]]
        a = _compile(node[2])
        return lambda env: f(a(env))
    op, a, b = node[1], _compile(node[2]), _compile(node[3])
    if op == "+":
        return lambda env: a(env) + b(env)
    if op == "-":
        return lambda env: a(env) - b(env)
    if op == "*":
        return lambda env: a(env) * b(env)
    if op == "/":
        return lambda env: a(env) / b(env)
    return lambda env: a(env) ** b(env)


class Expr:
    """A compiled arithmetic expression."""

    def __init__(self, node, source=""):
        self.node = node
        self.source = source
        self.names = sorted({("u1" if v[1] == "u" else v[1]) for v in _variables(node, [])})
        self._fn = _compile(node)

    def __call__(self, env):
        return self._fn(env)

    def __repr__(self):
        return f"Expr({self.source!r})"


def _check_names(node, allowed):
    for v in _variables(node, []):
        name = "u1" if v[1] == "u" else v[1]
        if name not in allowed:
            raise ParseError(f"unknown identifier {v[1]!r}", v[2], v[3])


def parse_expr(text, allowed=None):
    """Parse a single expression; ``allowed`` restricts the variable names."""
    p = _Parser([t for t in tokenize(text) if t.kind != "sep" or t.text == ";"])
    node = p.expr()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r} after expression")
    if allowed is not None:
        _check_names(node, set(allowed))
    return Expr(node, text.strip())


def state_env(t, x):
    env = {"t": t}
    for i, xi in enumerate(x):
        env[f"x{i + 1}"] = xi
    return env


# -- system descriptions -----------------------------------------------------


@dataclass
class _Equation:
    index: int
    kind: str  # "expr" | "alts"
    exprs: list
    tok: Token


def _sample_interval(lo, hi, count, tok):
    if count < 1:
        raise ParseError("sample count must be positive", tok.line, tok.col)
    if count == 1:
        return np.array([(lo + hi) / 2.0])
    return np.linspace(lo, hi, count)


class _SystemParser(_Parser):
    def number(self):
        sign = 1.0
        while self.at("-") or self.at("+"):
            if self.advance().text == "-":
                sign = -sign
        if self.tok.kind != "number":
            raise self.error("expected a number")
        return sign * float(self.advance().text)

    def integer(self):
        tok = self.tok
        value = self.number()
        if value != int(value):
            raise ParseError("expected an integer", tok.line, tok.col)
        return int(value)

    def interval(self):
        self.expect("[")
        lo = self.number()
        self.expect(",")
        hi = self.number()
        self.expect("]")
        if hi < lo:
            raise self.error("interval upper bound below lower bound")
        return lo, hi

    def control_set(self):
        tok = self.tok
        if self.at("{"):
            self.advance()
            rows = []
            while True:
                if self.at("("):
                    self.advance()
                    row = [self.number()]
                    while self.at(","):
                        self.advance()
                        row.append(self.number())
                    self.expect(")")
                else:
                    row = [self.number()]
                rows.append(row)
                if self.at(","):
                    self.advance()
                    continue
                self.expect("}")
                break
            width = {len(r) for r in rows}
            if len(width) != 1:
                raise ParseError("control points have differing dimensions", tok.line, tok.col)
            return np.array(rows, dtype=float)
        if self.at("["):
            bounds = [self.interval()]
            while self.tok.kind == "name" and self.tok.text == "x":
                self.advance()
                bounds.append(self.interval())
            if not (self.tok.kind == "name" and self.tok.text == "samples"):
                raise self.error("expected 'samples N' after interval control set")
            stok = self.advance()
            count = self.integer()
            axes = [_sample_interval(lo, hi, count, stok) for lo, hi in bounds]
            return np.array(list(itertools.product(*axes)), dtype=float)
        raise self.error("expected '{' or '[' for the control set")

    def statement(self, eqs, state):
        tok = self.tok
        if tok.kind != "name":
            raise self.error(f"unexpected {tok.text!r} at start of statement")
        if tok.text == "U":
            self.advance()
            self.expect("=")
            if state.get("U") is not None:
                raise ParseError("control set declared twice", tok.line, tok.col)
            state["U"] = (self.control_set(), tok)
            return
        m = re.fullmatch(r"x([1-9][0-9]*)", tok.text)
        if m is None:
            raise ParseError(f"unknown statement target {tok.text!r}", tok.line, tok.col)
        self.advance()
        self.expect("'")
        index = int(m.group(1))
        if index in eqs:
            raise ParseError(f"equation for x{index} given twice", tok.line, tok.col)
        if self.at("="):
            self.advance()
            eqs[index] = _Equation(index, "expr", [Expr(self.expr())], tok)
        elif self.tok.kind == "name" and self.tok.text == "in":
            self.advance()
            if self.at("{"):
                self.advance()
                alts = [Expr(self.expr())]
                while self.at(","):
                    self.advance()
                    alts.append(Expr(self.expr()))
                self.expect("}")
            else:
                lo, hi = self.interval()
                if not (self.tok.kind == "name" and self.tok.text == "samples"):
                    raise self.error("expected 'samples N' after interval")
                stok = self.advance()
                values = _sample_interval(lo, hi, self.integer(), stok)
                alts = [Expr(("num", float(v))) for v in values]
            eqs[index] = _Equation(index, "alts", alts, tok)
        else:
            raise self.error("expected '=' or 'in' after x'")

    def system(self):
        eqs, state = {}, {"U": None}
        while True:
            while self.tok.kind == "sep":
                self.advance()
            if self.tok.kind == "eof":
                break
            self.statement(eqs, state)
            if self.tok.kind not in ("sep", "eof"):
                raise self.error(f"unexpected {self.tok.text!r} after statement")
        return eqs, state["U"]


@dataclass
class ExprSystem:
    """Parsed system: per-coordinate right-hand sides plus a sampled control set.

    ``controls`` has one row per admissible control sample; its first
    ``n_inputs`` columns are the declared ``u`` values and each later column
    holds the chosen alternative index of one list-valued coordinate.
    """

    dim: int
    equations: list
    controls: np.ndarray
    n_inputs: int
    source: str

    def field(self, t, x, control):
        """Velocity for a single control row (exact replay)."""
        env = state_env(t, x)
        for j in range(self.n_inputs):
            env[f"u{j + 1}"] = control[j]
        out = np.empty(self.dim)
        alt = self.n_inputs
        for eq in self.equations:
            if eq.kind == "expr":
                out[eq.index - 1] = eq.exprs[0](env)
            else:
                out[eq.index - 1] = eq.exprs[int(control[alt])](env)
                alt += 1
        return out

    def values(self, t, x):
        """All velocities, one row per control sample, in control order."""
        env = state_env(t, x)
        C = self.controls
        m = C.shape[0]
        for j in range(self.n_inputs):
            env[f"u{j + 1}"] = C[:, j]
        out = np.empty((m, self.dim))
        alt = self.n_inputs
        for eq in self.equations:
            if eq.kind == "expr":
                out[:, eq.index - 1] = eq.exprs[0](env)
            else:
                choices = np.array([np.broadcast_to(e(env), (m,)) for e in eq.exprs])
                out[:, eq.index - 1] = choices[C[:, alt].astype(int), np.arange(m)]
                alt += 1
        return out


def parse_system_text(text):
    tokens = tokenize(text)
    p = _SystemParser(tokens)
    eqs, declared = p.system()
    if not eqs:
        raise ParseError("no equations found", 1, 1)
    dim = max(eqs)
    missing = [i for i in range(1, dim + 1) if i not in eqs]
    if missing:
        last = eqs[dim].tok
        raise ParseError(
            f"dimension mismatch: no equation for x{missing[0]} (highest is x{dim})",
            last.line,
            last.col,
        )
    U = np.zeros((1, 0)) if declared is None else declared[0]
    n_inputs = U.shape[1]
    allowed = {"t"} | {f"x{i}" for i in range(1, dim + 1)} | {f"u{j}" for j in range(1, n_inputs + 1)}
    for eq in eqs.values():
        for e in eq.exprs:
            for v in _variables(e.node, []):
                name = "u1" if v[1] == "u" else v[1]
                if name not in allowed:
                    if name.startswith("u") and declared is None:
                        raise ParseError(f"control {v[1]!r} used but no control set U declared", v[2], v[3])
                    if re.fullmatch(r"u[0-9]+", name):
                        raise ParseError(
                            f"dimension mismatch: {v[1]!r} exceeds control dimension {n_inputs}", v[2], v[3]
                        )
                    raise ParseError(f"unknown identifier {v[1]!r}", v[2], v[3])
    ordered = [eqs[i] for i in range(1, dim + 1)]
    alt_counts = [len(eq.exprs) for eq in ordered if eq.kind == "alts"]
    rows = []
    for urow in U:
        for combo in itertools.product(*[range(c) for c in alt_counts]):
            rows.append(list(urow) + list(combo))
    controls = np.array(rows, dtype=float).reshape(len(rows), n_inputs + len(alt_counts))
    return ExprSystem(dim=dim, equations=ordered, controls=controls, n_inputs=n_inputs, source=text)


def parse_output_map(spec, dim):
    """Output map from expressions in ``x1..xn`` (and ``t``), e.g. ``"x1; x2^2"``.

    ``None`` or ``"id"`` gives the identity.
    """
    if spec is None or (isinstance(spec, str) and spec.strip() == "id"):
        return lambda x: np.array(x, dtype=float, copy=True), None
    parts = spec if isinstance(spec, (list, tuple)) else [s for s in re.split(r"[;\n]", spec) if s.strip()]
    allowed = {"t"} | {f"x{i}" for i in range(1, dim + 1)}
    exprs = [parse_expr(str(p), allowed) for p in parts]

    def h(x):
        env = state_env(0.0, x)
        return np.array([float(e(env)) for e in exprs])

    return h, [e.source for e in exprs]

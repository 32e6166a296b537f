"""Reader and writer for the line-oriented problem format.

Example::

    # worked instance
    var x cont [0, 1]
    var y bin
    min (x - 0.6)^2 + 0.5*y
    st c1: x - y <= 0

Statements end at a newline or ``;``. Newlines inside parentheses or brackets
do not end a statement. Constraints may be written ``lhs = rhs``, ``lhs <= rhs``
or ``lhs >= rhs``; anything other than a literal zero right-hand side is moved
to the left.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import ParseError, SemanticError
from .expr import FUNCTIONS, Binary, Const, Expr, Unary, Var, postorder, to_text
from .problem import BINARY, MinlpProblem, VariableSpec

KEYWORDS = {"var", "min", "st", "cont", "continuous", "bin", "binary", *FUNCTIONS}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=|>=|[-+*/^()\[\],:;=])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str  # number, ident, op, end
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, line_start, depth = 1, 0, 0
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "newline":
            if depth == 0:
                tokens.append(Token("end", "\n", line, col))
            line += 1
            line_start = m.end()
        elif kind == "op":
            tok = m.group()
            if tok in "([":
                depth += 1
            elif tok in ")]":
                depth = max(0, depth - 1)
            if tok == ";":
                tokens.append(Token("end", ";", line, col))
            else:
                tokens.append(Token("op", tok, line, col))
        elif kind in ("number", "ident"):
            tokens.append(Token(kind, m.group(), line, col))
        pos = m.end()
    tokens.append(Token("end", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0
        self.var_names: dict[str, int] = {}
        self.var_specs: list[VariableSpec] = []
        self.objective: Expr | None = None
        self.eqs: list[tuple[str, Expr]] = []
        self.ineqs: list[tuple[str, Expr]] = []
        self.labels: set[str] = set()

    # -- token helpers --------------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, k=1) -> Token:
        return self.tokens[min(self.pos + k, len(self.tokens) - 1)]

    def advance(self) -> Token:
        t = self.tokens[self.pos]
        if self.pos < len(self.tokens) - 1:
            self.pos += 1
        return t

    def error(self, message, tok=None) -> ParseError:
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.col)

    def expect_op(self, text) -> Token:
        if self.tok.kind != "op" or self.tok.text != text:
            found = self.tok.text.strip() or "end of statement"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def at_op(self, *texts) -> bool:
        return self.tok.kind == "op" and self.tok.text in texts

    def at_end_of_statement(self) -> bool:
        return self.tok.kind == "end"

    # -- statements -------------------------------------------------------------
    def parse(self) -> MinlpProblem:
        objective_tok = None
        while True:
            while self.tok.kind == "end" and self.tok.text:
                self.advance()
            if self.tok.kind == "end":
                break
            head = self.tok
            if head.kind != "ident" or head.text not in ("var", "min", "st"):
                raise self.error(f"expected 'var', 'min' or 'st', found {head.text!r}")
            self.advance()
            if head.text == "var":
                self.parse_var()
            elif head.text == "min":
                if self.objective is not None:
                    raise self.error("a problem has exactly one 'min' statement", head)
                if self.at_end_of_statement():
                    raise self.error("empty objective")
                objective_tok = head
                self.objective = self.parse_expr()
            else:
                self.parse_constraint()
            if not self.at_end_of_statement():
                raise self.error(f"unexpected {self.tok.text!r}")
        if objective_tok is None:
            raise self.error("missing 'min' statement")
        return self.build()

    def parse_var(self):
        name_tok = self.advance()
        if name_tok.kind != "ident":
            raise self.error("expected a variable name", name_tok)
        name = name_tok.text
        if name in KEYWORDS:
            raise SemanticError(f"line {name_tok.line}: {name!r} is a reserved word")
        if name in self.var_names:
            raise SemanticError(f"line {name_tok.line}: duplicate variable name {name!r}")
        kind_tok = self.advance()
        if kind_tok.kind == "ident" and kind_tok.text in ("bin", "binary"):
            spec = VariableSpec(name, BINARY, 0.0, 1.0)
        elif kind_tok.kind == "ident" and kind_tok.text in ("cont", "continuous"):
            self.expect_op("[")
            lo = self.parse_signed_number()
            self.expect_op(",")
            hi = self.parse_signed_number()
            self.expect_op("]")
            if lo > hi:
                raise SemanticError(f"line {name_tok.line}: empty bounds [{lo}, {hi}] for {name!r}")
            spec = VariableSpec(name, "continuous", lo, hi)
        else:
            raise self.error("expected 'cont [lo, hi]' or 'bin'", kind_tok)
        self.var_names[name] = len(self.var_specs)
        self.var_specs.append(spec)

    def parse_signed_number(self) -> float:
        sign = 1.0
        if self.at_op("-", "+"):
            sign = -1.0 if self.advance().text == "-" else 1.0
        if self.tok.kind != "number":
            raise self.error("expected a number")
        return sign * float(self.advance().text)

    def parse_constraint(self):
        label_tok = self.tok
        if label_tok.kind == "ident" and self.peek().kind == "op" and self.peek().text == ":":
            label = label_tok.text
            self.advance()
            self.advance()
        else:
            label = None
        if self.at_end_of_statement():
            raise self.error("empty constraint")
        lhs = self.parse_expr()
        if not self.at_op("=", "<=", ">="):
            raise self.error("expected '=', '<=' or '>='")
        rel = self.advance().text
        rhs = self.parse_expr()
        if rel == ">=":
            body = Binary("sub", rhs, lhs)
        elif isinstance(rhs, Const) and rhs.value == 0.0:
            body = lhs
        else:
            body = Binary("sub", lhs, rhs)
        target = self.eqs if rel == "=" else self.ineqs
        if label is None:
            label = f"{'e' if rel == '=' else 'g'}{len(target) + 1}"
        if label in self.labels:
            raise SemanticError(f"line {label_tok.line}: duplicate constraint label {label!r}")
        self.labels.add(label)
        target.append((label, body))

    # -- expressions --------------------------------------------------------------
    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while self.at_op("+", "-"):
            op = "add" if self.advance().text == "+" else "sub"
            node = Binary(op, node, self.parse_term())
        return node

    def parse_term(self) -> Expr:
        node = self.parse_unary()
        while self.at_op("*", "/"):
            op = "mul" if self.advance().text == "*" else "div"
            node = Binary(op, node, self.parse_unary())
        return node

    def parse_unary(self) -> Expr:
        if self.at_op("-"):
            nxt, after = self.peek(), self.peek(2)
            if nxt.kind == "number" and not (after.kind == "op" and after.text == "^"):
                self.advance()
                return Const(-float(self.advance().text))
            self.advance()
            return Unary("neg", self.parse_unary())
        if self.at_op("+"):
            self.advance()
            return self.parse_unary()
        return self.parse_power()

    def parse_power(self) -> Expr:
        base = self.parse_primary()
        if self.at_op("^"):
            self.advance()
            return Binary("pow", base, self.parse_unary())
        return base

    def parse_primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "number":
            self.advance()
            return Const(float(tok.text))
        if tok.kind == "ident":
            self.advance()
            if tok.text in FUNCTIONS:
                self.expect_op("(")
                arg = self.parse_expr()
                self.expect_op(")")
                return Unary(tok.text, arg)
            if tok.text not in self.var_names:
                raise SemanticError(
                    f"line {tok.line}, column {tok.col}: unknown identifier {tok.text!r}"
                )
            return Var(self.var_names[tok.text])
        if self.at_op("("):
            self.advance()
            node = self.parse_expr()
            self.expect_op(")")
            return node
        found = tok.text.strip() or "end of statement"
        raise self.error(f"expected an expression, found {found!r}")

    # -- assembly -----------------------------------------------------------------
    def build(self) -> MinlpProblem:
        if not self.var_specs:
            raise SemanticError("a problem needs at least one variable")
        order = [i for i, v in enumerate(self.var_specs) if v.kind != BINARY]
        order += [i for i, v in enumerate(self.var_specs) if v.kind == BINARY]
        new_index = {old: new for new, old in enumerate(order)}
        specs = [self.var_specs[i] for i in order]
        return MinlpProblem(
            variables=specs,
            objective=remap(self.objective, new_index),
            equalities=[remap(e, new_index) for _, e in self.eqs],
            inequalities=[remap(e, new_index) for _, e in self.ineqs],
            equality_names=[name for name, _ in self.eqs],
            inequality_names=[name for name, _ in self.ineqs],
        )


def remap(expr: Expr, mapping: dict[int, int]) -> Expr:
    """Rebuild ``expr`` with variable indices renamed through ``mapping``."""
    if all(mapping.get(k, k) == k for k in mapping):
        return expr
    built: dict[int, Expr] = {}
    for node in postorder(expr):
        if isinstance(node, Var):
            new = Var(mapping[node.index])
        elif isinstance(node, Const):
            new = node
        elif isinstance(node, Unary):
            new = Unary(node.op, built[id(node.arg)])
        else:
            new = Binary(node.op, built[id(node.left)], built[id(node.right)])
        built[id(node)] = new
    return built[id(expr)]


def parse_problem(text: str) -> MinlpProblem:
    """Parse problem text; raises :class:`ParseError` or :class:`SemanticError`."""
    return _Parser(text).parse()


def load_problem(path) -> MinlpProblem:
    with open(path, encoding="utf-8") as fh:
        return parse_problem(fh.read())


def print_problem(prob: MinlpProblem) -> str:
    names = prob.names
    lines = []
    for v in prob.variables:
        if v.kind == BINARY:
            lines.append(f"var {v.name} bin")
        else:
            lines.append(f"var {v.name} cont [{v.lower!r}, {v.upper!r}]")
    lines.append(f"min {to_text(prob.objective, names)}")
    for label, e in zip(prob.equality_names, prob.equalities):
        lines.append(f"st {label}: {to_text(e, names)} = 0")
    for label, e in zip(prob.inequality_names, prob.inequalities):
        lines.append(f"st {label}: {to_text(e, names)} <= 0")
    return "\n".join(lines) + "\n"

"""First-order formulae over task/answer atoms: AST, parser and renderer.

Surface syntax (tightest binding first)::

    ~f  !f                  residual / strong negation
    a * b   a & b           strong / weak conjunction      (left assoc)
    a (+) b a | b           t-conorm / weak disjunction    (left assoc)
    a => b  a -> b          residual / material implication (right assoc)
    a <=> b                 bi-residuum                    (left assoc)
    forall x: f   exists x: f   (scope extends as far right as possible)

Atoms are ``task(x)`` for a name in the task vocabulary, ``ans(x)`` for the
grounded gold-answer constraint, or a numeric constant in [0, 1].
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Union

__all__ = [
    "TaskAtom", "AnswerMatchAtom", "ConstAtom", "Unary", "Binary", "Quantified",
    "Formula", "KnowledgeBase", "Rule",
    "FOLError", "FormulaSyntaxError", "UnknownPredicate", "UnboundVariable",
    "VariableRebound", "DuplicateRuleName", "RuleError",
    "parse_formula", "parse_kb", "render", "depth", "node_count", "atoms",
    "BINARY_OPS", "UNARY_OPS",
]

ANSWER_PREDICATE = "ans"

# connective name -> surface token
BINARY_OPS = {
    "strong_conj": "*",
    "weak_conj": "&",
    "tconorm": "(+)",
    "weak_disj": "|",
    "residual_imply": "=>",
    "material_imply": "->",
    "biresiduum": "<=>",
}
UNARY_OPS = {"residual_neg": "~", "strong_neg": "!"}

_TOKEN_TO_OP = {tok: name for name, tok in BINARY_OPS.items()}

# precedence level per binary connective; larger binds tighter
_LEVEL = {
    "strong_conj": 4, "weak_conj": 4,
    "tconorm": 3, "weak_disj": 3,
    "residual_imply": 2, "material_imply": 2,
    "biresiduum": 1,
}
_RIGHT_ASSOC = {2}


# --------------------------------------------------------------------------- AST


@dataclass(frozen=True)
class TaskAtom:
    task: str
    var: str


@dataclass(frozen=True)
class AnswerMatchAtom:
    var: str


@dataclass(frozen=True)
class ConstAtom:
    value: float

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise ValueError(f"constant {self.value} outside [0, 1]")
        object.__setattr__(self, "value", float(self.value) + 0.0)


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Formula"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Quantified:
    quantifier: str  # "forall" | "exists"
    var: str
    body: "Formula"


Formula = Union[TaskAtom, AnswerMatchAtom, ConstAtom, Unary, Binary, Quantified]


@dataclass(frozen=True)
class Rule:
    name: str
    formula: Formula
    weight: float = 1.0


@dataclass(frozen=True)
class KnowledgeBase:
    rules: tuple[Rule, ...] = ()

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self) -> Iterator[Rule]:
        return iter(self.rules)

    def __getitem__(self, name: str) -> Rule:
        for rule in self.rules:
            if rule.name == name:
                return rule
        raise KeyError(name)


# ------------------------------------------------------------------------ errors


class FOLError(Exception):
    """Base class for every diagnostic raised while reading formulae."""


class FormulaSyntaxError(FOLError):
    def __init__(self, position: int, expected: str, found: str = ""):
        self.position = position
        self.expected = expected
        self.found = found
        super().__init__(f"at position {position}: expected {expected}, found {found or 'end of input'}")


class UnknownPredicate(FOLError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown predicate {name!r}")


class UnboundVariable(FOLError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"variable {name!r} is not bound by any quantifier")


class VariableRebound(FOLError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"variable {name!r} is bound by more than one enclosing quantifier")


class DuplicateRuleName(FOLError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"duplicate rule name {name!r}")


class RuleError(FOLError):
    """A rule line failed to parse; wraps the underlying diagnostic."""

    def __init__(self, rule: str, line: int, cause: Exception):
        self.rule = rule
        self.line = line
        self.cause = cause
        super().__init__(f"rule {rule!r} (line {line}): {cause}")


# ------------------------------------------------------------------------- lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=>|=>|->|\(\+\)|[*&|~!():])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # num | ident | op | eof
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(pos, "a token", repr(text[pos]))
        kind = m.lastgroup
        if kind != "ws":
            out.append(_Tok(kind, m.group(), pos))
        pos = m.end()
    out.append(_Tok("eof", "", len(text)))
    return out


# ------------------------------------------------------------------------ parser


class _Parser:
    def __init__(self, text: str, vocab: frozenset[str]):
        self.toks = _tokenize(text)
        self.i = 0
        self.vocab = vocab

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, expected: str):
        raise FormulaSyntaxError(self.tok.pos, expected, self.tok.text)

    def eat(self, text: str) -> _Tok:
        if self.tok.text != text or self.tok.kind == "eof":
            self.fail(repr(text))
        t = self.tok
        self.i += 1
        return t

    def parse(self) -> Formula:
        f = self.formula()
        if self.tok.kind != "eof":
            self.fail("end of input")
        return f

    def formula(self) -> Formula:
        if self.tok.kind == "ident" and self.tok.text in ("forall", "exists"):
            return self.quantified()
        return self.binary(1)

    def quantified(self) -> Formula:
        q = self.tok.text
        self.i += 1
        if self.tok.kind != "ident" or self.tok.text in ("forall", "exists"):
            self.fail("a variable name")
        var = self.tok.text
        self.i += 1
        if self.tok.kind == "ident" and self.tok.text in ("forall", "exists"):
            return Quantified(q, var, self.quantified())
        self.eat(":")
        return Quantified(q, var, self.formula())

    def binary(self, level: int) -> Formula:
        if level > 4:
            return self.unary()
        left = self.binary(level + 1)
        while self.tok.kind == "op" and self.tok.text in _TOKEN_TO_OP:
            op = _TOKEN_TO_OP[self.tok.text]
            if _LEVEL[op] != level:
                break
            self.i += 1
            if level in _RIGHT_ASSOC:
                right = self.binary(level)
                return Binary(op, left, right)
            right = self.operand(level + 1)
            left = Binary(op, left, right)
        return left

    def operand(self, level: int) -> Formula:
        # a quantifier may open the right operand and then swallows the rest
        if self.tok.kind == "ident" and self.tok.text in ("forall", "exists"):
            return self.quantified()
        return self.binary(level)

    def unary(self) -> Formula:
        t = self.tok
        if t.kind == "op" and t.text in ("~", "!"):
            self.i += 1
            op = "residual_neg" if t.text == "~" else "strong_neg"
            return Unary(op, self.unary())
        if t.kind == "ident" and t.text in ("forall", "exists"):
            return self.quantified()
        return self.primary()

    def primary(self) -> Formula:
        t = self.tok
        if t.kind == "op" and t.text == "(":
            self.i += 1
            f = self.formula()
            self.eat(")")
            return f
        if t.kind == "num":
            self.i += 1
            value = float(t.text)
            if not 0.0 <= value <= 1.0:
                raise FormulaSyntaxError(t.pos, "a constant in [0, 1]", t.text)
            return ConstAtom(value)
        if t.kind == "ident":
            self.i += 1
            name = t.text
            self.eat("(")
            if self.tok.kind != "ident":
                self.fail("a variable name")
            var = self.tok.text
            self.i += 1
            self.eat(")")
            if name == ANSWER_PREDICATE:
                return AnswerMatchAtom(var)
            if name not in self.vocab:
                raise UnknownPredicate(name)
            return TaskAtom(name, var)
        self.fail("an atom, constant, negation or '('")


def _check_binding(f: Formula, bound: tuple[str, ...] = ()) -> None:
    if isinstance(f, (TaskAtom, AnswerMatchAtom)):
        if f.var not in bound:
            raise UnboundVariable(f.var)
    elif isinstance(f, Unary):
        _check_binding(f.arg, bound)
    elif isinstance(f, Binary):
        _check_binding(f.left, bound)
        _check_binding(f.right, bound)
    elif isinstance(f, Quantified):
        if f.var in bound:
            raise VariableRebound(f.var)
        _check_binding(f.body, bound + (f.var,))


def parse_formula(text: str, vocab: Iterable[str]) -> Formula:
    """Parse and validate a closed formula.

    Raises a subclass of :class:`FOLError` on any malformed input; never
    anything else.
    """
    if not isinstance(text, str):
        raise FormulaSyntaxError(0, "a text string", type(text).__name__)
    if not text.strip():
        raise FormulaSyntaxError(0, "a formula")
    vocab = frozenset(vocab)
    try:
        f = _Parser(text, vocab).parse()
        _check_binding(f)
    except RecursionError:
        raise FormulaSyntaxError(0, "a formula of reasonable nesting depth") from None
    return f


_RULE_RE = re.compile(
    r'^rule\s+"(?P<name>[^"]*)"\s*(?:weight\s+(?P<weight>\S+?)\s*)?:(?P<body>.*)$'
)


def _strip_comment(line: str) -> str:
    in_quote = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_quote = not in_quote
        elif ch == "#" and not in_quote:
            return line[:i]
    return line


def parse_kb(text: str, vocab: Iterable[str]) -> KnowledgeBase:
    """Read a rule file: one ``rule "<name>" [weight <w>]: <formula>`` per line."""
    vocab = frozenset(vocab)
    rules: list[Rule] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        m = _RULE_RE.match(line)
        if m is None:
            raise RuleError("?", lineno, FormulaSyntaxError(0, 'rule "<name>" [weight <w>]: <formula>', line[:20]))
        name = m.group("name")
        if name in seen:
            raise DuplicateRuleName(name)
        weight = 1.0
        if m.group("weight") is not None:
            try:
                weight = float(m.group("weight"))
            except ValueError:
                raise RuleError(name, lineno, FormulaSyntaxError(0, "a numeric weight", m.group("weight"))) from None
            if not (weight >= 0.0 and weight != float("inf")):
                raise RuleError(name, lineno, ValueError(f"weight must be finite and non-negative, got {weight}"))
        try:
            formula = parse_formula(m.group("body"), vocab)
        except FOLError as exc:
            raise RuleError(name, lineno, exc) from exc
        seen.add(name)
        rules.append(Rule(name, formula, weight))
    return KnowledgeBase(tuple(rules))


# ---------------------------------------------------------------------- renderer


def _fmt_const(v: float) -> str:
    return repr(float(v))


def _render(f: Formula, ctx_level: int, side: str) -> str:
    """Render *f* as operand of a context binding at ``ctx_level``."""
    if isinstance(f, TaskAtom):
        return f"{f.task}({f.var})"
    if isinstance(f, AnswerMatchAtom):
        return f"{ANSWER_PREDICATE}({f.var})"
    if isinstance(f, ConstAtom):
        return _fmt_const(f.value)
    if isinstance(f, Unary):
        inner = _render(f.arg, 5, "unary")
        return UNARY_OPS[f.op] + inner
    if isinstance(f, Quantified):
        prefix = f"{f.quantifier} {f.var}"
        body = f.body
        while isinstance(body, Quantified):
            prefix += f" {body.quantifier} {body.var}"
            body = body.body
        s = f"{prefix}: {_render(body, 0, 'top')}"
        # a quantifier only runs to the end safely at top level or as the
        # trailing operand of a chain
        return s if side in ("top", "last") else f"({s})"
    level = _LEVEL[f.op]
    paren = level < ctx_level
    right_side = "last" if (paren or side in ("top", "last")) else "inner"
    if level in _RIGHT_ASSOC:
        left = _render(f.left, level + 1, "inner")
        right = _render(f.right, level, right_side)
    else:
        left = _render(f.left, level, "inner")
        right = _render(f.right, level + 1, right_side)
    s = f"{left} {BINARY_OPS[f.op]} {right}"
    return f"({s})" if paren else s


def render(f: Formula) -> str:
    """Canonical text with the fewest parentheses the grammar allows."""
    return _render(f, 0, "top")


# --------------------------------------------------------------------- queries


def depth(f: Formula) -> int:
    if isinstance(f, Unary):
        return 1 + depth(f.arg)
    if isinstance(f, Binary):
        return 1 + max(depth(f.left), depth(f.right))
    if isinstance(f, Quantified):
        return 1 + depth(f.body)
    return 1


def node_count(f: Formula) -> int:
    if isinstance(f, Unary):
        return 1 + node_count(f.arg)
    if isinstance(f, Binary):
        return 1 + node_count(f.left) + node_count(f.right)
    if isinstance(f, Quantified):
        return 1 + node_count(f.body)
    return 1


def atoms(f: Formula) -> Iterator[Formula]:
    if isinstance(f, Unary):
        yield from atoms(f.arg)
    elif isinstance(f, Binary):
        yield from atoms(f.left)
        yield from atoms(f.right)
    elif isinstance(f, Quantified):
        yield from atoms(f.body)
    else:
        yield f

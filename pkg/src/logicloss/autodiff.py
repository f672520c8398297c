"""Reverse-mode differentiation over scalar expression graphs.

Graphs are built from :func:`var`, :func:`const` and the usual operators.
Every node is a scalar; evaluation also accepts equally-shaped numpy arrays
as input values, in which case the same scalar graph is evaluated
elementwise over all of them (one graph, many bindings).

Subgradient conventions at kinks: ``minimum``/``maximum`` send the whole
gradient to their first argument on ties, ``clamp0`` passes the gradient
unless its argument is strictly negative, ``absolute`` has zero gradient
at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "Expr", "var", "const", "log", "exp", "minimum", "maximum", "absolute",
    "clamp0", "min_of", "sum_of", "inputs_of",
    "eval_forward", "eval_gradient", "value_and_grad", "finite_diff_check",
    "GradientReport", "UnboundInput", "NonFiniteResult", "to_prefix",
    "CompiledGraph", "compile_graph",
]


class UnboundInput(KeyError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(name)

    def __str__(self):
        return f"input {self.name!r} has no value"


class NonFiniteResult(ArithmeticError):
    def __init__(self, node_id: int, op: str):
        self.node_id = node_id
        self.op = op
        super().__init__(f"node {node_id} ({op}) produced a non-finite value")


_UNARY = {"neg", "log", "exp", "pow", "abs", "clamp0"}
_BINARY = {"add", "sub", "mul", "div", "min", "max"}


class Expr:
    """A node in a scalar expression DAG. Immutable once built."""

    __slots__ = ("op", "args", "payload", "_topo")

    def __init__(self, op: str, args: tuple["Expr", ...] = (), payload=None):
        self.op = op
        self.args = args
        self.payload = payload  # input name, constant value, or pow exponent
        self._topo = None

    def __add__(self, other):
        return Expr("add", (self, _lift(other)))

    def __radd__(self, other):
        return Expr("add", (_lift(other), self))

    def __sub__(self, other):
        return Expr("sub", (self, _lift(other)))

    def __rsub__(self, other):
        return Expr("sub", (_lift(other), self))

    def __mul__(self, other):
        return Expr("mul", (self, _lift(other)))

    def __rmul__(self, other):
        return Expr("mul", (_lift(other), self))

    def __truediv__(self, other):
        return Expr("div", (self, _lift(other)))

    def __rtruediv__(self, other):
        return Expr("div", (_lift(other), self))

    def __neg__(self):
        return Expr("neg", (self,))

    def __pow__(self, exponent: float):
        if isinstance(exponent, Expr):
            raise TypeError("only constant exponents are supported")
        return Expr("pow", (self,), float(exponent))

    def __repr__(self):
        return to_prefix(self, max_len=80)

    def topo(self) -> list["Expr"]:
        """Nodes in dependency order, root last (cached)."""
        if self._topo is None:
            order, seen = [], set()
            stack = [(self, False)]
            while stack:
                node, expanded = stack.pop()
                if expanded:
                    order.append(node)
                    continue
                if id(node) in seen:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for child in reversed(node.args):
                    if id(child) not in seen:
                        stack.append((child, False))
            self._topo = order
        return self._topo


def _lift(x) -> Expr:
    return x if isinstance(x, Expr) else const(x)


def var(name: str) -> Expr:
    return Expr("input", (), name)


def const(value: float) -> Expr:
    return Expr("const", (), float(value))


def log(x: Expr) -> Expr:
    return Expr("log", (_lift(x),))


def exp(x: Expr) -> Expr:
    return Expr("exp", (_lift(x),))


def minimum(a, b) -> Expr:
    return Expr("min", (_lift(a), _lift(b)))


def maximum(a, b) -> Expr:
    return Expr("max", (_lift(a), _lift(b)))


def absolute(x) -> Expr:
    return Expr("abs", (_lift(x),))


def clamp0(x) -> Expr:
    """max{0, x} as a dedicated node."""
    return Expr("clamp0", (_lift(x),))


def sum_of(terms) -> Expr:
    terms = list(terms)
    if not terms:
        return const(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def min_of(terms) -> Expr:
    terms = list(terms)
    if not terms:
        raise ValueError("min_of needs at least one term")
    out = terms[0]
    for t in terms[1:]:
        out = minimum(out, t)
    return out


def inputs_of(e: Expr) -> list[str]:
    """Input names in first-visit order, without duplicates."""
    names = []
    for node in e.topo():
        if node.op == "input" and node.payload not in names:
            names.append(node.payload)
    return names


# -------------------------------------------------------------------- evaluation


def _forward(e: Expr, inputs: Mapping[str, float]) -> list:
    order = e.topo()
    vals = [None] * len(order)
    index = {id(n): i for i, n in enumerate(order)}
    with np.errstate(all="ignore"):
        for i, node in enumerate(order):
            op = node.op
            if op == "input":
                try:
                    vals[i] = inputs[node.payload]
                except KeyError:
                    raise UnboundInput(node.payload) from None
                continue
            if op == "const":
                vals[i] = node.payload
                continue
            a = vals[index[id(node.args[0])]]
            if op in _BINARY:
                b = vals[index[id(node.args[1])]]
                if op == "add":
                    v = a + b
                elif op == "sub":
                    v = a - b
                elif op == "mul":
                    v = a * b
                elif op == "div":
                    v = a / b if not _is_zero_scalar(b) else math.copysign(math.inf, a) if a else math.nan
                elif op == "min":
                    v = np.minimum(a, b) if _arr(a, b) else (a if a <= b else b)
                else:
                    v = np.maximum(a, b) if _arr(a, b) else (a if a >= b else b)
            elif op == "neg":
                v = -a
            elif op == "log":
                v = np.log(a) if _arr(a) else (math.log(a) if a > 0 else (-math.inf if a == 0 else math.nan))
            elif op == "exp":
                v = np.exp(a) if _arr(a) else _safe_exp(a)
            elif op == "pow":
                v = np.power(a, node.payload) if _arr(a) else _safe_pow(a, node.payload)
            elif op == "abs":
                v = abs(a)
            elif op == "clamp0":
                v = np.maximum(a, 0.0) if _arr(a) else (a if a >= 0 else 0.0)
            else:  # pragma: no cover
                raise ValueError(f"unknown op {op}")
            vals[i] = v
    return vals


def _arr(*xs) -> bool:
    return any(isinstance(x, np.ndarray) for x in xs)


def _is_zero_scalar(b) -> bool:
    return not isinstance(b, np.ndarray) and b == 0


def _safe_exp(a: float) -> float:
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


def _safe_pow(a: float, c: float) -> float:
    try:
        return float(a**c) if not (a == 0 and c < 0) else math.inf
    except (OverflowError, ZeroDivisionError):
        return math.inf


def _finite(v) -> bool:
    if isinstance(v, np.ndarray):
        return bool(np.isfinite(v).all())
    return math.isfinite(v)


def _check_finite(e: Expr, vals: list) -> None:
    if _finite(vals[-1]):
        return
    for i, (node, v) in enumerate(zip(e.topo(), vals)):
        if not _finite(v):
            raise NonFiniteResult(i, node.op)


def eval_forward(e: Expr, inputs: Mapping[str, float]):
    """Value of *e*; raises instead of ever returning NaN or infinity."""
    vals = _forward(e, inputs)
    _check_finite(e, vals)
    out = vals[-1]
    return float(out) if not isinstance(out, np.ndarray) else out


def value_and_grad(e: Expr, inputs: Mapping[str, float]):
    """Forward value plus reverse-mode gradient for every bound input name."""
    order = e.topo()
    vals = _forward(e, inputs)
    _check_finite(e, vals)
    index = {id(n): i for i, n in enumerate(order)}
    adj = [0.0] * len(order)
    adj[-1] = 1.0
    grads: dict[str, object] = {name: 0.0 for name in inputs}
    with np.errstate(all="ignore"):
        for i in range(len(order) - 1, -1, -1):
            node = order[i]
            g = adj[i]
            op = node.op
            if op == "const":
                continue
            if op == "input":
                grads[node.payload] = grads.get(node.payload, 0.0) + g
                continue
            ia = index[id(node.args[0])]
            a = vals[ia]
            if op in _BINARY:
                ib = index[id(node.args[1])]
                b = vals[ib]
                if op == "add":
                    ga, gb = g, g
                elif op == "sub":
                    ga, gb = g, -g
                elif op == "mul":
                    ga, gb = g * b, g * a
                elif op == "div":
                    ga, gb = g / b, -g * a / (b * b)
                elif op == "min":
                    first = (a <= b)
                    ga, gb = _route(g, first)
                else:
                    first = (a >= b)
                    ga, gb = _route(g, first)
                adj[ia] = adj[ia] + ga
                adj[ib] = adj[ib] + gb
                continue
            if op == "neg":
                ga = -g
            elif op == "log":
                ga = g / a
            elif op == "exp":
                ga = g * vals[i]
            elif op == "pow":
                c = node.payload
                ga = g * c * (np.power(a, c - 1) if _arr(a) else _safe_pow(a, c - 1))
            elif op == "abs":
                ga = g * np.sign(a) if _arr(a) else g * ((a > 0) - (a < 0))
            else:  # clamp0
                ga = g * np.where(a < 0, 0.0, 1.0) if _arr(a) else (0.0 if a < 0 else g)
            adj[ia] = adj[ia] + ga
    out = vals[-1]
    value = float(out) if not isinstance(out, np.ndarray) else out
    return value, {k: (float(v) if not isinstance(v, np.ndarray) else v) for k, v in grads.items()}


def _route(g, first):
    if isinstance(first, np.ndarray):
        mask = first.astype(float)
        return g * mask, g * (1.0 - mask)
    return (g, 0.0) if first else (0.0, g)


def eval_gradient(e: Expr, inputs: Mapping[str, float]) -> dict[str, float]:
    return value_and_grad(e, inputs)[1]


# ------------------------------------------------------------------ grad checks


@dataclass
class GradientReport:
    analytic: dict[str, float]
    numeric: dict[str, float]
    max_rel_error: float
    tol: float
    passed: bool
    kink_margin: float = math.inf
    near_kink: bool = False

    def to_dict(self) -> dict:
        return {
            "analytic": {k: float(v) for k, v in self.analytic.items()},
            "numeric": {k: float(v) for k, v in self.numeric.items()},
            "max_rel_error": self.max_rel_error,
            "tol": self.tol,
            "passed": self.passed,
            "kink_margin": None if math.isinf(self.kink_margin) else self.kink_margin,
            "near_kink": self.near_kink,
        }


def rel_error(a: float, f: float, floor: float = 1e-3) -> float:
    """Relative error, absolute below ``floor`` where difference quotients are noise."""
    return abs(a - f) / max(abs(a), abs(f), floor)


def kink_margin(e: Expr, inputs: Mapping[str, float]) -> float:
    """Smallest distance of any min/max/abs/clamp0 argument from its kink."""
    vals = _forward(e, inputs)
    index = {id(n): i for i, n in enumerate(e.topo())}
    margin = math.inf
    for node in e.topo():
        if node.op in ("min", "max"):
            d = abs(vals[index[id(node.args[0])]] - vals[index[id(node.args[1])]])
        elif node.op in ("abs", "clamp0"):
            d = abs(vals[index[id(node.args[0])]])
        else:
            continue
        margin = min(margin, float(np.min(d)))
    return margin


def finite_diff_check(e: Expr, inputs: Mapping[str, float], h: float = 1e-5, tol: float = 1e-4,
                      kink_tol: float = 1e-2) -> GradientReport:
    """Compare reverse-mode gradients against central differences.

    ``near_kink`` is set when, for some input, the forward and backward
    one-sided slopes disagree by more than ``kink_tol`` (relative): the
    function is not differentiable within ``h`` there and the comparison
    says nothing. Ties between branches with equal slopes (e.g. several
    clamped terms at 0 inside a min) are smooth and not flagged.
    """
    analytic = eval_gradient(e, inputs)
    names = list(inputs)
    m = len(names)
    # one array-valued pass: slot 0 is the base point, 1 + 2k / 2 + 2k the
    # +h / -h probes of input k
    batch = {}
    for k, name in enumerate(names):
        col = np.full(2 * m + 1, float(inputs[name]))
        col[1 + 2 * k] += h
        col[2 + 2 * k] -= h
        batch[name] = col
    vals = np.broadcast_to(eval_forward(e, batch), (2 * m + 1,))
    f0 = vals[0]
    numeric = {}
    gap = 0.0
    for k, name in enumerate(names):
        fu, fd = vals[1 + 2 * k], vals[2 + 2 * k]
        numeric[name] = float((fu - fd) / (2 * h))
        gap = max(gap, rel_error((fu - f0) / h, (f0 - fd) / h))
    worst = max((rel_error(analytic[n], numeric[n]) for n in inputs), default=0.0)
    margin = kink_margin(e, inputs)
    return GradientReport(analytic, numeric, float(worst), tol, bool(worst <= tol), float(margin),
                          bool(gap > kink_tol))


# ----------------------------------------------------------------------- printing


def to_prefix(e: Expr, max_len: int | None = None) -> str:
    """Prefix rendering, e.g. ``(add (neg (log p)) 1.0)``."""
    memo: dict[int, str] = {}
    for node in e.topo():
        if node.op == "input":
            s = node.payload
        elif node.op == "const":
            s = repr(node.payload)
        elif node.op == "pow":
            s = f"(pow {memo[id(node.args[0])]} {node.payload!r})"
        else:
            s = "(" + " ".join([node.op] + [memo[id(a)] for a in node.args]) + ")"
        memo[id(node)] = s
        if max_len is not None and len(s) > 8 * max_len:
            memo[id(node)] = s[: 8 * max_len]
    out = memo[id(e)]
    if max_len is not None and len(out) > max_len:
        out = out[: max_len - 3] + "..."
    return out


# ------------------------------------------------------------ generated kernels


@dataclass
class CompiledGraph:
    """Straight-line forward/backward code generated from a graph.

    Same semantics as :func:`value_and_grad`, minus the per-node dispatch and
    the finiteness diagnostics (callers check the returned value).
    """

    inputs: list[str]
    source: str
    _fn: Callable = field(repr=False)

    def __call__(self, values: Mapping[str, np.ndarray]):
        return self._fn(*[values[n] for n in self.inputs])


def compile_graph(e: Expr) -> CompiledGraph:
    order = e.topo()
    index = {id(n): i for i, n in enumerate(order)}
    names = inputs_of(e)
    arg_of = {n: f"in{k}" for k, n in enumerate(names)}
    fwd, bwd = [], []
    for i, node in enumerate(order):
        v = f"v{i}"
        a = f"v{index[id(node.args[0])]}" if node.args else None
        b = f"v{index[id(node.args[1])]}" if len(node.args) > 1 else None
        op = node.op
        expr = {
            "input": lambda: arg_of[node.payload],
            "const": lambda: repr(node.payload),
            "add": lambda: f"{a} + {b}",
            "sub": lambda: f"{a} - {b}",
            "mul": lambda: f"{a} * {b}",
            "div": lambda: f"{a} / {b}",
            "neg": lambda: f"-{a}",
            "log": lambda: f"_np.log({a})",
            "exp": lambda: f"_np.exp({a})",
            "pow": lambda: f"_np.power({a}, {node.payload!r})",
            "abs": lambda: f"_np.abs({a})",
            "clamp0": lambda: f"_np.maximum({a}, 0.0)",
            "min": lambda: f"_np.minimum({a}, {b})",
            "max": lambda: f"_np.maximum({a}, {b})",
        }[op]()
        fwd.append(f"    {v} = {expr}")
    n = len(order)
    bwd.append(f"    g{n - 1} = 1.0")
    used = {n - 1}
    for i in range(n - 1, -1, -1):
        node = order[i]
        if node.op in ("input", "const") or i not in used:
            continue
        g = f"g{i}"
        a_i = index[id(node.args[0])]
        a = f"v{a_i}"
        contribs: list[tuple[int, str]] = []
        if node.op in _BINARY:
            b_i = index[id(node.args[1])]
            b = f"v{b_i}"
            if node.op == "add":
                contribs = [(a_i, g), (b_i, g)]
            elif node.op == "sub":
                contribs = [(a_i, g), (b_i, f"-{g}")]
            elif node.op == "mul":
                contribs = [(a_i, f"{g} * {b}"), (b_i, f"{g} * {a}")]
            elif node.op == "div":
                contribs = [(a_i, f"{g} / {b}"), (b_i, f"-{g} * {a} / ({b} * {b})")]
            else:
                cmp = "<=" if node.op == "min" else ">="
                bwd.append(f"    m{i} = ({a} {cmp} {b})")
                contribs = [(a_i, f"{g} * m{i}"), (b_i, f"{g} * (1.0 - m{i})")]
        elif node.op == "neg":
            contribs = [(a_i, f"-{g}")]
        elif node.op == "log":
            contribs = [(a_i, f"{g} / {a}")]
        elif node.op == "exp":
            contribs = [(a_i, f"{g} * v{i}")]
        elif node.op == "pow":
            c = node.payload
            contribs = [(a_i, f"{g} * {c!r} * _np.power({a}, {c - 1!r})")]
        elif node.op == "abs":
            contribs = [(a_i, f"{g} * _np.sign({a})")]
        elif node.op == "clamp0":
            contribs = [(a_i, f"{g} * ({a} >= 0)")]
        for j, term in contribs:
            if j in used:
                bwd.append(f"    g{j} = g{j} + {term}")
            else:
                bwd.append(f"    g{j} = {term}")
                used.add(j)
    grads = []
    for name in names:
        slots = [i for i, node in enumerate(order) if node.op == "input" and node.payload == name and i in used]
        grads.append(" + ".join(f"g{i}" for i in slots) if slots else "0.0")
    args = ", ".join(arg_of[nm] for nm in names)
    src = "\n".join(
        [f"def _kernel({args}):", "  with _np.errstate(all='ignore'):"]
        + fwd + bwd
        + [f"    return v{n - 1}, ({', '.join(grads)}{',' if len(grads) == 1 else ''})"]
    )
    scope = {"_np": np}
    exec(compile(src, "<logicloss.autodiff>", "exec"), scope)
    return CompiledGraph(names, src, scope["_kernel"])

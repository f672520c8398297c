"""Formulae to truth degrees, and to losses computed in generator space.

``truth_degree`` interprets a formula over a group of samples with any
semantics. ``compile`` emits ``g(truth)`` as an autodiff graph without ever
applying the pseudo-inverse: conjunctions become sums (clamped at g(0⁺) for
nilpotent generators), implications ``max{0, g(b) - g(a)}``, bi-residua
``|g(a) - g(b)|``, weak conjunction/disjunction max/min of generator values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from . import fol
from .kb import EntailmentKB, builtin_kb
from .tnorms import Generator, Semantics, UnsupportedConnective, eval_connective

__all__ = [
    "SampleOutputs", "PairBinding", "CompiledLoss", "LossGraph",
    "truth_degree", "compile_formula", "supervised_loss", "pair_loss_value",
    "pair_consistency_loss", "pair_loss_expr", "total_loss", "family_pairs",
    "LEMMA_CONNECTIVES",
]

# connectives whose loss can be written without the pseudo-inverse
LEMMA_CONNECTIVES = frozenset(
    {"weak_conj", "weak_disj", "strong_conj", "residual_imply", "residual_neg", "biresiduum"}
)


@dataclass(frozen=True)
class SampleOutputs:
    answer_probs: np.ndarray
    task_probs: np.ndarray
    gold_answer: int
    gold_task: int

    def __post_init__(self):
        a = np.asarray(self.answer_probs, dtype=float)
        t = np.asarray(self.task_probs, dtype=float)
        object.__setattr__(self, "answer_probs", a)
        object.__setattr__(self, "task_probs", t)
        for name, v in (("answer_probs", a), ("task_probs", t)):
            if v.ndim != 1 or not np.all((v >= 0) & (v <= 1)):
                raise ValueError(f"{name} must be a vector of probabilities")
            if abs(v.sum() - 1.0) > 1e-6:
                raise ValueError(f"{name} sums to {v.sum()}, not 1")
        if not (0 <= self.gold_answer < a.size):
            raise IndexError(f"gold answer {self.gold_answer} out of range")
        if not (0 <= self.gold_task < t.size):
            raise IndexError(f"gold task {self.gold_task} out of range")

    @property
    def p_answer(self) -> float:
        return float(self.answer_probs[self.gold_answer])

    @property
    def p_task(self) -> float:
        return float(self.task_probs[self.gold_task])


@dataclass(frozen=True)
class PairBinding:
    x1: SampleOutputs
    x2: SampleOutputs


def _gen(sem: Semantics | Generator) -> Generator:
    return sem if isinstance(sem, Generator) else sem.generator()


def _task_index(tasks: Sequence[str] | None) -> dict[str, int]:
    names = tasks if tasks is not None else builtin_kb().task_names
    return {n: i for i, n in enumerate(names)}


# ----------------------------------------------------------------- truth degrees


def truth_degree(f: fol.Formula, samples: Sequence[SampleOutputs], sem: Semantics,
                 tasks: Sequence[str] | None = None) -> float:
    """Truth of a closed formula when every quantifier ranges over ``samples``.

    ``forall`` is the n-ary strong conjunction (generator form
    ``g⁻¹(min{g(0⁺), Σ g(f)})`` or iterated table t-norm), ``exists`` the
    weak disjunction (max).
    """
    index = _task_index(tasks)
    gen = sem.generator() if sem.table is None else None

    def conj_all(values: list[float]) -> float:
        if gen is not None:
            return gen.inverse(min(gen.g0, sum(gen(v) for v in values)))
        return reduce(lambda a, b: eval_connective(sem, "strong_conj", a, b), values, 1.0)

    def ev(node: fol.Formula, env: dict[str, SampleOutputs]) -> float:
        if isinstance(node, fol.ConstAtom):
            return node.value
        if isinstance(node, fol.AnswerMatchAtom):
            return _bound(env, node.var).p_answer
        if isinstance(node, fol.TaskAtom):
            return float(_bound(env, node.var).task_probs[index[node.task]])
        if isinstance(node, fol.Unary):
            return eval_connective(sem, node.op, ev(node.arg, env))
        if isinstance(node, fol.Binary):
            return eval_connective(sem, node.op, ev(node.left, env), ev(node.right, env))
        values = [ev(node.body, {**env, node.var: s}) for s in samples]
        if node.quantifier == "forall":
            return conj_all(values) if values else 1.0
        return max(values, default=0.0)

    return ev(f, {})


def _bound(env, var):
    try:
        return env[var]
    except KeyError:
        raise fol.UnboundVariable(var) from None


# --------------------------------------------------------------------- compiling


@dataclass
class CompiledLoss:
    """A loss graph over named probability inputs.

    ``schema`` maps each input name to ``(sample index, "ans" | task name)``.
    """

    expr: ad.Expr
    schema: dict[str, tuple[int, str]]
    generator: Generator
    n_samples: int

    def bind(self, samples: Sequence[SampleOutputs], tasks: Sequence[str] | None = None) -> dict[str, float]:
        if len(samples) != self.n_samples:
            raise ValueError(f"loss compiled for {self.n_samples} samples, got {len(samples)}")
        index = _task_index(tasks)
        out = {}
        for name, (i, what) in self.schema.items():
            s = samples[i]
            out[name] = s.p_answer if what == "ans" else float(s.task_probs[index[what]])
        return out

    def evaluate(self, samples: Sequence[SampleOutputs], tasks: Sequence[str] | None = None) -> float:
        return ad.eval_forward(self.expr, self.bind(samples, tasks))

    def gradient(self, samples: Sequence[SampleOutputs], tasks: Sequence[str] | None = None) -> dict[str, float]:
        return ad.eval_gradient(self.expr, self.bind(samples, tasks))


def _input_name(i: int, what: str) -> str:
    return f"ans[{i}]" if what == "ans" else f"task[{i}].{what}"


def compile_formula(f: fol.Formula, sem: Semantics | Generator, n_samples: int = 1) -> CompiledLoss:
    """Generator-space loss of ``f`` grounded over ``n_samples`` samples.

    The value equals ``g(truth_degree(f))``. Only the connectives that admit
    this form are accepted.
    """
    gen = _gen(sem)
    strict = gen.strict
    schema: dict[str, tuple[int, str]] = {}
    leaves: dict[str, ad.Expr] = {}

    def leaf(i: int, what: str) -> ad.Expr:
        name = _input_name(i, what)
        if name not in leaves:
            schema[name] = (i, what)
            leaves[name] = gen.expr(ad.var(name))
        return leaves[name]

    def conj(terms: list[ad.Expr]) -> ad.Expr:
        total = ad.sum_of(terms)
        return total if strict else ad.minimum(ad.const(gen.g0), total)

    def c(node: fol.Formula, env: dict[str, int]) -> ad.Expr:
        if isinstance(node, fol.ConstAtom):
            value = gen(node.value)
            if math.isinf(value):
                raise UnsupportedConnective("constant 0 has an infinite generator value under a strict generator")
            return ad.const(value)
        if isinstance(node, fol.AnswerMatchAtom):
            return leaf(_bound(env, node.var), "ans")
        if isinstance(node, fol.TaskAtom):
            return leaf(_bound(env, node.var), node.task)
        if isinstance(node, fol.Quantified):
            terms = [c(node.body, {**env, node.var: i}) for i in range(n_samples)]
            if node.quantifier == "forall":
                return conj(terms)
            return ad.min_of(terms)
        if node.op not in LEMMA_CONNECTIVES:
            raise UnsupportedConnective(f"{node.op} has no pseudo-inverse-free loss form")
        if isinstance(node, fol.Unary):
            if strict:
                raise UnsupportedConnective("residual negation is degenerate (infinite loss) under a strict generator")
            return ad.clamp0(gen.g0 - c(node.arg, env))
        a, b = c(node.left, env), c(node.right, env)
        if node.op == "strong_conj":
            return conj([a, b])
        if node.op == "residual_imply":
            return ad.clamp0(b - a)
        if node.op == "biresiduum":
            return ad.absolute(a - b)
        if node.op == "weak_conj":
            return ad.maximum(a, b)
        return ad.minimum(a, b)  # weak_disj

    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    return CompiledLoss(c(f, {}), schema, gen, n_samples)


# -------------------------------------------------------------- training losses


def supervised_loss(outputs: Sequence[SampleOutputs], which: str, sem: Semantics | Generator) -> float:
    """Σ g(p of the gold class) over samples; ``which`` is answer or task."""
    gen = _gen(sem)
    if which not in ("answer", "task"):
        raise ValueError("which must be 'answer' or 'task'")
    return float(sum(gen(s.p_answer if which == "answer" else s.p_task) for s in outputs))


def pair_loss_value(pa1: float, pa2: float, max_rule_truth: float, pt1: float = 1.0, pt2: float = 1.0,
                    sem: Semantics | Generator = Semantics("product"),
                    include_task_antecedent: bool = True) -> float:
    """max{0, g(pa1) + g(pa2) - g(max_k R_k) [- g(pt1) - g(pt2)]}."""
    gen = _gen(sem)
    credit = gen(max_rule_truth)
    if include_task_antecedent:
        credit = credit + gen(pt1) + gen(pt2)
    debt = gen(pa1) + gen(pa2)
    if math.isinf(credit):
        return 0.0
    return max(0.0, debt - credit)


def pair_consistency_loss(b: PairBinding, kb: EntailmentKB, sem: Semantics | Generator,
                          include_task_antecedent: bool = True) -> float:
    gen = _gen(sem)
    if not kb.rules:
        raise ValueError("knowledge base has no rules")
    index = kb.task_index
    # g(max_k R_k) == min_k g(R_k) as g is decreasing
    g_best = math.inf
    for r in kb.rules:
        gx = gen(float(b.x1.task_probs[index[r.src]]))
        gy = gen(float(b.x2.task_probs[index[r.dst]]))
        if r.connective == "residual_imply":
            gr = 0.0 if math.isinf(gx) else max(0.0, gy - gx)
        else:
            gr = 0.0 if gx == gy else abs(gx - gy)
        g_best = min(g_best, gr)
    credit = g_best
    if include_task_antecedent:
        credit += gen(b.x1.p_task) + gen(b.x2.p_task)
    if math.isinf(credit):
        return 0.0
    return max(0.0, gen(b.x1.p_answer) + gen(b.x2.p_answer) - credit)


def _rule_credit(kb: EntailmentKB, gen: Generator, g1, g2) -> ad.Expr:
    """min_k g(R_k) built from generator-space leaves g1(task), g2(task)."""
    terms = []
    for r in kb.rules:
        gx, gy = g1(r.src), g2(r.dst)
        terms.append(ad.clamp0(gy - gx) if r.connective == "residual_imply" else ad.absolute(gx - gy))
    return ad.min_of(terms)


def pair_loss_expr(kb: EntailmentKB, sem: Semantics | Generator, include_task_antecedent: bool = True) -> ad.Expr:
    """The pair loss as one graph, reusable across pairs.

    Inputs: ``pa1, pa2`` (gold-answer probabilities), ``pt1, pt2`` (gold-task
    probabilities) and ``t1.<task>`` / ``t2.<task>`` for every rule endpoint.
    """
    gen = _gen(sem)
    cache: dict[str, ad.Expr] = {}

    def g(name: str) -> ad.Expr:
        if name not in cache:
            cache[name] = gen.expr(ad.var(name))
        return cache[name]

    credit = _rule_credit(kb, gen, lambda t: g(f"t1.{t}"), lambda t: g(f"t2.{t}"))
    if include_task_antecedent:
        credit = credit + g("pt1") + g("pt2")
    return ad.clamp0(g("pa1") + g("pa2") - credit)


def family_pairs(family_size: int, offset: int = 0) -> list[tuple[int, int]]:
    """Ordered pairs of distinct positions within one family."""
    idx = range(offset, offset + family_size)
    return [(i, j) for i in idx for j in idx if i != j]


class LossGraph(NamedTuple):
    value: float
    expr: ad.Expr
    inputs: dict[str, float]


def total_loss(batch: Sequence[SampleOutputs], pairs: Sequence[tuple[int, int]], kb: EntailmentKB,
               sem: Semantics | Generator, beta: float = 1.0,
               include_task_antecedent: bool = True) -> LossGraph:
    """β·L_pairs + L_answer + L_task as a differentiable graph.

    Inputs are named ``ans[i]`` (gold-answer probability of sample i) and
    ``task[i].<name>`` (probability of task ``name`` for sample i).
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    gen = _gen(sem)
    names = kb.task_names
    inputs: dict[str, float] = {}
    cache: dict[str, ad.Expr] = {}

    def g(i: int, what: str) -> ad.Expr:
        name = _input_name(i, what)
        if name not in cache:
            s = batch[i]
            inputs[name] = s.p_answer if what == "ans" else float(s.task_probs[kb.task_index[what]])
            cache[name] = gen.expr(ad.var(name))
        return cache[name]

    sup_ans = ad.sum_of(g(i, "ans") for i in range(len(batch)))
    sup_task = ad.sum_of(g(i, names[s.gold_task]) for i, s in enumerate(batch))
    pair_terms = []
    for i, j in pairs:
        if i == j:
            raise ValueError("pairs must join two different samples")
        credit = _rule_credit(kb, gen, lambda t, i=i: g(i, t), lambda t, j=j: g(j, t))
        if include_task_antecedent:
            credit = credit + g(i, names[batch[i].gold_task]) + g(j, names[batch[j].gold_task])
        pair_terms.append(ad.clamp0(g(i, "ans") + g(j, "ans") - credit))
    logic = ad.sum_of(pair_terms)
    if not gen.strict and pair_terms:
        logic = ad.minimum(ad.const(gen.g0), logic)
    expr = beta * logic + sup_ans + sup_task
    return LossGraph(ad.eval_forward(expr, inputs), expr, inputs)

compile = compile_formula

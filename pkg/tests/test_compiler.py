import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from logicloss import autodiff as ad
from logicloss import fol
from logicloss.compiler import (LEMMA_CONNECTIVES, PairBinding, SampleOutputs, compile_formula, family_pairs,
                                pair_consistency_loss, pair_loss_value, supervised_loss, total_loss, truth_degree)
from logicloss.kb import best_relation_truth, builtin_kb, rule_truth
from logicloss.tnorms import (GODEL, LUKASIEWICZ, PRODUCT, UnsupportedConnective, frank, generator_value,
                              schweizer_sklar)

from formulas import TASKS, closed_formulas

KB = builtin_kb()
NT = len(KB.task_names)
GENERATORS = [schweizer_sklar(l) for l in (0, 0.5, 1, 2)] + [frank(l) for l in (0.5, 1, 2)]
LEMMA_BINARY = tuple(sorted(LEMMA_CONNECTIVES - {"residual_neg"}))


def sample(p_answer, n_answers=4, gold=0, task_probs=None, gold_task=0, n_tasks=len(TASKS)):
    a = np.full(n_answers, (1.0 - p_answer) / (n_answers - 1))
    a[gold] = p_answer
    t = np.full(n_tasks, 1.0 / n_tasks) if task_probs is None else np.asarray(task_probs, float)
    return SampleOutputs(a, t, gold, gold_task)


def kb_sample(p_answer, task_probs, gold_task):
    return sample(p_answer, task_probs=task_probs, gold_task=gold_task, n_tasks=NT)


def spread(rng, n, floor=0.1):
    """A probability vector whose entries stay above floor / n."""
    return (1 - floor) * rng.dirichlet(np.ones(n)) + floor / n


# ------------------------------------------------------------------ truth degrees

def test_truth_degree_examples():
    f = fol.parse_formula("forall x: ans(x)", TASKS)
    assert truth_degree(f, [sample(1.0)], PRODUCT, TASKS) == 1.0
    assert truth_degree(f, [sample(0.5), sample(0.5)], PRODUCT, TASKS) == pytest.approx(0.25, abs=1e-12)
    rule = KB.find("queryObj", "queryAttrObj")[0]
    assert rule_truth(rule, {"queryObj": 0.9}, {"queryAttrObj": 0.6}, PRODUCT) == pytest.approx(0.6 / 0.9, abs=1e-12)


def test_exists_is_max():
    f = fol.parse_formula("exists x: ans(x)", TASKS)
    assert truth_degree(f, [sample(0.3), sample(0.7)], LUKASIEWICZ, TASKS) == 0.7


# ----------------------------------------------------------------- loss oracles

def test_cross_entropy_and_l1_forms():
    rng = np.random.default_rng(0)
    f = fol.parse_formula("forall x: ans(x)", TASKS)
    for _ in range(200):
        k = int(rng.integers(1, 5))
        probs = rng.uniform(0.01, 1.0, k)
        outs = [sample(p) for p in probs]
        ce = compile_formula(f, PRODUCT, k).evaluate(outs)
        assert ce == pytest.approx(-np.log(probs).sum(), abs=1e-12)
        l1 = compile_formula(f, LUKASIEWICZ, k).evaluate(outs)
        assert abs(l1 - min(1.0, float(np.sum(1 - probs)))) <= 1e-12


def test_compiled_expression_has_no_inverse():
    f = fol.parse_formula("forall x: ans(x) * queryGlobal(x) => ~chooseGlobal(x)", TASKS)
    text = ad.to_prefix(compile_formula(f, LUKASIEWICZ, 2).expr)
    assert "exp" not in text and "pow" not in text


def test_supervised_loss_examples():
    assert supervised_loss([sample(0.5)], "answer", PRODUCT) == pytest.approx(0.693147, abs=1e-6)
    assert supervised_loss([sample(0.9), sample(0.8)], "answer", LUKASIEWICZ) == pytest.approx(0.3, abs=1e-12)
    assert supervised_loss([sample(1.0)] * 3, "answer", PRODUCT) == 0.0
    with pytest.raises(ValueError):
        supervised_loss([sample(0.5)], "both", PRODUCT)
    with pytest.raises(IndexError):
        sample(0.5, gold=7)


def test_pair_loss_examples():
    # −ln .5 − ln .5 + ln .8 + ln .9 + ln .9, evaluated exactly
    exact = -2 * math.log(0.5) + math.log(0.8) + 2 * math.log(0.9)
    assert pair_loss_value(0.5, 0.5, 0.8, 0.9, 0.9) == pytest.approx(exact, abs=1e-15)
    assert pair_loss_value(0.9, 0.9, 0.2, 0.3, 0.3) == 0.0
    for sem in GENERATORS:
        assert pair_loss_value(1.0, 1.0, 1.0, 1.0, 1.0, sem) == 0.0
    without = pair_loss_value(0.5, 0.5, 0.8, include_task_antecedent=False)
    assert without == pytest.approx(-2 * math.log(0.5) + math.log(0.8), abs=1e-15)


def test_unsupported():
    with pytest.raises(UnsupportedConnective):
        compile_formula(fol.parse_formula("forall x: ans(x)", TASKS), GODEL)
    with pytest.raises(UnsupportedConnective):
        compile_formula(fol.parse_formula("forall x: ans(x)", TASKS), frank(0))
    for text in ("forall x: ans(x) (+) ans(x)", "forall x: ans(x) -> ans(x)", "forall x: !ans(x)"):
        with pytest.raises(UnsupportedConnective):
            compile_formula(fol.parse_formula(text, TASKS), LUKASIEWICZ)
    # residual negation is infinite under strict generators
    with pytest.raises(UnsupportedConnective):
        compile_formula(fol.parse_formula("forall x: ~ans(x)", TASKS), PRODUCT)
    with pytest.raises(UnsupportedConnective):
        compile_formula(fol.parse_formula("forall x: ans(x) * 0", TASKS), PRODUCT)
    with pytest.raises(UnsupportedConnective):
        pair_consistency_loss(PairBinding(kb_sample(.5, np.full(NT, 1 / NT), 0),
                                          kb_sample(.5, np.full(NT, 1 / NT), 1)), KB, GODEL)


# ---------------------------------------------------- simplification property

def _random_outputs(rng, n):
    return [sample(float(rng.uniform(0.05, 1.0)), task_probs=spread(rng, len(TASKS), 0.5),
                   gold_task=int(rng.integers(len(TASKS)))) for _ in range(n)]


@pytest.mark.parametrize("sem", GENERATORS, ids=lambda s: s.label)
@settings(max_examples=80)
@given(data=st.data(), seed=st.integers(0, 2**32 - 1))
def test_simplification_property(sem, data, seed):
    strict = sem.generator().strict
    f = data.draw(closed_formulas(max_depth=4, binary_ops=LEMMA_BINARY,
                                  unary_ops=() if strict else ("residual_neg",), min_const=0.01))
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    outs = _random_outputs(rng, n)
    truth = truth_degree(f, outs, sem, TASKS)
    assume(truth > 1e-10)  # below the log floor g no longer inverts exactly
    loss = compile_formula(f, sem, n).evaluate(outs, TASKS)
    assert abs(loss - generator_value(sem, truth)) <= 1e-9
    assert loss >= 0.0


@pytest.mark.parametrize("sem", GENERATORS, ids=lambda s: s.label)
@given(f=closed_formulas(max_depth=4, binary_ops=LEMMA_BINARY, unary_ops=(), tasks=("queryGlobal",),
                         min_const=1.0))
def test_loss_vanishes_when_every_atom_is_true(sem, f):
    outs = [sample(1.0, task_probs=[0, 0, 1, 0, 0], gold_task=2) for _ in range(2)]
    assert 0.0 <= compile_formula(f, sem, 2).evaluate(outs, TASKS) <= 1e-12


# ------------------------------------------------------------------ total loss

def _batch(rng, n):
    return [kb_sample(float(rng.uniform(0.05, 0.95)), spread(rng, NT), int(rng.integers(NT))) for _ in range(n)]


def test_beta_linearity_and_zero():
    rng = np.random.default_rng(1)
    batch = _batch(rng, 4)
    pairs = family_pairs(3)
    at = {b: total_loss(batch, pairs, KB, PRODUCT, beta=b).value for b in (0.0, 0.7, 1.4)}
    assert at[1.4] - at[0.0] == pytest.approx(2 * (at[0.7] - at[0.0]), abs=1e-9)
    sup = supervised_loss(batch, "answer", PRODUCT) + supervised_loss(batch, "task", PRODUCT)
    assert at[0.0] == pytest.approx(sup, abs=1e-12)
    assert total_loss(batch, [], KB, PRODUCT).value == pytest.approx(sup, abs=1e-12)


def test_additivity_with_known_pair():
    rule = KB.find("verifyGlobalTrue", "verifyGlobalFalse")[0]
    i_src, i_dst = KB.task_index[rule.src], KB.task_index[rule.dst]
    t1 = np.full(NT, 0.1 / (NT - 1))
    t1[i_src] = 0.9
    t2 = np.full(NT, 0.1 / (NT - 1))
    t2[i_dst] = 0.9
    x1 = kb_sample(0.5, t1, i_src)
    x2 = kb_sample(0.5, t2, i_dst)
    best = best_relation_truth(t1, t2, PRODUCT, KB)[1]
    pair = pair_loss_value(0.5, 0.5, best, x1.p_task, x2.p_task)
    assert pair == pytest.approx(pair_consistency_loss(PairBinding(x1, x2), KB, PRODUCT), abs=1e-12)
    sup = supervised_loss([x1, x2], "answer", PRODUCT) + supervised_loss([x1, x2], "task", PRODUCT)
    assert total_loss([x1, x2], [(0, 1)], KB, PRODUCT).value == pytest.approx(pair + sup, abs=1e-9)


def test_total_loss_matches_pair_function():
    rng = np.random.default_rng(2)
    for sem in (PRODUCT, LUKASIEWICZ, schweizer_sklar(0.5)):
        batch = _batch(rng, 3)
        pairs = family_pairs(3)
        logic = sum(pair_consistency_loss(PairBinding(batch[i], batch[j]), KB, sem) for i, j in pairs)
        if not sem.generator().strict:
            logic = min(sem.generator().g0, logic)
        sup = supervised_loss(batch, "answer", sem) + supervised_loss(batch, "task", sem)
        assert total_loss(batch, pairs, KB, sem).value == pytest.approx(logic + sup, abs=1e-9)


def test_pairs_are_ordered_and_family_local():
    assert family_pairs(3, offset=2) == [(2, 3), (2, 4), (3, 2), (3, 4), (4, 2), (4, 3)]
    assert family_pairs(1) == []
    with pytest.raises(ValueError):
        total_loss(_batch(np.random.default_rng(0), 2), [(0, 0)], KB, PRODUCT)
    with pytest.raises(ValueError):
        total_loss(_batch(np.random.default_rng(0), 2), [], KB, PRODUCT, beta=-1)


def test_monotone_pressure():
    rng = np.random.default_rng(3)
    for sem in (PRODUCT, LUKASIEWICZ, frank(2)):
        for _ in range(20):
            base = _batch(rng, 2)
            t1, t2 = base[0].task_probs, base[1].task_probs
            values = []
            for p in np.linspace(0.01, 1.0, 50):
                values.append(pair_consistency_loss(PairBinding(kb_sample(p, t1, base[0].gold_task), base[1]), KB, sem))
            assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
            assert min(values) >= 0.0


def test_total_loss_gradients_at_random_points():
    rng = np.random.default_rng(4)
    checked = 0
    while checked < 100:
        sem = [PRODUCT, LUKASIEWICZ, schweizer_sklar(0.5), frank(2)][checked % 4]
        n = int(rng.integers(2, 4))
        graph = total_loss(_batch(rng, n), family_pairs(n), KB, sem, beta=float(rng.uniform(0.1, 2.0)))
        rep = ad.finite_diff_check(graph.expr, graph.inputs, tol=1e-4)
        if rep.near_kink:
            continue
        assert rep.passed, rep.to_dict()
        checked += 1


def test_compiled_loss_gradient_matches_finite_differences():
    f = fol.parse_formula("forall x1: forall x2: queryGlobal(x1) => chooseGlobal(x2) & ans(x2)", TASKS)
    rng = np.random.default_rng(5)
    loss = compile_formula(f, PRODUCT, 2)
    outs = _random_outputs(rng, 2)
    rep = ad.finite_diff_check(loss.expr, loss.bind(outs, TASKS))
    assert rep.passed or rep.near_kink


def test_sample_outputs_validation():
    with pytest.raises(ValueError):
        SampleOutputs(np.array([0.5, 0.6]), np.array([1.0]), 0, 0)
    with pytest.raises(ValueError):
        SampleOutputs(np.array([[0.5, 0.5]]), np.array([1.0]), 0, 0)

"""Answer accuracy, entailment consistency and answer-distribution distance.

Consistency: among source questions answered correctly that have at least
one entailed question, the mean over sources of the fraction of their
entailed questions that are also answered correctly.

Distribution: chi-square distance between the normalised histograms of
predicted and gold answers, ``Σ (p_a - g_a)² / g_a``. Predicted answers that
never occur in the gold set use ``ε = 1 / (2N)`` in place of ``g_a``.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .batcher import QuestionRecord
from .kb import EntailmentKB, builtin_kb

__all__ = [
    "MetricsReport", "MissingPrediction", "DanglingEntailedId", "EmptyInput", "ConsistencyWarning",
    "accuracy_report", "consistency", "distribution_distance", "evaluate", "format_table",
    "read_predictions", "write_predictions", "CATEGORY_ROWS", "STRUCTURAL_ROWS",
]

CATEGORY_ROWS = ("choose", "compare", "logical", "query", "verify")
STRUCTURAL_ROWS = ("attr", "cat", "global", "obj", "rel")
BINARY_ANSWERS = frozenset({"yes", "no"})


class MissingPrediction(KeyError):
    pass


class DanglingEntailedId(KeyError):
    pass


class EmptyInput(ValueError):
    pass


class ConsistencyWarning(UserWarning):
    pass


def _answers(predictions) -> dict[str, str]:
    if isinstance(predictions, Mapping):
        return {str(k): (v["answer"] if isinstance(v, Mapping) else str(v)) for k, v in predictions.items()}
    return {str(p["id"]): str(p["answer"]) for p in predictions}


def _correct(pred: Mapping[str, str], gold: Sequence[QuestionRecord]) -> dict[str, bool]:
    out = {}
    for r in gold:
        if r.id not in pred:
            raise MissingPrediction(r.id)
        out[r.id] = pred[r.id] == r.gold_answer
    return out


@dataclass
class MetricsReport:
    accuracy: float = 0.0
    binary_accuracy: float = 0.0
    open_accuracy: float = 0.0
    consistency: float = 0.0
    distribution: float = 0.0
    per_category: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    consistency_degenerate: bool = False

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "binary": self.binary_accuracy, "open": self.open_accuracy,
                "consistency": self.consistency, "distribution": self.distribution,
                "validity": "n/a", "plausibility": "n/a", "per_category": dict(self.per_category),
                "counts": dict(self.counts), "consistency_degenerate": self.consistency_degenerate}


def accuracy_report(predictions, gold: Sequence[QuestionRecord], kb: EntailmentKB | None = None) -> MetricsReport:
    """Exact-match accuracy overall, on yes/no questions, on the rest, and per category."""
    kb = kb or builtin_kb()
    ok = _correct(_answers(predictions), gold)
    groups: dict[str, list[bool]] = {"binary": [], "open": []}
    for r in gold:
        groups["binary" if r.gold_answer in BINARY_ANSWERS else "open"].append(ok[r.id])
        try:
            task = kb.task(r.task)
        except KeyError:
            continue
        groups.setdefault(task.category, []).append(ok[r.id])
        groups.setdefault(task.structural, []).append(ok[r.id])

    def mean(xs):
        return sum(xs) / len(xs) if xs else 0.0

    rep = MetricsReport(accuracy=mean(list(ok.values())), binary_accuracy=mean(groups["binary"]),
                        open_accuracy=mean(groups["open"]))
    rep.per_category = {k: mean(v) for k, v in groups.items() if k not in ("binary", "open")}
    rep.counts = {"total": len(gold), "binary": len(groups["binary"]), "open": len(groups["open"])}
    return rep


def consistency(predictions, gold: Sequence[QuestionRecord]) -> float:
    """Per-source mean entailed accuracy; 0 with a warning when no source qualifies."""
    value, n_sources = _consistency(_answers(predictions), gold)
    if n_sources == 0:
        warnings.warn("no correctly answered question has entailed questions; consistency set to 0",
                      ConsistencyWarning, stacklevel=2)
    return value


def _consistency(pred: Mapping[str, str], gold: Sequence[QuestionRecord]) -> tuple[float, int]:
    ok = _correct(pred, gold)
    total, n = 0.0, 0
    for r in gold:
        for e in r.entailed_ids:
            if e not in ok:
                raise DanglingEntailedId(e)
        if r.entailed_ids and ok[r.id]:
            total += sum(ok[e] for e in r.entailed_ids) / len(r.entailed_ids)
            n += 1
    return (total / n if n else 0.0), n


def distribution_distance(predictions, gold: Sequence[QuestionRecord]) -> float:
    if not gold:
        raise EmptyInput("no gold records")
    pred = _answers(predictions)
    for r in gold:
        if r.id not in pred:
            raise MissingPrediction(r.id)
    n = len(gold)
    g = Counter(r.gold_answer for r in gold)
    p = Counter(pred[r.id] for r in gold)
    eps = 1.0 / (2 * n)
    dist = 0.0
    for a in sorted(set(g) | set(p)):
        ga, pa = g[a] / n, p[a] / n
        dist += (pa - ga) ** 2 / (ga if ga > 0 else eps)
    return dist


def evaluate(predictions, gold: Sequence[QuestionRecord], kb: EntailmentKB | None = None) -> MetricsReport:
    if not gold:
        raise EmptyInput("no gold records")
    pred = _answers(predictions)
    rep = accuracy_report(pred, gold, kb)
    rep.consistency, n_sources = _consistency(pred, gold)
    rep.consistency_degenerate = n_sources == 0
    if rep.consistency_degenerate:
        warnings.warn("no correctly answered question has entailed questions; consistency set to 0",
                      ConsistencyWarning, stacklevel=2)
    rep.counts["consistency_sources"] = n_sources
    rep.distribution = distribution_distance(pred, gold)
    return rep


def format_table(reports: Mapping[str, MetricsReport]) -> str:
    """Aligned text table, one column per report, in the usual row order."""
    cols = list(reports)
    rows: list[tuple[str, list[str]]] = []

    def pct(x):
        return f"{100 * x:.2f}%"

    def add(label, fn):
        rows.append((label, [fn(reports[c]) for c in cols]))

    add("Binary", lambda r: pct(r.binary_accuracy))
    add("Open", lambda r: pct(r.open_accuracy))
    add("Accuracy", lambda r: pct(r.accuracy))
    add("Consistency", lambda r: pct(r.consistency))
    add("Validity", lambda r: "n/a")
    add("Plausibility", lambda r: "n/a")
    add("Distribution", lambda r: f"{r.distribution:.4f}")
    for key in CATEGORY_ROWS + STRUCTURAL_ROWS:
        add(key, lambda r, key=key: pct(r.per_category[key]) if key in r.per_category else "-")
    width = max(len(label) for label, _ in rows)
    cw = [max(len(c), *(len(vals[i]) for _, vals in rows)) for i, c in enumerate(cols)]
    lines = ["  ".join(["Metric".ljust(width)] + [c.rjust(w) for c, w in zip(cols, cw)])]
    for label, vals in rows:
        lines.append("  ".join([label.ljust(width)] + [v.rjust(w) for v, w in zip(vals, cw)]))
    return "\n".join(lines)


def read_predictions(path: str | Path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out[str(d["id"])] = str(d["answer"])
    return out


def write_predictions(rows: Iterable[Mapping], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(dict(row), separators=(",", ":")) + "\n")

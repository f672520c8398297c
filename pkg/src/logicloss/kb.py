"""The GQA semantic-task vocabulary and its entailment relations as data.

The shipped knowledge base lives next to this module in ``kb/``:
``tasks.json`` (task names, category overrides, rule count and checksum) and
``gqa_entailments.rules`` (one ``forall x1 forall x2: a(x1) => b(x2)`` or
``<=>`` rule per line).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping

from . import fol
from .tnorms import Semantics, eval_connective

__all__ = [
    "SemanticTask", "EntailmentRule", "EntailmentKB", "DataFileCorrupt",
    "KB_DIR", "load_kb", "builtin_kb", "rule_truth", "best_relation_truth",
    "derive_categories",
]

KB_DIR = Path(__file__).with_name("kb")


class DataFileCorrupt(ValueError):
    pass


@dataclass(frozen=True)
class SemanticTask:
    name: str
    category: str  # verify | query | choose | exist | compare | logical | other
    structural: str  # attr | global | obj | rel | cat


@dataclass(frozen=True)
class EntailmentRule:
    id: int  # 1-based
    name: str
    src: str
    dst: str
    connective: str  # residual_imply | biresiduum

    @property
    def symbol(self) -> str:
        return "=>" if self.connective == "residual_imply" else "<=>"


@dataclass(frozen=True)
class EntailmentKB:
    tasks: tuple[SemanticTask, ...]
    rules: tuple[EntailmentRule, ...]
    formulas: fol.KnowledgeBase = field(repr=False, default=fol.KnowledgeBase())

    @property
    def task_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tasks)

    @property
    def task_index(self) -> dict[str, int]:
        return {t.name: i for i, t in enumerate(self.tasks)}

    def task(self, name: str) -> SemanticTask:
        return self.tasks[self.task_index[name]]

    def find(self, src: str, dst: str) -> list[EntailmentRule]:
        return [r for r in self.rules if r.src == src and r.dst == dst]

    def __iter__(self):
        # unpacks as (tasks, rules)
        return iter((self.tasks, self.rules))


_COMPARE_PREFIXES = ("compare", "common", "twoSame", "twoDiff", "allSame", "allDiff")


def derive_categories(name: str) -> tuple[str, str]:
    """(category, structural) label from the task name's substrings."""
    if "And" in name or "Or" in name:
        category = "logical"
    elif name.startswith(_COMPARE_PREFIXES):
        category = "compare"
    else:
        for prefix in ("verify", "query", "choose", "exist"):
            if name.startswith(prefix):
                category = prefix
                break
        else:
            category = "other"
    if "Rel" in name:
        structural = "rel"
    elif "Global" in name:
        structural = "global"
    elif "Attr" in name or name.startswith(_COMPARE_PREFIXES):
        structural = "attr"
    elif "Obj" in name or name.startswith("exist"):
        structural = "obj"
    else:
        structural = "cat"
    return category, structural


def _rule_shape(rule: fol.Rule) -> tuple[str, str, str]:
    f = rule.formula
    if not (isinstance(f, fol.Quantified) and f.quantifier == "forall"
            and isinstance(f.body, fol.Quantified) and f.body.quantifier == "forall"):
        raise DataFileCorrupt(f"rule {rule.name!r} is not of the form forall x1 forall x2: ...")
    v1, v2, body = f.var, f.body.var, f.body.body
    if not (isinstance(body, fol.Binary) and body.op in ("residual_imply", "biresiduum")
            and isinstance(body.left, fol.TaskAtom) and isinstance(body.right, fol.TaskAtom)
            and body.left.var == v1 and body.right.var == v2):
        raise DataFileCorrupt(f"rule {rule.name!r} must relate task(x1) to task(x2) by => or <=>")
    return body.left.task, body.right.task, body.op


def load_kb(path: str | Path = KB_DIR, verify: bool = True) -> EntailmentKB:
    """Load a KB directory (``tasks.json`` + its rules file).

    ``verify`` checks the rule count and sha256 recorded in ``tasks.json``.
    """
    path = Path(path)
    manifest_path = path / "tasks.json" if path.is_dir() else path.with_name("tasks.json")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFileCorrupt(f"cannot read {manifest_path}: {exc}") from exc
    rules_path = path if path.is_file() else path / manifest.get("rules_file", "gqa_entailments.rules")
    raw = rules_path.read_bytes()
    if verify and path.is_dir():
        digest = hashlib.sha256(raw).hexdigest()
        if "rules_sha256" in manifest and digest != manifest["rules_sha256"]:
            raise DataFileCorrupt(f"{rules_path.name}: checksum mismatch")

    names = manifest["tasks"]
    if len(set(names)) != len(names):
        raise DataFileCorrupt("duplicate task names in tasks.json")
    overrides: Mapping[str, Mapping[str, str]] = manifest.get("category_overrides", {})
    tasks = []
    for name in names:
        category, structural = derive_categories(name)
        over = overrides.get(name, {})
        tasks.append(SemanticTask(name, over.get("category", category), over.get("structural", structural)))

    try:
        formulas = fol.parse_kb(raw.decode("utf-8"), names)
    except fol.FOLError as exc:
        raise DataFileCorrupt(str(exc)) from exc
    rules = []
    seen = set()
    for i, r in enumerate(formulas, start=1):
        src, dst, conn = _rule_shape(r)
        if src == dst:
            raise DataFileCorrupt(f"rule {r.name!r} relates a task to itself")
        if (src, dst, conn) in seen:
            raise DataFileCorrupt(f"rule {r.name!r} duplicates an earlier relation")
        seen.add((src, dst, conn))
        rules.append(EntailmentRule(i, r.name, src, dst, conn))
    if verify and "rule_count" in manifest and len(rules) != manifest["rule_count"]:
        raise DataFileCorrupt(f"expected {manifest['rule_count']} rules, found {len(rules)}")
    return EntailmentKB(tuple(tasks), tuple(rules), formulas)


@lru_cache(maxsize=1)
def builtin_kb() -> EntailmentKB:
    return load_kb(KB_DIR)


def _prob(dist, name: str, index: Mapping[str, int]) -> float:
    if isinstance(dist, Mapping):
        return float(dist.get(name, 0.0))
    return float(dist[index[name]])


def rule_truth(rule: EntailmentRule, tprobs1, tprobs2, sem: Semantics,
               index: Mapping[str, int] | None = None) -> float:
    """Truth of ``p1[src] □ p2[dst]``; distributions are vectors or name maps."""
    index = index if index is not None else builtin_kb().task_index
    x = _prob(tprobs1, rule.src, index)
    y = _prob(tprobs2, rule.dst, index)
    return eval_connective(sem, rule.connective, x, y)


def best_relation_truth(tprobs1, tprobs2, sem: Semantics,
                        kb: EntailmentKB | None = None) -> tuple[int, float]:
    """Weak disjunction over all rules: (id of the first maximiser, its truth)."""
    kb = kb or builtin_kb()
    if not kb.rules:
        raise ValueError("knowledge base has no rules")
    index = kb.task_index
    best_id, best = 0, -1.0
    for rule in kb.rules:
        t = rule_truth(rule, tprobs1, tprobs2, sem, index)
        if t > best:
            best_id, best = rule.id, t
    return best_id, best


def task_vector(kb: EntailmentKB, probs: Mapping[str, float]) -> list[float]:
    return [float(probs.get(n, 0.0)) for n in kb.task_names]


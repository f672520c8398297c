"""Question records, families of same-argument questions, and hybrid batches.

A family is a group of questions about one argument (subject/object) of one
image with pairwise-distinct semantic tasks, at most six of them. A hybrid
batch puts one family first and fills the rest with random pool questions.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "QuestionRecord", "Family", "HybridBatch", "BatchStats", "ValidationError", "PoolTooSmall",
    "MAX_FAMILY", "read_records", "write_records", "validate_records", "group_families",
    "build_hybrid_batches", "batch_stats", "write_batches", "read_batches",
]

MAX_FAMILY = 6


class ValidationError(ValueError):
    def __init__(self, message: str, ids: Sequence[str] = ()):
        self.ids = list(ids)
        shown = ", ".join(self.ids[:10]) + (" ..." if len(self.ids) > 10 else "")
        super().__init__(f"{message}: {shown}" if self.ids else message)


class PoolTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    image_id: str
    argument: str
    task: str
    gold_answer: str
    entailed_ids: tuple[str, ...] = ()
    features: tuple[float, ...] | None = None

    def to_json(self) -> dict:
        out = {"id": self.id, "imageId": self.image_id, "argument": self.argument,
               "semantic": self.task, "answer": self.gold_answer, "entailed": list(self.entailed_ids)}
        if self.features is not None:
            out["features"] = list(self.features)
        return out

    @classmethod
    def from_json(cls, d: dict) -> "QuestionRecord":
        try:
            feats = d.get("features")
            return cls(str(d["id"]), str(d["imageId"]), str(d["argument"]), str(d["semantic"]),
                       str(d["answer"]), tuple(str(e) for e in d.get("entailed", ())),
                       None if feats is None else tuple(float(v) for v in feats))
        except KeyError as exc:
            raise ValidationError(f"record missing field {exc.args[0]!r}", [str(d.get("id", "?"))]) from None


def read_records(path: str | Path) -> list[QuestionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(QuestionRecord.from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    return records


def write_records(records: Iterable[QuestionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), separators=(",", ":")) + "\n")


def validate_records(records: Sequence[QuestionRecord], vocabulary: Iterable[str] | None = None,
                     require_features: bool = False) -> None:
    """Unique ids, known tasks, resolvable entailed ids, features when required."""
    counts = Counter(r.id for r in records)
    dup = sorted(i for i, c in counts.items() if c > 1)
    if dup:
        raise ValidationError("duplicate record ids", dup)
    if vocabulary is not None:
        vocab = set(vocabulary)
        bad = [r.id for r in records if r.task not in vocab]
        if bad:
            raise ValidationError("unknown semantic task", bad)
    dangling = [r.id for r in records if any(e not in counts for e in r.entailed_ids)]
    if dangling:
        raise ValidationError("entailed ids do not resolve", dangling)
    if require_features:
        missing = [r.id for r in records if r.features is None]
        if missing:
            raise ValidationError("records without features", missing)
        dims = {len(r.features) for r in records}
        if len(dims) > 1:
            raise ValidationError(f"inconsistent feature dimensions {sorted(dims)}")


@dataclass(frozen=True)
class Family:
    members: tuple[QuestionRecord, ...]

    def __post_init__(self):
        if not 1 <= len(self.members) <= MAX_FAMILY:
            raise ValueError(f"family size {len(self.members)} outside 1..{MAX_FAMILY}")
        keys = {(m.image_id, m.argument) for m in self.members}
        if len(keys) != 1:
            raise ValueError("family members must share image and argument")
        if len({m.task for m in self.members}) != len(self.members):
            raise ValueError("family tasks must be pairwise distinct")

    @property
    def image_id(self) -> str:
        return self.members[0].image_id

    @property
    def argument(self) -> str:
        return self.members[0].argument

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class HybridBatch:
    family: Family
    fillers: tuple[QuestionRecord, ...]

    @property
    def members(self) -> tuple[QuestionRecord, ...]:
        return self.family.members + self.fillers

    @property
    def family_size(self) -> int:
        return len(self.family)

    def __len__(self):
        return len(self.family) + len(self.fillers)


def group_families(records: Sequence[QuestionRecord]) -> list[Family]:
    """Partition records into families keyed by (image, argument).

    Groups keep first-appearance order. Within a group each record joins the
    first open family that lacks its task and has room; otherwise it starts a
    new one, so duplicates and groups beyond six tasks spill over.
    """
    if len({r.id for r in records}) != len(records):
        validate_records(records)
    groups: dict[tuple[str, str], list[list[QuestionRecord]]] = {}
    for r in records:
        fams = groups.setdefault((r.image_id, r.argument), [])
        for fam in fams:
            if len(fam) < MAX_FAMILY and all(m.task != r.task for m in fam):
                fam.append(r)
                break
        else:
            fams.append([r])
    return [Family(tuple(f)) for fams in groups.values() for f in fams]


def build_hybrid_batches(families: Sequence[Family], pool: Sequence[QuestionRecord],
                         batch_size: int = 16, seed: int = 0) -> list[HybridBatch]:
    """One batch per family, topped up with uniform draws from ``pool``.

    Fillers are distinct within a batch and never members of its family;
    draws across batches are independent.
    """
    if batch_size < MAX_FAMILY:
        raise ValueError(f"batch_size must be at least {MAX_FAMILY}")
    if not pool:
        raise PoolTooSmall("filler pool is empty")
    rng = np.random.default_rng(seed)
    n = len(pool)
    batches = []
    for fam in families:
        need = batch_size - len(fam)
        own = {m.id for m in fam.members}
        # a uniform draw of need + |family| ids, minus family members, is a
        # uniform draw without replacement from the eligible records
        take = min(n, need + len(own))
        picks = rng.choice(n, size=take, replace=False)
        fillers = [pool[i] for i in picks if pool[i].id not in own][:need]
        if len(fillers) < need:
            raise PoolTooSmall(f"pool has {len(fillers)} records outside family "
                               f"{fam.image_id}/{fam.argument}, batch needs {need}")
        batches.append(HybridBatch(fam, tuple(fillers)))
    return batches


@dataclass
class BatchStats:
    n_batches: int = 0
    n_samples: int = 0
    family_sizes: dict[int, int] = field(default_factory=dict)
    task_coverage: dict[str, int] = field(default_factory=dict)  # family-prefix task counts
    filler_slots: int = 0
    distinct_fillers: int = 0

    @property
    def filler_overlap_rate(self) -> float:
        """Share of filler slots that repeat a filler used earlier."""
        return 0.0 if self.filler_slots == 0 else 1.0 - self.distinct_fillers / self.filler_slots

    def to_dict(self) -> dict:
        return {"n_batches": self.n_batches, "n_samples": self.n_samples,
                "family_sizes": {str(k): v for k, v in sorted(self.family_sizes.items())},
                "task_coverage": dict(sorted(self.task_coverage.items())),
                "filler_slots": self.filler_slots, "distinct_fillers": self.distinct_fillers,
                "filler_overlap_rate": self.filler_overlap_rate}


def batch_stats(batches: Sequence[HybridBatch]) -> BatchStats:
    sizes: Counter = Counter()
    tasks: Counter = Counter()
    seen = set()
    slots = 0
    samples = 0
    for b in batches:
        sizes[b.family_size] += 1
        tasks.update(m.task for m in b.family.members)
        slots += len(b.fillers)
        seen.update(f.id for f in b.fillers)
        samples += len(b)
    return BatchStats(len(batches), samples, dict(sizes), dict(tasks), slots, len(seen))


def write_batches(batches: Iterable[HybridBatch], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for b in batches:
            fh.write(json.dumps({"family": [m.id for m in b.family.members],
                                 "fillers": [f.id for f in b.fillers]}) + "\n")


def read_batches(path: str | Path, records: Sequence[QuestionRecord]) -> list[HybridBatch]:
    by_id = {r.id: r for r in records}
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(HybridBatch(Family(tuple(by_id[i] for i in d["family"])),
                                       tuple(by_id[i] for i in d["fillers"])))
    return out

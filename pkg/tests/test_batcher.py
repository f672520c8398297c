from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logicloss.batcher import (MAX_FAMILY, Family, PoolTooSmall, QuestionRecord, ValidationError, batch_stats,
                               build_hybrid_batches, group_families, read_batches, read_records,
                               validate_records, write_batches, write_records)
from logicloss.synthetic import generate_synthetic

BEACH = [
    QuestionRecord("q1", "img1", "global", "verifyGlobalTrue", "yes", ("q2", "q3")),
    QuestionRecord("q2", "img1", "global", "verifyGlobalFalse", "no", ("q4",)),
    QuestionRecord("q3", "img1", "global", "queryGlobal", "beach", ("q1",)),
    QuestionRecord("q4", "img1", "global", "chooseGlobal", "beach"),
]


def rec(i, image="img", arg="a", task=None):
    return QuestionRecord(f"r{i}", image, arg, task or f"task{i}", "yes")


def pool(n, prefix="p"):
    return [QuestionRecord(f"{prefix}{i}", f"other{i}", "x", "queryGlobal", "yes") for i in range(n)]


def test_beach_family():
    (fam,) = group_families(BEACH)
    assert len(fam) == 4 and fam.image_id == "img1" and fam.argument == "global"


def test_empty():
    assert group_families([]) == []
    assert build_hybrid_batches([], pool(3)) == []
    assert batch_stats([]).to_dict()["n_batches"] == 0


def test_seven_tasks_split_six_plus_one():
    fams = group_families([rec(i) for i in range(7)])
    assert [len(f) for f in fams] == [6, 1]


def test_duplicate_task_spills_into_new_family():
    recs = [rec(0, task="t"), rec(1, task="u"), rec(2, task="t")]
    fams = group_families(recs)
    assert [[m.id for m in f.members] for f in fams] == [["r0", "r1"], ["r2"]]


def test_family_validation():
    with pytest.raises(ValueError):
        Family(tuple(rec(i) for i in range(7)))
    with pytest.raises(ValueError):
        Family((rec(0, task="t"), rec(1, task="t")))
    with pytest.raises(ValueError):
        Family((rec(0, image="a"), rec(1, image="b")))


def test_fillers_and_shape():
    (fam,) = group_families(BEACH)
    (b,) = build_hybrid_batches([fam], BEACH + pool(40), batch_size=16, seed=3)
    assert len(b.fillers) == 12 and len(b) == 16
    assert b.members[:4] == fam.members
    assert not {f.id for f in b.fillers} & {m.id for m in fam.members}
    assert len({f.id for f in b.fillers}) == 12


def test_determinism():
    fams = group_families(BEACH)
    p = BEACH + pool(100)
    assert build_hybrid_batches(fams * 5, p, seed=7) == build_hybrid_batches(fams * 5, p, seed=7)
    assert build_hybrid_batches(fams * 5, p, seed=7) != build_hybrid_batches(fams * 5, p, seed=8)


def test_pool_too_small():
    fams = group_families(BEACH)
    with pytest.raises(PoolTooSmall):
        build_hybrid_batches(fams, BEACH + pool(11))
    assert len(build_hybrid_batches(fams, BEACH + pool(12))[0].fillers) == 12
    with pytest.raises(PoolTooSmall):
        build_hybrid_batches(fams, [])
    with pytest.raises(ValueError):
        build_hybrid_batches(fams, pool(20), batch_size=4)


def test_stats_single_batch():
    stats = batch_stats(build_hybrid_batches(group_families(BEACH), pool(30), seed=0))
    assert stats.family_sizes == {4: 1}
    assert stats.filler_slots == 12 and stats.n_samples == 16


@settings(max_examples=40)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 1), st.integers(0, 8)), max_size=60),
       st.integers(0, 2**32 - 1))
def test_partition_and_shape(keys, seed):
    records = [rec(i, image=f"i{im}", arg=f"a{arg}", task=f"t{t}") for i, (im, arg, t) in enumerate(keys)]
    fams = group_families(records)
    ids = [m.id for f in fams for m in f.members]
    assert sorted(ids) == sorted(r.id for r in records)
    for f in fams:
        assert 1 <= len(f) <= MAX_FAMILY
        assert len({m.task for m in f.members}) == len(f)
    batches = build_hybrid_batches(fams, records + pool(30), batch_size=16, seed=seed)
    for f, b in zip(fams, batches):
        assert len(b) == 16 and b.family == f


def test_synthetic_contract_and_recount():
    records = generate_synthetic(400, seed=1)
    fams = group_families(records)
    batches = build_hybrid_batches(fams, records, batch_size=16, seed=11)
    stats = batch_stats(batches)
    sizes = Counter(len(b.family) for b in batches)
    tasks = Counter(m.task for b in batches for m in b.family.members)
    fillers = [f.id for b in batches for f in b.fillers]
    assert stats.family_sizes == dict(sizes)
    assert stats.task_coverage == dict(tasks)
    assert stats.filler_slots == len(fillers) and stats.distinct_fillers == len(set(fillers))
    assert stats.n_samples == 16 * len(batches)
    assert 0.0 <= stats.filler_overlap_rate < 1.0


def test_record_io(tmp_path):
    records = generate_synthetic(3, seed=2)
    path = tmp_path / "r.jsonl"
    write_records(records, path)
    assert read_records(path) == records
    batches = build_hybrid_batches(group_families(records), records, seed=1)
    bpath = tmp_path / "b.jsonl"
    write_batches(batches, bpath)
    assert read_batches(bpath, records) == batches


def test_record_errors(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "x"}\n')
    with pytest.raises(ValidationError) as e:
        read_records(path)
    assert e.value.ids == ["x"]
    path.write_text("{nope\n")
    with pytest.raises(ValidationError):
        read_records(path)


def test_validation():
    with pytest.raises(ValidationError) as e:
        validate_records([rec(0), rec(0)])
    assert e.value.ids == ["r0"]
    with pytest.raises(ValidationError):
        validate_records([rec(0, task="mystery")], vocabulary=["queryGlobal"])
    with pytest.raises(ValidationError):
        validate_records([QuestionRecord("a", "i", "g", "t", "yes", ("zzz",))])
    with pytest.raises(ValidationError):
        validate_records([rec(0)], require_features=True)
    with pytest.raises(ValidationError):
        validate_records([QuestionRecord("a", "i", "g", "t", "y", (), (1.0,)),
                          QuestionRecord("b", "i", "g", "u", "y", (), (1.0, 2.0))], require_features=True)

"""Dataset ingestion, splitting, and batch sampling."""

import hashlib
import json
import random

import pytest

from textreward.corpus import (
    CorpusError,
    DatasetKind,
    QuestionSet,
    dump_internal,
    load_dataset,
    parse_gold_answer,
    sample_iteration_batch,
    split_train_val,
)


def write_jsonl(path, objs):
    with path.open("w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def make_internal(path, n, kind="gsm8k"):
    write_jsonl(path, [
        {"id": f"q{i:03d}", "question": f"What is {i} + {i}?", "answer": f"#### {2 * i}"}
        for i in range(1, n + 1)
    ])


def test_load_internal_layout_preserves_order(tmp_path):
    path = tmp_path / "data.jsonl"
    make_internal(path, 3)
    qset = load_dataset(path, DatasetKind.GSM8K, "train")
    assert len(qset) == 3
    assert [r.id for r in qset.records] == ["q001", "q002", "q003"]
    assert qset.records[0].gold.canonical == "2"


def test_load_upstream_gsm8k_layout(tmp_path):
    path = tmp_path / "gsm8k.jsonl"
    write_jsonl(path, [
        {"question": "Two plus three?", "answer": "2 + 3 = 5\n#### 5"},
        {"question": "Ten minus one?", "answer": "10 - 1 = 9\n#### 9"},
    ])
    qset = load_dataset(path, "gsm8k", "test")
    assert [r.id for r in qset.records] == ["gsm8k:test:0", "gsm8k:test:1"]
    assert qset.records[1].gold.canonical == "9"


def test_load_upstream_gsmhard_layout(tmp_path):
    path = tmp_path / "hard.jsonl"
    write_jsonl(path, [{"input": "Huge sum?", "target": 2400594.0}])
    qset = load_dataset(path, DatasetKind.GSMHARD)
    assert qset.records[0].gold.canonical == "2400594"


def test_load_upstream_math_layout(tmp_path):
    path = tmp_path / "math.jsonl"
    write_jsonl(path, [{"problem": "Half of one?", "solution": "It is $\\boxed{\\frac{1}{2}}$."}])
    qset = load_dataset(path, DatasetKind.MATH)
    assert qset.records[0].gold.canonical == "1/2"


def test_load_missing_file_errors(tmp_path):
    with pytest.raises(CorpusError, match="not found"):
        load_dataset(tmp_path / "absent.jsonl", DatasetKind.GSM8K)


def test_load_empty_file_errors(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with pytest.raises(CorpusError, match="no records"):
        load_dataset(path, DatasetKind.GSM8K)


def test_load_malformed_record_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"question": "ok", "answer": "#### 1"}\nnot json\n')
    with pytest.raises(CorpusError, match=":2:"):
        load_dataset(path, DatasetKind.GSM8K)


def test_load_unparseable_gold_reports_record(tmp_path):
    path = tmp_path / "bad_gold.jsonl"
    write_jsonl(path, [{"id": "odd1", "question": "ok?", "answer": "no marker here"}])
    with pytest.raises(CorpusError, match="odd1"):
        load_dataset(path, DatasetKind.GSM8K)


def test_round_trip_preserves_fields_exactly(tmp_path):
    src = tmp_path / "src.jsonl"
    write_jsonl(src, [
        {"id": "a", "question": "Caffè cost 3€ — how much for 2?", "answer": "#### 6"},
        {"id": "b", "question": "x?", "answer": "#### 1"},
    ])
    qset = load_dataset(src, DatasetKind.GSM8K)
    out = tmp_path / "out.jsonl"
    dump_internal(qset, out)
    reloaded = load_dataset(out, DatasetKind.GSM8K)
    for a, b in zip(qset.records, reloaded.records):
        assert (a.id, a.text, a.raw_answer) == (b.id, b.text, b.raw_answer)


def test_parse_gold_answer_examples():
    assert parse_gold_answer("work\n#### 72", DatasetKind.GSM8K).canonical == "72"
    assert parse_gold_answer("so $\\boxed{\\frac{1}{2}}$", DatasetKind.MATH).canonical == "1/2"
    with pytest.raises(CorpusError):
        parse_gold_answer("no marker here", DatasetKind.GSM8K)


def _unsplit(n, kind=DatasetKind.GSM8K):
    records = []
    # build directly to avoid file I/O in property loops
    from textreward.corpus import QuestionRecord
    from textreward.grading import make_answer
    for i in range(n):
        records.append(QuestionRecord(f"q{i:04d}", f"Q {i}?", f"#### {i}", make_answer(str(i), "gsm8k")))
    return QuestionSet(kind, "unsplit", records)


def test_split_sizes_match_fraction():
    train, val = split_train_val(_unsplit(1000), 0.9, seed=11)
    assert (len(train), len(val)) == (900, 100)
    assert train.split == "train" and val.split == "validation"


def test_split_fraction_one_keeps_everything():
    train, val = split_train_val(_unsplit(10), 1.0, seed=3)
    assert len(train) == 10 and len(val) == 0


def test_split_out_of_range_fraction_errors():
    with pytest.raises(CorpusError):
        split_train_val(_unsplit(10), 0.0, seed=3)
    with pytest.raises(CorpusError):
        split_train_val(_unsplit(10), 1.5, seed=3)


def test_split_deterministic_for_seed():
    base = _unsplit(10)
    first = split_train_val(base, 0.9, seed=7)
    second = split_train_val(base, 0.9, seed=7)
    assert [r.id for r in first[0].records] == [r.id for r in second[0].records]
    assert [r.id for r in first[1].records] == [r.id for r in second[1].records]


def test_split_disjoint_and_exhaustive_property():
    rng = random.Random(99)
    for _ in range(25):
        n = rng.randint(1, 60)
        frac = rng.choice([0.5, 0.75, 0.9, 1.0])
        qset = _unsplit(n)
        train, val = split_train_val(qset, frac, seed=rng.randint(0, 10**6))
        train_ids = {r.id for r in train.records}
        val_ids = {r.id for r in val.records}
        assert not (train_ids & val_ids)
        assert train_ids | val_ids == {r.id for r in qset.records}
        assert len(train) == int(frac * n)


def test_sample_batch_distinct_and_deterministic():
    train = _unsplit(20)
    a = sample_iteration_batch(train, 5, seed=1, iteration=1)
    b = sample_iteration_batch(train, 5, seed=1, iteration=1)
    assert [r.id for r in a] == [r.id for r in b]
    assert len({r.id for r in a}) == 5


def test_sample_batch_matches_reference_derivation():
    # Independent re-derivation of the documented seed mix: sha256("seed:iter")
    # feeding random.Random.sample over the records.
    train = _unsplit(10)
    for iteration in (1, 2):
        digest = hashlib.sha256(f"1:{iteration}".encode()).digest()
        expected = random.Random(int.from_bytes(digest[:8], "big")).sample(train.records, 5)
        got = sample_iteration_batch(train, 5, seed=1, iteration=iteration)
        assert [r.id for r in got] == [r.id for r in expected]
    first = sample_iteration_batch(train, 5, seed=1, iteration=1)
    second = sample_iteration_batch(train, 5, seed=1, iteration=2)
    assert [r.id for r in first] != [r.id for r in second]


def test_sample_full_split_is_permutation():
    train = _unsplit(8)
    batch = sample_iteration_batch(train, 8, seed=4, iteration=1)
    assert sorted(r.id for r in batch) == [r.id for r in train.records]


def test_sample_too_large_errors():
    with pytest.raises(CorpusError):
        sample_iteration_batch(_unsplit(4), 5, seed=1, iteration=1)


def test_duplicate_ids_rejected(tmp_path):
    path = tmp_path / "dup.jsonl"
    write_jsonl(path, [
        {"id": "same", "question": "a?", "answer": "#### 1"},
        {"id": "same", "question": "b?", "answer": "#### 2"},
    ])
    with pytest.raises(CorpusError, match="duplicate"):
        load_dataset(path, DatasetKind.GSM8K)

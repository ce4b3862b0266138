"""Question-set ingestion, train/validation splitting, and batch sampling.

Three source layouts are accepted per kind — the upstream field names
(``question``/``answer``, ``input``/``target``, ``problem``/``solution``) or
the normalized internal JSON Lines layout ``{"id", "question", "answer"}``.
Ingestion converts everything to the internal shape once; records without a
source id get ``kind:split:index``.

Everything here is deterministic: splits and batches are functions of their
seeds, and per-iteration batch seeds are derived by hashing
``(run seed, iteration)`` so iterations draw independent samples.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .grading import Answer, make_answer, _extract_numeric_token, _extract_expression_text


class DatasetKind(str, Enum):
    GSM8K = "gsm8k"
    GSMHARD = "gsmhard"
    MATH = "math"


SPLITS = ("train", "validation", "test", "unsplit")

_FIELD_MAP = {
    DatasetKind.GSM8K: ("question", "answer"),
    DatasetKind.GSMHARD: ("input", "target"),
    DatasetKind.MATH: ("problem", "solution"),
}


class CorpusError(ValueError):
    """Malformed dataset file or record."""


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    text: str
    raw_answer: str
    gold: Answer


@dataclass
class QuestionSet:
    kind: DatasetKind
    split: str
    records: list[QuestionRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise CorpusError(f"unknown split tag {self.split!r}")
        ids = [r.id for r in self.records]
        if len(ids) != len(set(ids)):
            raise CorpusError("duplicate question ids in set")

    def __len__(self) -> int:
        return len(self.records)


def parse_gold_answer(raw: str, kind: DatasetKind) -> Answer:
    """Parse a source answer field into a canonical gold Answer.

    Numeric kinds take the segment after the ``####`` marker, or accept the
    whole field when it is itself a bare number. MATH takes the boxed
    expression, or a bare single-line expression.
    """
    if not raw or not raw.strip():
        raise CorpusError("empty raw answer")
    kind = DatasetKind(kind)
    if kind is DatasetKind.MATH:
        if "\\boxed" in raw:
            expr = _extract_expression_text(raw)
            if expr is None:
                raise CorpusError("malformed boxed expression")
            return make_answer(expr, "math")
        stripped = raw.strip()
        if "\n" in stripped:
            raise CorpusError("no recognizable answer marker in solution")
        return make_answer(stripped, "math")
    if "####" in raw:
        marker_tail = raw.rsplit("####", 1)[1]
        token = _extract_numeric_token(marker_tail)
        if token is None:
            raise CorpusError("no number after #### marker")
        return make_answer(token, kind.value)
    answer = make_answer(raw.strip(), kind.value)
    if answer.numeric_value is None:
        raise CorpusError("no recognizable answer marker")
    return answer


def _record_from_obj(obj: dict, kind: DatasetKind, split: str, index: int) -> QuestionRecord:
    if "question" in obj and "answer" in obj:
        qfield, afield = "question", "answer"
    else:
        qfield, afield = _FIELD_MAP[kind]
        if qfield not in obj or afield not in obj:
            raise CorpusError(f"record missing {qfield!r}/{afield!r} fields")
    text = str(obj[qfield])
    raw_answer = obj[afield]
    raw_answer = str(raw_answer)
    if not text.strip():
        raise CorpusError("empty question text")
    rec_id = str(obj["id"]) if "id" in obj else f"{kind.value}:{split}:{index}"
    try:
        gold = parse_gold_answer(raw_answer, kind)
    except CorpusError as exc:
        raise CorpusError(f"record {rec_id}: {exc}") from exc
    return QuestionRecord(id=rec_id, text=text, raw_answer=raw_answer, gold=gold)


def load_dataset(path, kind: DatasetKind, split: str = "unsplit") -> QuestionSet:
    """Load a JSON Lines dataset file into a QuestionSet, order preserved."""
    kind = DatasetKind(kind)
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"dataset file not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: record is not an object")
            try:
                records.append(_record_from_obj(obj, kind, split, len(records)))
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    if not records:
        raise CorpusError(f"{path}: no records")
    return QuestionSet(kind=kind, split=split, records=records)


def dump_internal(qset: QuestionSet, path) -> None:
    """Write a QuestionSet in the internal {id, question, answer} layout."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in qset.records:
            fh.write(json.dumps(
                {"id": rec.id, "question": rec.text, "answer": rec.raw_answer},
                ensure_ascii=False) + "\n")


def _derive_seed(seed: int, iteration: int) -> int:
    digest = hashlib.sha256(f"{seed}:{iteration}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def split_train_val(qset: QuestionSet, train_fraction: float, seed: int):
    """Deterministically partition an unsplit set into (train, validation).

    Train size is floor(fraction * n); source order is preserved inside each
    split.
    """
    if not 0 < train_fraction <= 1:
        raise CorpusError(f"train_fraction {train_fraction} out of (0, 1]")
    if qset.split != "unsplit":
        raise CorpusError(f"can only split an unsplit set, got {qset.split!r}")
    n = len(qset.records)
    n_train = int(train_fraction * n)
    indices = list(range(n))
    random.Random(seed).shuffle(indices)
    train_idx = sorted(indices[:n_train])
    val_idx = sorted(indices[n_train:])
    train = QuestionSet(qset.kind, "train", [qset.records[i] for i in train_idx])
    val = QuestionSet(qset.kind, "validation", [qset.records[i] for i in val_idx])
    return train, val


def sample_iteration_batch(train: QuestionSet, n: int, seed: int, iteration: int) -> list[QuestionRecord]:
    """Sample n distinct records without replacement for one iteration."""
    if n > len(train.records):
        raise CorpusError(f"cannot sample {n} from {len(train.records)} records")
    rng = random.Random(_derive_seed(seed, iteration))
    return rng.sample(train.records, n)


def replace_split(qset: QuestionSet, split: str) -> QuestionSet:
    return QuestionSet(qset.kind, split, list(qset.records))

"""Fine-tuning dataset and spec-file parsing for the trainer contract.

Consumes the pipeline's JSON Lines records ``{input, target, meta}`` and the
flat ``key=value`` spec file. Loss is masked to the target span: the encoded
input (wrapped with the base family's reply marker) contributes -100 labels,
the target and its EOS contribute real ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

from .model import EOS, PAD, REPLY_MARKER, encode

IGNORE_INDEX = -100


class DataError(ValueError):
    pass


@dataclass
class SpecValues:
    base_model_id: str
    base_model_kind: str
    base_model_locator: str
    base_model_parent: str
    lora_rank: int
    lora_alpha: int
    epochs: int
    learning_rate: float
    optimizer: str
    schedule: str
    batch_size: int
    warmup_steps: int
    max_seq_len: int


def parse_spec(path) -> SpecValues:
    path = Path(path)
    if not path.exists():
        raise DataError(f"spec file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    try:
        spec = SpecValues(
            base_model_id=values["base_model_id"],
            base_model_kind=values.get("base_model_kind", "base"),
            base_model_locator=values.get("base_model_locator", ""),
            base_model_parent=values.get("base_model_parent", ""),
            lora_rank=int(values["lora_rank"]),
            lora_alpha=int(values["lora_alpha"]),
            epochs=int(values["epochs"]),
            learning_rate=float(values["learning_rate"]),
            optimizer=values.get("optimizer", "adam"),
            schedule=values.get("schedule", "linear-decay"),
            batch_size=int(values.get("batch_size", 8)),
            warmup_steps=int(values.get("warmup_steps", 0)),
            max_seq_len=int(values.get("max_seq_len", 2048)),
        )
    except KeyError as exc:
        raise DataError(f"{path}: missing spec key {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if spec.epochs < 1:
        raise DataError(f"{path}: epochs must be >= 1, got {spec.epochs}")
    if spec.lora_rank < 1 or spec.lora_alpha < 1:
        raise DataError(f"{path}: LoRA rank/alpha must be positive")
    if spec.learning_rate <= 0:
        raise DataError(f"{path}: learning_rate must be positive")
    if spec.optimizer != "adam":
        raise DataError(f"{path}: unsupported optimizer {spec.optimizer!r}")
    if spec.schedule != "linear-decay":
        raise DataError(f"{path}: unsupported schedule {spec.schedule!r}")
    return spec


def load_records(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: malformed record at line {lineno}: {exc.msg}") from exc
        if not isinstance(obj.get("input"), str) or not obj["input"]:
            raise DataError(f"{path}: malformed record at line {lineno}: missing 'input'")
        if not isinstance(obj.get("target"), str) or not obj["target"]:
            raise DataError(f"{path}: malformed record at line {lineno}: missing 'target'")
        records.append(obj)
    if not records:
        raise DataError(f"{path}: no records")
    return records


def encode_record(record: dict, max_seq_len: int) -> tuple[list[int], list[int]]:
    """(input_ids, labels) with loss masked to the target span."""
    prompt_ids = encode(record["input"] + REPLY_MARKER)
    target_ids = encode(record["target"]) + [EOS]
    ids = prompt_ids + target_ids
    labels = [IGNORE_INDEX] * len(prompt_ids) + list(target_ids)
    if len(ids) > max_seq_len:
        # keep the tail: the reply marker and target must survive cropping
        ids = ids[-max_seq_len:]
        labels = labels[-max_seq_len:]
    return ids, labels


def make_batches(records: list[dict], batch_size: int, max_seq_len: int):
    """Padded (input_ids, labels) tensor batches, in dataset order."""
    batches = []
    for start in range(0, len(records), batch_size):
        chunk = records[start: start + batch_size]
        encoded = [encode_record(rec, max_seq_len) for rec in chunk]
        width = max(len(ids) for ids, _ in encoded)
        input_ids = torch.full((len(chunk), width), PAD, dtype=torch.long)
        labels = torch.full((len(chunk), width), IGNORE_INDEX, dtype=torch.long)
        for row, (ids, labs) in enumerate(encoded):
            input_ids[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            labels[row, : len(labs)] = torch.tensor(labs, dtype=torch.long)
        batches.append((input_ids, labels))
    return batches

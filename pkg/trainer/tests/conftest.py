import json
from pathlib import Path

import pytest


def write_dataset(path: Path, n: int = 10) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for i in range(n):
            fh.write(json.dumps({
                "input": (f"Question:\nHow many units in batch {i}?\n\n"
                          f"Feedback the prompt should earn:\nClear, correct steps.\n\nPrompt:"),
                "target": f"Count the units in batch {i} one group at a time.",
                "meta": {"question_id": f"q{i:02d}", "grade": i % 2, "iteration": 1},
            }) + "\n")
    return path


def write_spec(path: Path, base_id: str = "tiny-base", base_kind: str = "base",
               base_locator: str = "", epochs: int = 2, lora_rank: int = 256,
               lora_alpha: int = 256, learning_rate: float = 2e-5,
               batch_size: int = 8) -> Path:
    path.write_text(
        f"base_model_id={base_id}\n"
        f"base_model_kind={base_kind}\n"
        f"base_model_locator={base_locator}\n"
        f"base_model_parent=\n"
        f"lora_rank={lora_rank}\n"
        f"lora_alpha={lora_alpha}\n"
        f"epochs={epochs}\n"
        f"learning_rate={learning_rate}\n"
        f"optimizer=adam\n"
        f"schedule=linear-decay\n"
        f"batch_size={batch_size}\n"
        f"warmup_steps=0\n"
        f"max_seq_len=2048\n",
        encoding="utf-8")
    return path


@pytest.fixture
def dataset(tmp_path):
    return write_dataset(tmp_path / "dataset.jsonl")


@pytest.fixture
def spec_file(tmp_path):
    return write_spec(tmp_path / "spec.kv")

"""Bridge to pluggable trainer backends and checkpoint bookkeeping.

The trainer invocation contract is the language-neutral boundary: a backend
receives (dataset.jsonl, spec.kv, output_dir) and must leave a
``modelref.json`` descriptor ``{id, kind, locator, parent}`` in the output
directory. Three backends ship here: ``mock`` (immediate tagged ref, for
hermetic runs), ``command`` (subprocess), and ``service`` (HTTP POST of the
same payload). Each iteration fine-tunes the previous checkpoint, so an
adapter's parent chain always terminates at the configured base model.

Spec files are flat ``key=value`` lines so non-Python trainers can consume
them. Batch size, warmup, and sequence length defaults are artifact choices,
not sourced ones.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import httpx


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelRef:
    id: str
    kind: str  # "base" | "adapter"
    locator: str
    parent: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("base", "adapter"):
            raise TrainingError(f"unknown model kind {self.kind!r}")
        if self.kind == "adapter" and not self.parent:
            raise TrainingError("adapter refs require a parent")

    def as_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "locator": self.locator,
                "parent": self.parent}

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelRef":
        try:
            return cls(id=obj["id"], kind=obj["kind"], locator=obj["locator"],
                       parent=obj.get("parent"))
        except KeyError as exc:
            raise TrainingError(f"model descriptor missing field {exc}") from exc


@dataclass(frozen=True)
class TrainerSpec:
    base_model: ModelRef
    lora_rank: int = 256
    lora_alpha: int = 256
    epochs: int = 2
    learning_rate: float = 2e-5
    optimizer: str = "adam"
    schedule: str = "linear-decay"
    # Not sourced from the training recipe; artifact defaults.
    batch_size: int = 8
    warmup_steps: int = 0
    max_seq_len: int = 2048

    def __post_init__(self):
        for name in ("lora_rank", "lora_alpha", "epochs", "batch_size", "max_seq_len"):
            if getattr(self, name) < 1:
                raise TrainingError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise TrainingError("learning_rate must be positive")


def write_spec_file(spec: TrainerSpec, path) -> None:
    lines = [
        f"base_model_id={spec.base_model.id}",
        f"base_model_kind={spec.base_model.kind}",
        f"base_model_locator={spec.base_model.locator}",
        f"base_model_parent={spec.base_model.parent or ''}",
        f"lora_rank={spec.lora_rank}",
        f"lora_alpha={spec.lora_alpha}",
        f"epochs={spec.epochs}",
        f"learning_rate={spec.learning_rate}",
        f"optimizer={spec.optimizer}",
        f"schedule={spec.schedule}",
        f"batch_size={spec.batch_size}",
        f"warmup_steps={spec.warmup_steps}",
        f"max_seq_len={spec.max_seq_len}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_spec_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise TrainingError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def validate_sft_file(path) -> int:
    """Check the SFT record schema; returns the record count."""
    path = Path(path)
    if not path.exists():
        raise TrainingError(f"dataset file not found: {path}")
    count = 0
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TrainingError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj.get("input"), str) or not obj["input"]:
            raise TrainingError(f"{path}:{lineno}: missing nonempty 'input'")
        if not isinstance(obj.get("target"), str) or not obj["target"]:
            raise TrainingError(f"{path}:{lineno}: missing nonempty 'target'")
        meta = obj.get("meta")
        if not isinstance(meta, dict) or "question_id" not in meta:
            raise TrainingError(f"{path}:{lineno}: missing meta.question_id")
        count += 1
    if count == 0:
        raise TrainingError(f"{path}: no records")
    return count


class TrainerBackend:
    name = "abstract"

    def train(self, dataset_file: Path, spec_file: Path, output_dir: Path,
              spec: TrainerSpec) -> ModelRef:
        raise NotImplementedError


class MockTrainerBackend(TrainerBackend):
    """Returns a tagged adapter ref immediately; no weights are produced.

    The ref id encodes the parent-chain depth (mock-adapter-k1, -k2, ...) and
    the locator points at ``serve_url`` so hermetic runs can rebind the
    prompt model onto the simulator.
    """

    name = "mock"

    def __init__(self, serve_url: str):
        self.serve_url = serve_url

    def train(self, dataset_file, spec_file, output_dir, spec) -> ModelRef:
        base_id = spec.base_model.id
        depth = 1
        if base_id.startswith("mock-adapter-k"):
            depth = int(base_id.rsplit("k", 1)[1]) + 1
        return ModelRef(id=f"mock-adapter-k{depth}", kind="adapter",
                        locator=self.serve_url, parent=base_id)


class CommandTrainerBackend(TrainerBackend):
    """Invokes a configured command with (dataset, spec file, output dir) args."""

    name = "command"

    def __init__(self, command: list[str]):
        if not command:
            raise TrainingError("command backend requires a nonempty command")
        self.command = list(command)

    def train(self, dataset_file, spec_file, output_dir, spec) -> ModelRef:
        argv = self.command + [str(dataset_file), str(spec_file), str(output_dir)]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise TrainingError(
                f"trainer command exited {proc.returncode}: "
                f"{(proc.stderr or proc.stdout).strip()[-2000:]}")
        return _read_descriptor(Path(output_dir) / "modelref.json")


class ServiceTrainerBackend(TrainerBackend):
    """POSTs the invocation payload to a training service."""

    name = "service"

    def __init__(self, url: str, timeout: float = 3600.0):
        self.url = url
        self.timeout = timeout

    def train(self, dataset_file, spec_file, output_dir, spec) -> ModelRef:
        payload = {
            "dataset_path": str(dataset_file),
            "spec_path": str(spec_file),
            "output_dir": str(output_dir),
        }
        try:
            resp = httpx.post(self.url, json=payload, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise TrainingError(f"trainer service unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise TrainingError(f"trainer service returned {resp.status_code}: {resp.text[:500]}")
        return _read_descriptor(Path(output_dir) / "modelref.json")


def _read_descriptor(path: Path) -> ModelRef:
    if not path.exists():
        raise TrainingError(f"trainer produced no descriptor at {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TrainingError(f"malformed descriptor {path}: {exc.msg}") from exc
    return ModelRef.from_dict(obj)


def train(dataset_file, spec: TrainerSpec, backend: TrainerBackend, work_dir) -> ModelRef:
    """Validate the dataset, write the spec file, and run the backend.

    The returned adapter's parent is the spec's base model, preserving the
    chain of custody across iterations.
    """
    validate_sft_file(dataset_file)
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    spec_file = work_dir / "spec.kv"
    write_spec_file(spec, spec_file)
    ref = backend.train(Path(dataset_file), spec_file, work_dir, spec)
    if ref.kind != "adapter":
        raise TrainingError(f"backend returned non-adapter ref {ref.id!r}")
    if ref.parent != spec.base_model.id:
        raise TrainingError(
            f"descriptor parent {ref.parent!r} does not match base model {spec.base_model.id!r}")
    return ref


@dataclass
class RegistryEntry:
    ref: ModelRef
    iteration: int
    dataset_digest: str
    val_score: Optional[float] = None


class CheckpointRegistry:
    """Append-only id -> (ref, iteration, val_score, dataset digest) map."""

    def __init__(self):
        self._entries: dict[str, RegistryEntry] = {}

    def add(self, ref: ModelRef, iteration: int, dataset_digest: str,
            val_score: Optional[float] = None) -> None:
        if ref.id in self._entries:
            raise TrainingError(f"checkpoint {ref.id!r} already registered")
        if val_score is not None and not 0 <= val_score <= 1:
            raise TrainingError("val_score must be in [0, 1]")
        self._entries[ref.id] = RegistryEntry(ref, iteration, dataset_digest, val_score)

    def record_score(self, ref_id: str, val_score: float) -> None:
        entry = self._entries.get(ref_id)
        if entry is None:
            raise TrainingError(f"unknown checkpoint {ref_id!r}")
        if not 0 <= val_score <= 1:
            raise TrainingError("val_score must be in [0, 1]")
        if entry.val_score is not None and entry.val_score != val_score:
            raise TrainingError(f"checkpoint {ref_id!r} already scored")
        entry.val_score = val_score

    def get(self, ref_id: str) -> RegistryEntry:
        if ref_id not in self._entries:
            raise TrainingError(f"unknown checkpoint {ref_id!r}")
        return self._entries[ref_id]

    def ids(self) -> list[str]:
        return list(self._entries)

    def parent_chain(self, ref_id: str) -> list[str]:
        """Ids from ref_id up to (and including) its root."""
        chain = [ref_id]
        seen = {ref_id}
        current = self._entries.get(ref_id)
        while current is not None and current.ref.parent is not None:
            parent = current.ref.parent
            if parent in seen:
                raise TrainingError(f"cycle in parent chain at {parent!r}")
            chain.append(parent)
            seen.add(parent)
            current = self._entries.get(parent)
        return chain


def select_checkpoint(registry: CheckpointRegistry, candidates: list[str]) -> ModelRef:
    """Candidate with maximal validation score; ties go to the earliest iteration."""
    if not candidates:
        raise TrainingError("no candidate checkpoints")
    best = None
    for cid in candidates:
        entry = registry.get(cid)
        if entry.val_score is None:
            raise TrainingError(f"candidate {cid!r} has no validation score")
        key = (-entry.val_score, entry.iteration)
        if best is None or key < best[0]:
            best = (key, entry.ref)
    return best[1]

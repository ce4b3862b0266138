"""Adapter training against the pipeline's invocation contract.

``train_adapter(dataset, spec, output_dir)`` resolves the base model (a
builtin name, or a previous adapter directory whose deltas get merged before
fresh LoRA is injected), runs masked-loss supervised fine-tuning with Adam
and a linear learning-rate decay, and leaves three artifacts in the output
directory: ``modelref.json`` (the contract descriptor), ``adapter.pt`` (LoRA
tensors), and ``adapter.json`` (base name, spec digest, loss curve).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import torch
from torch import nn

from .data import IGNORE_INDEX, SpecValues, load_records, make_batches, parse_spec
from .model import (
    TinyLM,
    build_base_model,
    inject_lora,
    load_lora_state,
    lora_state_dict,
    merge_all_lora,
)


class TrainerFailure(RuntimeError):
    pass


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def resolve_base(spec: SpecValues) -> tuple[TinyLM, str]:
    """Instantiate the starting weights; returns (model, root base id).

    A base-kind spec names a builtin; an adapter-kind spec points at a
    previous output directory whose LoRA deltas are merged into the weights
    so the new adapter trains on top of them.
    """
    if spec.base_model_kind == "base":
        return build_base_model(spec.base_model_id), spec.base_model_id
    artifact_dir = Path(spec.base_model_locator)
    meta_path = artifact_dir / "adapter.json"
    if not meta_path.exists():
        raise TrainerFailure(f"parent adapter artifact not found at {artifact_dir}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    return _load_adapter_stack(artifact_dir, meta)


def _load_adapter_stack(artifact_dir: Path, meta: dict) -> tuple[TinyLM, str]:
    model = build_base_model(meta["root_base_id"])
    # replay the chain of merged adapters recorded in the artifact
    for layer in meta.get("merged_stack", []):
        inject_lora(model, layer["lora_rank"], layer["lora_alpha"])
        state = torch.load(artifact_dir / layer["weights"], weights_only=True)
        load_lora_state(model, state)
        merge_all_lora(model)
    inject_lora(model, meta["lora_rank"], meta["lora_alpha"])
    state = torch.load(artifact_dir / "adapter.pt", weights_only=True)
    load_lora_state(model, state)
    merge_all_lora(model)
    return model, meta["root_base_id"]


def masked_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Next-token cross entropy over positions whose label is not ignored."""
    shifted_logits = logits[:, :-1].reshape(-1, logits.shape[-1])
    shifted_labels = labels[:, 1:].reshape(-1)
    return nn.functional.cross_entropy(shifted_logits, shifted_labels,
                                       ignore_index=IGNORE_INDEX)


def train_adapter(dataset_file, spec_file, output_dir, seed: int = 0) -> Path:
    """Train one adapter per the invocation contract; returns the descriptor path."""
    spec = parse_spec(spec_file)
    records = load_records(dataset_file)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(seed)
    model, root_base_id = resolve_base(spec)
    max_seq_len = min(spec.max_seq_len, model.cfg.max_positions)
    rank = min(spec.lora_rank, model.cfg.d_model)  # rank beyond width adds nothing
    inject_lora(model, rank, spec.lora_alpha)
    trainable = [p for p in model.parameters() if p.requires_grad]

    batches = make_batches(records, spec.batch_size, max_seq_len)
    total_steps = max(1, len(batches) * spec.epochs)
    optimizer = torch.optim.Adam(trainable, lr=spec.learning_rate)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: max(0.0, 1.0 - step / total_steps))

    loss_curve = []
    step = 0
    model.train()
    for _ in range(spec.epochs):
        for input_ids, labels in batches:
            optimizer.zero_grad()
            loss = masked_loss(model(input_ids), labels)
            loss.backward()
            optimizer.step()
            scheduler.step()
            step += 1
            loss_curve.append([step, round(float(loss.item()), 6)])
    if not loss_curve:
        raise TrainerFailure("training produced an empty loss curve")

    spec_digest = _file_digest(spec_file)
    adapter_id = "adapter-" + hashlib.sha256(
        (spec_digest + _file_digest(dataset_file) + spec.base_model_id).encode()
    ).hexdigest()[:12]

    torch.save(lora_state_dict(model), output_dir / "adapter.pt")

    merged_stack = []
    if spec.base_model_kind == "adapter":
        parent_meta = json.loads(
            (Path(spec.base_model_locator) / "adapter.json").read_text(encoding="utf-8"))
        merged_stack = list(parent_meta.get("merged_stack", []))
        stack_weights = f"stack_{len(merged_stack)}.pt"
        parent_state = torch.load(Path(spec.base_model_locator) / "adapter.pt",
                                  weights_only=True)
        torch.save(parent_state, output_dir / stack_weights)
        for prior in merged_stack:
            src = Path(spec.base_model_locator) / prior["weights"]
            torch.save(torch.load(src, weights_only=True), output_dir / prior["weights"])
        merged_stack.append({"lora_rank": parent_meta["lora_rank"],
                             "lora_alpha": parent_meta["lora_alpha"],
                             "weights": stack_weights})

    (output_dir / "adapter.json").write_text(json.dumps({
        "base_model_id": spec.base_model_id,
        "root_base_id": root_base_id,
        "spec_digest": spec_digest,
        "lora_rank": rank,
        "lora_alpha": spec.lora_alpha,
        "max_seq_len": max_seq_len,
        "merged_stack": merged_stack,
        "loss_curve": loss_curve,
    }, indent=2) + "\n", encoding="utf-8")

    descriptor = output_dir / "modelref.json"
    descriptor.write_text(json.dumps({
        "id": adapter_id,
        "kind": "adapter",
        "locator": str(output_dir),
        "parent": spec.base_model_id,
    }, indent=2) + "\n", encoding="utf-8")
    return descriptor


def overfit_smoke(dataset_file, epochs: int = 40, learning_rate: float = 1e-2) -> bool:
    """Short sanity run: final loss must fall below 0.8x the initial loss.

    The output head joins the trainable set here: the builtin family's frozen
    random head caps how far pure-LoRA loss can fall on a few records, and
    the smoke's job is to prove the training machinery moves the loss, not to
    mirror the production target-module set.
    """
    records = load_records(dataset_file)
    if len(records) < 5:
        raise TrainerFailure(f"overfit smoke needs >= 5 records, got {len(records)}")
    torch.manual_seed(1)
    model = build_base_model("tiny-base")
    inject_lora(model, rank=16, alpha=32)
    model.head.weight.requires_grad_(True)
    trainable = [p for p in model.parameters() if p.requires_grad]
    batches = make_batches(records, batch_size=len(records), max_seq_len=model.cfg.max_positions)
    optimizer = torch.optim.Adam(trainable, lr=learning_rate)
    first = last = None
    model.train()
    for _ in range(epochs):
        for input_ids, labels in batches:
            optimizer.zero_grad()
            loss = masked_loss(model(input_ids), labels)
            loss.backward()
            optimizer.step()
            value = float(loss.item())
            first = value if first is None else first
            last = value
    return last < 0.8 * first

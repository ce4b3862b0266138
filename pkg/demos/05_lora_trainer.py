"""The LoRA trainer backend: train an adapter, serve it, close the loop.

Requires the trainer package: pip install -e trainer/

Run: python demos/05_lora_trainer.py
"""

import json
import tempfile
from pathlib import Path

from prompt_trainer.train import overfit_smoke, train_adapter
from prompt_trainer.serve import serve_adapter

from textreward.gateway import ChatGateway, EndpointBinding, GenerationParams, ModelRole
from textreward.templating import TemplateSet

workdir = Path(tempfile.mkdtemp(prefix="trainer-demo-"))

dataset = workdir / "dataset.jsonl"
with dataset.open("w") as fh:
    for i in range(10):
        fh.write(json.dumps({
            "input": (f"Question:\nHow many units in batch {i}?\n\n"
                      f"Feedback the prompt should earn:\nClear, correct steps.\n\nPrompt:"),
            "target": f"Count the units in batch {i} one group at a time.",
            "meta": {"question_id": f"q{i:02d}", "grade": 1, "iteration": 1},
        }) + "\n")

spec = workdir / "spec.kv"
spec.write_text("""\
base_model_id=tiny-base
base_model_kind=base
base_model_locator=
base_model_parent=
lora_rank=16
lora_alpha=32
epochs=2
learning_rate=2e-05
optimizer=adam
schedule=linear-decay
batch_size=8
warmup_steps=0
max_seq_len=2048
""")

print("== train an adapter per the invocation contract ==")
descriptor_path = train_adapter(dataset, spec, workdir / "out")
descriptor = json.loads(descriptor_path.read_text())
meta = json.loads((workdir / "out" / "adapter.json").read_text())
print(f"  descriptor: {descriptor}")
print(f"  loss {meta['loss_curve'][0][1]:.4f} -> {meta['loss_curve'][-1][1]:.4f} "
      f"over {len(meta['loss_curve'])} steps")

print("\n== overfit smoke (final loss < 0.8 x initial) ==")
print(f"  pass: {overfit_smoke(dataset)}")

print("\n== serve the adapter and call it through the pipeline gateway ==")
handle = serve_adapter(descriptor_path)
gateway = ChatGateway()
gateway.bind_role(ModelRole.PROMPT_MODEL, EndpointBinding(handle.base_url, descriptor["id"]))
messages = TemplateSet.load().render_prompt_generation(
    "How many units in batch 3?", "Clear, correct steps.")
completion = gateway.complete(ModelRole.PROMPT_MODEL, messages,
                              GenerationParams(temperature=0.001, max_tokens=32))
print(f"  adapter endpoint {handle.base_url}")
print(f"  completion: {completion!r}")
gateway.close()
handle.stop()

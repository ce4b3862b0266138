"""The full iterative pipeline, hermetically, against the scripted simulator.

Two iterations of synthesize -> train (mock backend) -> reward search ->
evaluate, then a kill-and-resume showing the manifest comes back
byte-identical.

Run: python demos/04_hermetic_pipeline.py
"""

import json
import shutil
import tempfile
from pathlib import Path

from textreward.config import load_config
from textreward.orchestrator import resume, run
from textreward.simserver import ScriptRule, serve_script

workdir = Path(tempfile.mkdtemp(prefix="textreward-demo-"))

QUESTIONS = [
    ("d01", "How many wheels on 6 cars?", 24, "6 x 4 = 24. The answer is 24."),
    ("d02", "Price of 7 pens at 3 each?", 21, "7 x 3 = 21. The answer is 21."),
    ("d03", "Minutes in 4 hours?", 240, "4 x 60 = 240. The answer is 240."),
    ("d04", "Days in 5 weeks?", 35, "5 x 7 = 35. The answer is 35."),
    ("d05", "Eggs in 3 dozen?", 36, "3 x 12 = 37. The answer is 37."),
    ("d06", "Legs on 8 spiders?", 64, "8 x 8 = 64. The answer is 64."),
    ("d07", "Cents in 9 dimes?", 90, "9 x 10 = 90. The answer is 90."),
    ("d08", "Hours in 3 days?", 72, "3 x 24 = 72. The answer is 72."),
    ("d09", "Sides on 5 triangles?", 15, "5 x 3 = 15. The answer is 15."),
    ("d10", "Keys on 2 pianos?", 176, "2 x 88 = 176. The answer is 176."),
]
VAL = [
    ("dv1", "Wings on 4 planes?", 8, "4 x 2 = 8. The answer is 8."),
    ("dv2", "Strings on 3 guitars?", 18, "3 x 6 = 19. The answer is 19."),
]

rules = [
    ScriptRule(match="Feedback the prompt should earn:",
               response="Work the multiplication out loud, then state the product."),
    ScriptRule(match="Prompt under review:",
               response="The prompt kept the solver organized; the product matched."),
    ScriptRule(match="Failure cases:",
               response="The guidance never demands a second check of the product."),
    ScriptRule(match="Rewritten guidance text:",
               response="The prompt made the solver verify the product before answering."),
]
for _, text, _, answer in QUESTIONS + VAL:
    rules.append(ScriptRule(match=" ".join(text.split()[:3]), response=answer))

sim = serve_script(rules)
print(f"simulator on {sim.base_url}")

for name, rows in (("train.jsonl", QUESTIONS), ("val.jsonl", VAL)):
    with (workdir / name).open("w") as fh:
        for qid, text, gold, _ in rows:
            fh.write(json.dumps({"id": qid, "question": text, "answer": f"#### {gold}"}) + "\n")

config_path = workdir / "config.toml"
config_path.write_text(f"""\
[run]
run_dir = "{(workdir / 'run').as_posix()}"
iterations = 2
synthesis_size = 8
failure_digest_size = 4
seed = 7
search_budget = 2
deterministic_eval = true

[dataset]
kind = "gsm8k"
train_path = "{(workdir / 'train.jsonl').as_posix()}"
val_path = "{(workdir / 'val.jsonl').as_posix()}"

[roles.prompt_model]
base_url = "{sim.base_url}"
model_name = "sim-prompt"

[roles.target_model]
base_url = "{sim.base_url}"
model_name = "sim-target"

[roles.reward_model]
base_url = "{sim.base_url}"
model_name = "sim-reward"

[roles.optimizer_model]
base_url = "{sim.base_url}"
model_name = "sim-optimizer"

[trainer]
backend = "mock"
""")

print("\n== uninterrupted run ==")
manifest = run(load_config(config_path))
for entry in manifest.data["iterations"]:
    print(f"  iteration {entry['k']}: dataset {entry['dataset_digest'][:10]}…, "
          f"checkpoint {entry['checkpoint']['id']}, "
          f"post-SFT acc {entry['post_sft_accuracy']}, "
          f"val acc {entry['validation_accuracy']}")
print(f"  best checkpoint: {manifest.data['best_checkpoint']['id']}")
reference_bytes = manifest.bytes()

print("\n== kill after iteration 1 training, then resume ==")
run_dir = workdir / "run"
shutil.rmtree(run_dir)
partial = run(load_config(config_path), stop_after=2)
print(f"  stopped with status {partial.data['status']!r}, "
      f"next stage {partial.first_incomplete(2)}")
resumed = resume(run_dir / "manifest.json")
print(f"  resumed to status {resumed.data['status']!r}")
print(f"  manifest byte-identical to the uninterrupted run: "
      f"{resumed.bytes() == reference_bytes}")

sim.stop()
print(f"\nartifacts under {workdir}")

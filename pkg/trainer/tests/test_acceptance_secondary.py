"""Secondary acceptance: the trainer contract and loop closure.

Criterion 9 drives the CLI exactly as the pipeline's command backend does;
criterion 10 binds the served adapter as the prompt model through the
pipeline gateway and completes a prompt-generation request end-to-end.
"""

import json
import subprocess
import sys
from contextlib import contextmanager

from prompt_trainer.serve import serve_adapter
from prompt_trainer.train import overfit_smoke

from conftest import write_dataset, write_spec


@contextmanager
def criterion(number: int, label: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} [{label}]: FAIL", flush=True)
        raise
    print(f"ACCEPTANCE {number} [{label}]: PASS", flush=True)


def test_criterion_9_trainer_contract(tmp_path):
    with criterion(9, "trainer contract + overfit smoke"):
        dataset = write_dataset(tmp_path / "dataset.jsonl", n=10)
        spec = write_spec(tmp_path / "spec.kv")
        out = tmp_path / "out"
        proc = subprocess.run(
            [sys.executable, "-m", "prompt_trainer", "train",
             str(dataset), str(spec), str(out)],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        descriptor = json.loads((out / "modelref.json").read_text())
        assert set(descriptor) == {"id", "kind", "locator", "parent"}
        assert descriptor["kind"] == "adapter"
        assert descriptor["parent"] == "tiny-base"
        meta = json.loads((out / "adapter.json").read_text())
        assert meta["loss_curve"], "loss curve must be nonempty"
        assert overfit_smoke(dataset) is True


def test_pipeline_command_backend_integration(tmp_path):
    """Two pipeline iterations with real LoRA training via the command backend."""
    from textreward.config import load_config
    from textreward.orchestrator import run
    from textreward.simserver import ScriptRule, serve_script

    questions = [
        ("t1", "How many wheels on 3 cars?", 12, "3 x 4 = 12. The answer is 12."),
        ("t2", "Price of 5 pens at 2 each?", 10, "5 x 2 = 10. The answer is 10."),
        ("t3", "Minutes in 2 hours?", 120, "2 x 60 = 120. The answer is 120."),
        ("t4", "Days in 3 weeks?", 21, "3 x 7 = 21. The answer is 21."),
        ("t5", "Legs on 4 dogs?", 16, "4 x 4 = 17. The answer is 17."),
    ]
    val = [("tv1", "Sides on 2 squares?", 8, "2 x 4 = 8. The answer is 8."),
           ("tv2", "Corners on 3 cubes?", 24, "3 x 8 = 25. The answer is 25.")]
    rules = [
        ScriptRule(match="Feedback the prompt should earn:",
                   response="Walk through it step by step."),
        ScriptRule(match="Prompt under review:", response="The prompt worked well."),
        ScriptRule(match="Failure cases:", response="Push for double-checking."),
        ScriptRule(match="Rewritten guidance text:",
                   response="The prompt made the solver verify each product."),
    ]
    for _, text, _, answer in questions + val:
        rules.append(ScriptRule(match=" ".join(text.split()[:3]), response=answer))

    for name, rows in (("train.jsonl", questions), ("val.jsonl", val)):
        with (tmp_path / name).open("w") as fh:
            for qid, text, gold, _ in rows:
                fh.write(json.dumps({"id": qid, "question": text,
                                     "answer": f"#### {gold}"}) + "\n")

    handle = serve_script(rules)
    config_path = tmp_path / "config.toml"
    config_path.write_text(f"""\
[run]
run_dir = "{(tmp_path / 'run').as_posix()}"
iterations = 2
synthesis_size = 4
failure_digest_size = 4
seed = 3
search_budget = 1
deterministic_eval = true

[dataset]
kind = "gsm8k"
train_path = "{(tmp_path / 'train.jsonl').as_posix()}"
val_path = "{(tmp_path / 'val.jsonl').as_posix()}"

[roles.prompt_model]
base_url = "{handle.base_url}"
model_name = "sim-prompt"

[roles.target_model]
base_url = "{handle.base_url}"
model_name = "sim-target"

[roles.reward_model]
base_url = "{handle.base_url}"
model_name = "sim-reward"

[roles.optimizer_model]
base_url = "{handle.base_url}"
model_name = "sim-optimizer"

[trainer]
backend = "command"
command = ["{sys.executable}", "-m", "prompt_trainer", "train"]
lora_rank = 16
lora_alpha = 32
epochs = 1
learning_rate = 2e-5
""", encoding="utf-8")
    try:
        manifest = run(load_config(config_path))
        assert manifest.data["status"] == "complete"
        refs = [entry["checkpoint"] for entry in manifest.data["iterations"]]
        assert refs[0]["parent"] == "sim-prompt"
        assert refs[1]["parent"] == refs[0]["id"]
        # the final adapter artifact is genuinely servable
        final_descriptor = tmp_path / "run" / "iter_2" / "train" / "modelref.json"
        serve_handle = serve_adapter(final_descriptor)
        try:
            import httpx
            resp = httpx.post(serve_handle.base_url + "/chat/completions", json={
                "model": refs[1]["id"],
                "messages": [{"role": "user", "content": "Question:\nPrice of 5 pens?"}],
                "temperature": 0.001, "max_tokens": 16,
            }, timeout=60)
            assert resp.json()["choices"][0]["message"]["content"]
        finally:
            serve_handle.stop()
    finally:
        handle.stop()


def test_criterion_10_loop_closure_through_pipeline_gateway(tmp_path):
    with criterion(10, "loop closure via pipeline gateway"):
        from textreward.gateway import (
            ChatGateway, EndpointBinding, GenerationParams, ModelRole)
        from textreward.templating import TemplateSet

        dataset = write_dataset(tmp_path / "dataset.jsonl", n=10)
        spec = write_spec(tmp_path / "spec.kv")
        descriptor = tmp_path / "out" / "modelref.json"
        from prompt_trainer.train import train_adapter
        train_adapter(dataset, spec, tmp_path / "out")

        handle = serve_adapter(descriptor)
        gateway = ChatGateway()
        try:
            ref = json.loads(descriptor.read_text())
            gateway.bind_role(ModelRole.PROMPT_MODEL,
                              EndpointBinding(handle.base_url, ref["id"]))
            messages = TemplateSet.load().render_prompt_generation(
                "How many units in batch 3?",
                "The prompt kept the solver on track and the answer matched.")
            text = gateway.complete(ModelRole.PROMPT_MODEL, messages,
                                    GenerationParams(temperature=0.9, max_tokens=32))
            assert isinstance(text, str) and text
        finally:
            gateway.close()
            handle.stop()

"""Trainer backends, the invocation contract, and checkpoint selection."""

import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from textreward.training import (
    CheckpointRegistry,
    CommandTrainerBackend,
    MockTrainerBackend,
    ModelRef,
    ServiceTrainerBackend,
    TrainerSpec,
    TrainingError,
    read_spec_file,
    select_checkpoint,
    train,
    validate_sft_file,
    write_spec_file,
)

BASE = ModelRef(id="base", kind="base", locator="http://127.0.0.1:1/v1")


def write_sft(path: Path, n=8):
    with path.open("w", encoding="utf-8") as fh:
        for i in range(n):
            fh.write(json.dumps({
                "input": f"Question:\nq{i}?\n\nFeedback the prompt should earn:\nr\n\nPrompt:",
                "target": f"prompt {i}",
                "meta": {"question_id": f"q{i}", "grade": i % 2, "iteration": 1},
            }) + "\n")
    return path


def test_mock_backend_tags_iterations(tmp_path):
    dataset = write_sft(tmp_path / "ds.jsonl")
    backend = MockTrainerBackend(serve_url="http://127.0.0.1:9999/v1")
    spec = TrainerSpec(base_model=BASE)
    ref1 = train(dataset, spec, backend, tmp_path / "k1")
    assert ref1.id == "mock-adapter-k1"
    assert ref1.kind == "adapter" and ref1.parent == "base"
    ref2 = train(dataset, TrainerSpec(base_model=ref1), backend, tmp_path / "k2")
    assert ref2.id == "mock-adapter-k2" and ref2.parent == "mock-adapter-k1"


def test_spec_file_round_trip(tmp_path):
    spec = TrainerSpec(base_model=BASE, lora_rank=256, lora_alpha=256,
                       epochs=2, learning_rate=2e-5)
    path = tmp_path / "spec.kv"
    write_spec_file(spec, path)
    values = read_spec_file(path)
    assert values["lora_rank"] == "256"
    assert values["lora_alpha"] == "256"
    assert values["epochs"] == "2"
    assert values["learning_rate"] == "2e-05"
    assert values["optimizer"] == "adam"
    assert values["schedule"] == "linear-decay"
    assert values["base_model_id"] == "base"


def test_validate_sft_reports_offending_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = json.dumps({"input": "i", "target": "t", "meta": {"question_id": "q"}})
    path.write_text(good + "\n" + good + "\n" + '{"input": "only"}\n')
    with pytest.raises(TrainingError, match=":3:"):
        validate_sft_file(path)


def test_validate_sft_missing_and_empty(tmp_path):
    with pytest.raises(TrainingError, match="not found"):
        validate_sft_file(tmp_path / "absent.jsonl")
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(TrainingError, match="no records"):
        validate_sft_file(empty)


def test_command_backend_reads_descriptor(tmp_path):
    dataset = write_sft(tmp_path / "ds.jsonl")
    script = tmp_path / "fake_trainer.py"
    script.write_text(
        "import json, sys, pathlib\n"
        "dataset, spec, outdir = sys.argv[1:4]\n"
        "values = dict(line.split('=', 1) for line in open(spec) if '=' in line)\n"
        "ref = {'id': 'cmd-adapter-1', 'kind': 'adapter', 'locator': outdir,\n"
        "       'parent': values['base_model_id'].strip()}\n"
        "pathlib.Path(outdir, 'modelref.json').write_text(json.dumps(ref))\n"
    )
    backend = CommandTrainerBackend([sys.executable, str(script)])
    ref = train(dataset, TrainerSpec(base_model=BASE), backend, tmp_path / "out")
    assert ref.id == "cmd-adapter-1" and ref.parent == "base"


def test_command_backend_surfaces_failure_output(tmp_path):
    dataset = write_sft(tmp_path / "ds.jsonl")
    script = tmp_path / "broken.py"
    script.write_text("import sys; print('boom detail', file=sys.stderr); sys.exit(3)\n")
    backend = CommandTrainerBackend([sys.executable, str(script)])
    with pytest.raises(TrainingError, match="boom detail"):
        train(dataset, TrainerSpec(base_model=BASE), backend, tmp_path / "out")


def test_service_backend_round_trip(tmp_path):
    dataset = write_sft(tmp_path / "ds.jsonl")

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_POST(self):  # noqa: N802
            length = int(self.headers.get("Content-Length", 0))
            payload = json.loads(self.rfile.read(length))
            outdir = Path(payload["output_dir"])
            ref = {"id": "svc-adapter-1", "kind": "adapter",
                   "locator": str(outdir), "parent": "base"}
            (outdir / "modelref.json").write_text(json.dumps(ref))
            body = b'{"ok": true}'
            self.send_response(200)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        url = f"http://127.0.0.1:{server.server_address[1]}/train"
        backend = ServiceTrainerBackend(url, timeout=10)
        out = tmp_path / "out"
        out.mkdir()
        ref = train(dataset, TrainerSpec(base_model=BASE), backend, out)
        assert ref.id == "svc-adapter-1"
    finally:
        server.shutdown()
        server.server_close()


def test_descriptor_parent_must_match_base(tmp_path):
    dataset = write_sft(tmp_path / "ds.jsonl")
    script = tmp_path / "wrong_parent.py"
    script.write_text(
        "import json, sys, pathlib\n"
        "pathlib.Path(sys.argv[3], 'modelref.json').write_text(json.dumps(\n"
        "    {'id': 'x', 'kind': 'adapter', 'locator': 'l', 'parent': 'someone-else'}))\n"
    )
    backend = CommandTrainerBackend([sys.executable, str(script)])
    with pytest.raises(TrainingError, match="parent"):
        train(dataset, TrainerSpec(base_model=BASE), backend, tmp_path / "out")


def test_model_ref_invariants():
    with pytest.raises(TrainingError):
        ModelRef(id="a", kind="adapter", locator="x", parent=None)
    with pytest.raises(TrainingError):
        ModelRef(id="a", kind="weird", locator="x")


def test_trainer_spec_invariants():
    with pytest.raises(TrainingError):
        TrainerSpec(base_model=BASE, epochs=0)
    with pytest.raises(TrainingError):
        TrainerSpec(base_model=BASE, learning_rate=0)


def _registry():
    reg = CheckpointRegistry()
    k1 = ModelRef("k1", "adapter", "l1", parent="base")
    k2 = ModelRef("k2", "adapter", "l2", parent="k1")
    k3 = ModelRef("k3", "adapter", "l3", parent="k2")
    reg.add(k1, 1, "d1", val_score=0.30)
    reg.add(k2, 2, "d2", val_score=0.34)
    reg.add(k3, 3, "d3", val_score=0.31)
    return reg


def test_select_checkpoint_argmax():
    reg = _registry()
    assert select_checkpoint(reg, ["k1", "k2", "k3"]).id == "k2"


def test_select_checkpoint_tie_prefers_earliest():
    reg = CheckpointRegistry()
    reg.add(ModelRef("k1", "adapter", "l", parent="base"), 1, "d", val_score=0.30)
    reg.add(ModelRef("k2", "adapter", "l", parent="k1"), 2, "d", val_score=0.30)
    assert select_checkpoint(reg, ["k1", "k2"]).id == "k1"
    assert select_checkpoint(reg, ["k2", "k1"]).id == "k1"


def test_select_checkpoint_single_and_errors():
    reg = _registry()
    assert select_checkpoint(reg, ["k3"]).id == "k3"
    with pytest.raises(TrainingError):
        select_checkpoint(reg, [])
    reg.add(ModelRef("k4", "adapter", "l", parent="k3"), 4, "d")
    with pytest.raises(TrainingError, match="no validation score"):
        select_checkpoint(reg, ["k4"])


def test_registry_append_only_and_chain():
    reg = _registry()
    with pytest.raises(TrainingError, match="already registered"):
        reg.add(ModelRef("k1", "adapter", "l", parent="base"), 9, "d")
    assert reg.parent_chain("k3") == ["k3", "k2", "k1", "base"]
    before = {cid: reg.get(cid).val_score for cid in reg.ids()}
    select_checkpoint(reg, ["k1", "k2", "k3"])
    after = {cid: reg.get(cid).val_score for cid in reg.ids()}
    assert before == after

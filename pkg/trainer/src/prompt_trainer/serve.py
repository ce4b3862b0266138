"""Serve a trained adapter behind the chat-completions HTTP contract.

Loads the descriptor's artifact directory (base + merged adapter stack),
applies the family chat template to the request messages, and generates with
the requested temperature and max_tokens. One model instance serves
concurrent requests under a lock — generation is short and CPU-bound, so
serialized inference keeps the server simple and memory-stable.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import torch

from .model import TinyLM, apply_chat_template, decode, encode, generate
from .train import TrainerFailure, _load_adapter_stack


class ServeError(RuntimeError):
    pass


def load_servable(descriptor_path) -> tuple[TinyLM, dict]:
    """Model + descriptor from a modelref.json; validates the artifact chain."""
    descriptor_path = Path(descriptor_path)
    if not descriptor_path.exists():
        raise ServeError(f"descriptor not found: {descriptor_path}")
    descriptor = json.loads(descriptor_path.read_text(encoding="utf-8"))
    if descriptor.get("kind") != "adapter":
        raise ServeError(f"can only serve adapter descriptors, got {descriptor.get('kind')!r}")
    artifact_dir = Path(descriptor["locator"])
    meta_path = artifact_dir / "adapter.json"
    if not meta_path.exists():
        raise ServeError(f"adapter artifact missing at {artifact_dir}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta["base_model_id"] != descriptor["parent"]:
        raise ServeError(
            f"base model mismatch: artifact trained on {meta['base_model_id']!r} "
            f"but descriptor names parent {descriptor['parent']!r}")
    try:
        model, _ = _load_adapter_stack(artifact_dir, meta)
    except (TrainerFailure, ValueError, KeyError) as exc:
        raise ServeError(f"failed to load adapter stack: {exc}") from exc
    model.eval()
    return model, descriptor


class _AdapterServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr, model: TinyLM, model_id: str):
        super().__init__(addr, _AdapterHandler)
        self.model = model
        self.model_id = model_id
        self.infer_lock = threading.Lock()
        self.request_count = 0


class _AdapterHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *args) -> None:
        pass

    def _send_json(self, status: int, payload: dict) -> None:
        data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):  # noqa: N802
        if not self.path.endswith("/chat/completions"):
            self._send_json(404, {"error": {"message": f"no route {self.path}"}})
            return
        length = int(self.headers.get("Content-Length", 0))
        try:
            body = json.loads(self.rfile.read(length) if length else b"{}")
        except json.JSONDecodeError:
            self._send_json(400, {"error": {"message": "invalid JSON body"}})
            return
        messages = body.get("messages") or []
        temperature = float(body.get("temperature", 1.0))
        max_tokens = int(body.get("max_tokens", 64))
        prompt = apply_chat_template(messages)
        prompt_ids = encode(prompt)
        server: _AdapterServer = self.server
        with server.infer_lock:
            server.request_count += 1
            seed = server.request_count if temperature > 0.001 else 0
            out_ids = generate(server.model, prompt_ids, max_tokens=max_tokens,
                               temperature=temperature, seed=seed)
        text = decode(out_ids) or "."
        self._send_json(200, {
            "id": f"adapter-{server.request_count}",
            "object": "chat.completion",
            "model": server.model_id,
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": text},
                "finish_reason": "stop",
            }],
            "usage": {
                "prompt_tokens": len(prompt_ids),
                "completion_tokens": len(out_ids),
                "total_tokens": len(prompt_ids) + len(out_ids),
            },
        })


class AdapterServerHandle:
    def __init__(self, server: _AdapterServer):
        self._server = server
        host, port = server.server_address[:2]
        self.port = port
        self.base_url = f"http://{host}:{port}/v1"
        self._thread = threading.Thread(
            target=lambda: server.serve_forever(poll_interval=0.05), daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "AdapterServerHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_adapter(descriptor_path, port: int = 0,
                  host: str = "127.0.0.1") -> AdapterServerHandle:
    """Start serving; port 0 picks a free one. Raises ServeError on bad artifacts."""
    model, descriptor = load_servable(descriptor_path)
    with torch.no_grad():
        server = _AdapterServer((host, port), model, descriptor["id"])
    return AdapterServerHandle(server)

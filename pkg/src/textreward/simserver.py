"""Deterministic scripted model server speaking the chat-completions contract.

Structural fidelity only — no attempt to imitate LLM semantics. Rules match on
a substring of ``model name + concatenated message text`` (or on a request
digest prefix) under first-match-wins ordering; unmatched requests fall
through to a pure-function fallback embedding the request digest, so even
unscripted flows reproduce byte-for-byte. Rules can inject a sequence of
failure statuses before succeeding and per-request delays to make concurrency
observable.

An instrumentation endpoint (``GET /__sim__/stats``) reports the request
count and the concurrency high-water mark; ``POST /__sim__/reset`` zeroes
both. The same module hosts the record/replay proxy used to capture live
sessions and re-serve them with zero network egress.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import httpx


@dataclass
class ScriptRule:
    match: str
    response: str
    match_kind: str = "substring"  # "substring" | "digest"
    failures: list[int] = field(default_factory=list)
    delay_ms: int = 0

    def matches(self, model: str, joined: str, digest: str) -> bool:
        if self.match_kind == "digest":
            return digest.startswith(self.match)
        return self.match in f"{model}\n{joined}"


class ReplayMiss(RuntimeError):
    pass


def sim_request_digest(body: dict) -> str:
    """Stable digest of (model, messages) for fallback and matching."""
    payload = {
        "model": body.get("model"),
        "messages": [
            {"role": m.get("role"), "content": m.get("content")}
            for m in body.get("messages", [])
        ],
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def deterministic_fallback(body: dict) -> str:
    """Completion text for unscripted requests; a pure function of the request."""
    return f"sim:{sim_request_digest(body)[:16]}"


def _chat_response(model: str, text: str, body: dict) -> dict:
    prompt_chars = sum(len(m.get("content", "")) for m in body.get("messages", []))
    return {
        "id": f"sim-{sim_request_digest(body)[:8]}",
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "finish_reason": "stop",
        }],
        "usage": {
            "prompt_tokens": prompt_chars // 4 + 1,
            "completion_tokens": len(text) // 4 + 1,
            "total_tokens": prompt_chars // 4 + len(text) // 4 + 2,
        },
    }


class _Instrumented(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr, handler):
        super().__init__(addr, handler)
        self.lock = threading.Lock()
        self.request_count = 0
        self.in_flight = 0
        self.high_water = 0

    def enter(self) -> None:
        with self.lock:
            self.request_count += 1
            self.in_flight += 1
            self.high_water = max(self.high_water, self.in_flight)

    def leave(self) -> None:
        with self.lock:
            self.in_flight -= 1

    def reset_stats(self) -> None:
        with self.lock:
            self.request_count = 0
            self.high_water = self.in_flight

    def stats(self) -> dict:
        with self.lock:
            return {
                "request_count": self.request_count,
                "high_water_mark": self.high_water,
                "in_flight": self.in_flight,
            }


class _BaseHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *args) -> None:  # quiet
        pass

    def _send_json(self, status: int, payload: dict) -> None:
        data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length) if length else b"{}"
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            return {}

    def do_GET(self):  # noqa: N802
        if self.path == "/__sim__/stats":
            self._send_json(200, self.server.stats())
        else:
            self._send_json(404, {"error": {"message": f"no route {self.path}"}})

    def do_POST(self):  # noqa: N802
        if self.path == "/__sim__/reset":
            self.server.reset_stats()
            self._send_json(200, {"ok": True})
            return
        if not self.path.endswith("/chat/completions"):
            self._send_json(404, {"error": {"message": f"no route {self.path}"}})
            return
        body = self._read_body()
        self.server.enter()
        try:
            self._handle_chat(body)
        finally:
            self.server.leave()

    def _handle_chat(self, body: dict) -> None:
        raise NotImplementedError


class _SimServer(_Instrumented):
    def __init__(self, addr, rules: list[ScriptRule]):
        super().__init__(addr, _SimHandler)
        self.rules = list(rules)
        self.failure_progress = [0] * len(self.rules)


class _SimHandler(_BaseHandler):
    def _handle_chat(self, body: dict) -> None:
        server: _SimServer = self.server
        model = body.get("model", "")
        joined = "\n".join(m.get("content", "") for m in body.get("messages", []))
        digest = sim_request_digest(body)
        for i, rule in enumerate(server.rules):
            if not rule.matches(model, joined, digest):
                continue
            with server.lock:
                remaining = len(rule.failures) - server.failure_progress[i]
                if remaining > 0:
                    status = rule.failures[server.failure_progress[i]]
                    server.failure_progress[i] += 1
                else:
                    status = 200
            if status != 200:
                self._send_json(status, {"error": {"message": "injected failure",
                                                   "type": "simulated"}})
                return
            if rule.delay_ms:
                time.sleep(rule.delay_ms / 1000)
            self._send_json(200, _chat_response(model, rule.response, body))
            return
        self._send_json(200, _chat_response(model, deterministic_fallback(body), body))


class ServerHandle:
    """A started server; use as a context manager or call stop() explicitly."""

    def __init__(self, server: _Instrumented):
        self._server = server
        host, port = server.server_address[:2]
        self.port = port
        self.base_url = f"http://{host}:{port}/v1"
        self._thread = threading.Thread(
            target=lambda: server.serve_forever(poll_interval=0.05), daemon=True)
        self._thread.start()

    def stats(self) -> dict:
        return self._server.stats()

    def reset_stats(self) -> None:
        self._server.reset_stats()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "ServerHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_script(rules: list[ScriptRule], port: int = 0,
                 host: str = "127.0.0.1") -> ServerHandle:
    """Start the scripted simulator; port 0 picks a free port."""
    return ServerHandle(_SimServer((host, port), rules))


def load_script_rules(path) -> list[ScriptRule]:
    """Read rules from a JSON array file or JSON Lines file."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        objs = json.loads(text)
    else:
        objs = [json.loads(line) for line in text.splitlines() if line.strip()]
    return [ScriptRule(
        match=o["match"], response=o["response"],
        match_kind=o.get("match_kind", "substring"),
        failures=list(o.get("failures", [])),
        delay_ms=int(o.get("delay_ms", 0)),
    ) for o in objs]


class _ProxyServer(_Instrumented):
    def __init__(self, addr, mode: str, upstream_url: str, log_path: Path):
        super().__init__(addr, _ProxyHandler)
        self.mode = mode
        self.upstream_url = upstream_url.rstrip("/")
        self.log_path = Path(log_path)
        self.log_lock = threading.Lock()
        self.replayed: dict[str, dict] = {}
        self.recorded_bodies: dict[str, dict] = {}
        if mode == "replay":
            for line in self.log_path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                entry = json.loads(line)
                self.replayed.setdefault(entry["digest"], entry)
        self.client = httpx.Client(timeout=60.0) if mode == "record" else None


class _ProxyHandler(_BaseHandler):
    def _handle_chat(self, body: dict) -> None:
        server: _ProxyServer = self.server
        digest = sim_request_digest(body)
        if server.mode == "replay":
            entry = server.replayed.get(digest)
            if entry is None:
                self._send_json(500, {"error": {
                    "message": f"replay miss for request digest {digest}"}})
                return
            self._send_json(entry["status"], entry["response"])
            return
        try:
            resp = server.client.post(server.upstream_url + "/chat/completions", json=body)
        except httpx.HTTPError as exc:
            self._send_json(502, {"error": {"message": f"upstream unreachable: {exc}"}})
            return
        try:
            payload = resp.json()
        except json.JSONDecodeError:
            payload = {"error": {"message": resp.text}}
        entry = {
            "digest": digest,
            "request": body,
            "response": payload,
            "status": resp.status_code,
            "ts": datetime.now(timezone.utc).isoformat(),
        }
        with server.log_lock:
            known = server.recorded_bodies.get(digest)
            if known is not None and known != entry["request"]:
                self._send_json(500, {"error": {
                    "message": f"digest collision for {digest}"}})
                return
            server.recorded_bodies[digest] = entry["request"]
            with server.log_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
        self._send_json(resp.status_code, payload)


def record_replay(mode: str, upstream_base_url: str, log_path,
                  port: int = 0, host: str = "127.0.0.1") -> ServerHandle:
    """Start a record or replay proxy in front of an upstream endpoint.

    Record mode forwards every chat request upstream and appends the exchange
    to the log; replay mode serves logged responses keyed by request digest
    with zero network egress and errors (naming the digest) on a miss.
    """
    if mode not in ("record", "replay"):
        raise ValueError(f"mode must be record or replay, got {mode!r}")
    if mode == "replay" and not Path(log_path).exists():
        raise FileNotFoundError(f"replay log not found: {log_path}")
    return ServerHandle(_ProxyServer((host, port), mode, upstream_base_url, Path(log_path)))

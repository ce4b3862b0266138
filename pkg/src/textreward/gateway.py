"""Uniform client over chat-completion endpoints for the four model roles.

One gateway instance serves every role. Each role is bound to an endpoint;
rebinding is atomic (in-flight calls finish on the binding they started
with). Admission per binding is limited by a counting semaphore honoring
``max_in_flight``, retries use exponential backoff with jitter on
timeout/429/5xx, and usage is appended to a JSON Lines log. An opt-in cache
short-circuits repeat requests, but only at near-greedy temperature — caching
stochastic generations would bias synthesis diversity.

No sampling seed is sent on the wire; determinism in tests comes from the
scripted simulator, not the protocol.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence
from concurrent.futures import ThreadPoolExecutor

import httpx

from .templating import ChatMessage

CACHEABLE_TEMPERATURE = 0.001


class ModelRole(str, Enum):
    PROMPT_MODEL = "prompt_model"
    TARGET_MODEL = "target_model"
    REWARD_MODEL = "reward_model"
    OPTIMIZER_MODEL = "optimizer_model"


class GatewayError(Exception):
    pass


class RoleNotBound(GatewayError):
    pass


class RetriesExhausted(GatewayError):
    pass


class MalformedResponse(GatewayError):
    pass


@dataclass(frozen=True)
class EndpointBinding:
    base_url: str
    model_name: str
    credential_ref: Optional[str] = None
    max_in_flight: int = 64

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise GatewayError(f"max_in_flight must be >= 1, got {self.max_in_flight}")
        if not self.base_url.startswith(("http://", "https://")):
            raise GatewayError(f"malformed base_url {self.base_url!r}")


@dataclass(frozen=True)
class GenerationParams:
    temperature: float
    max_tokens: int = 1024
    stop: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.temperature < 0:
            raise GatewayError("temperature must be nonnegative")
        if self.max_tokens < 1:
            raise GatewayError("max_tokens must be positive")


def request_digest(binding: EndpointBinding, messages: Sequence[ChatMessage],
                   params: GenerationParams) -> str:
    payload = {
        "base_url": binding.base_url,
        "model": binding.model_name,
        "messages": [m.as_dict() for m in messages],
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
        "stop": list(params.stop) if params.stop else None,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass
class _BoundRole:
    binding: EndpointBinding
    semaphore: threading.Semaphore


class ChatGateway:
    """Thread-safe client for all four roles over the chat-completions contract."""

    def __init__(self, retries: int = 4, backoff_base: float = 0.25,
                 backoff_cap: float = 8.0, timeout: float = 60.0,
                 usage_log_path=None, enable_cache: bool = False,
                 sleeper: Callable[[float], None] = time.sleep,
                 rng: Optional[random.Random] = None):
        self.retries = retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.timeout = timeout
        self.usage_log_path = usage_log_path
        self.enable_cache = enable_cache
        self._sleep = sleeper
        self._rng = rng or random.Random()
        self._roles: dict[ModelRole, _BoundRole] = {}
        self._lock = threading.Lock()
        self._cache: dict[str, str] = {}
        self.cache_hits = 0
        self._client = httpx.Client(timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def bind_role(self, role: ModelRole, binding: EndpointBinding) -> None:
        """Route subsequent calls for role to binding; replaces atomically."""
        role = ModelRole(role)
        with self._lock:
            self._roles[role] = _BoundRole(binding, threading.Semaphore(binding.max_in_flight))

    def binding_for(self, role: ModelRole) -> EndpointBinding:
        return self._bound(role).binding

    def _bound(self, role: ModelRole) -> _BoundRole:
        role = ModelRole(role)
        with self._lock:
            bound = self._roles.get(role)
        if bound is None:
            raise RoleNotBound(f"role {role.value} is not bound to an endpoint")
        return bound

    def complete(self, role: ModelRole, messages: Sequence[ChatMessage],
                 params: GenerationParams) -> str:
        """First completion text for one request, with retry and accounting."""
        if not messages:
            raise GatewayError("messages must be nonempty")
        bound = self._bound(role)
        cacheable = self.enable_cache and params.temperature <= CACHEABLE_TEMPERATURE
        key = request_digest(bound.binding, messages, params) if cacheable else None
        if key is not None:
            with self._lock:
                if key in self._cache:
                    self.cache_hits += 1
                    return self._cache[key]
        with bound.semaphore:
            text, retries_used, latency_ms, usage = self._attempt(bound.binding, messages, params)
        self._record_usage(role, bound.binding, usage, latency_ms, retries_used)
        if key is not None:
            with self._lock:
                self._cache[key] = text
        return text

    def complete_many(self, role: ModelRole,
                      requests: Sequence[tuple[Sequence[ChatMessage], GenerationParams]]):
        """Order-aligned batch completion; per-slot failures carried as exceptions.

        Returns a list the same length as requests; each slot is either the
        completion text or the GatewayError that sank it.
        """
        if not requests:
            return []
        bound = self._bound(role)
        results: list = [None] * len(requests)

        def _one(i: int) -> None:
            msgs, params = requests[i]
            try:
                results[i] = self.complete(role, msgs, params)
            except GatewayError as exc:
                results[i] = exc

        workers = min(len(requests), bound.binding.max_in_flight)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_one, range(len(requests))))
        return results

    def _attempt(self, binding: EndpointBinding, messages, params):
        url = binding.base_url.rstrip("/") + "/chat/completions"
        body = {
            "model": binding.model_name,
            "messages": [m.as_dict() for m in messages],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.stop:
            body["stop"] = list(params.stop)
        headers = {}
        if binding.credential_ref:
            key = os.environ.get(binding.credential_ref)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        start = time.monotonic()
        last_reason = "unknown"
        for attempt in range(self.retries + 1):
            if attempt:
                delay = min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1))
                self._sleep(delay * (0.5 + self._rng.random() / 2))
            try:
                resp = self._client.post(url, json=body, headers=headers)
            except httpx.TimeoutException:
                last_reason = "timeout"
                continue
            except httpx.HTTPError as exc:
                last_reason = f"transport error: {exc}"
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_reason = f"status {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise GatewayError(f"endpoint returned status {resp.status_code}: {resp.text[:200]}")
            latency_ms = (time.monotonic() - start) * 1000
            return self._parse(resp), attempt, latency_ms, self._parse_usage(resp)
        raise RetriesExhausted(
            f"gave up after {self.retries + 1} attempts ({last_reason}) for {url}")

    @staticmethod
    def _parse(resp: httpx.Response) -> str:
        try:
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected response body: {exc}") from exc

    @staticmethod
    def _parse_usage(resp: httpx.Response) -> dict:
        try:
            usage = resp.json().get("usage") or {}
        except json.JSONDecodeError:
            usage = {}
        return {
            "tokens_in": usage.get("prompt_tokens"),
            "tokens_out": usage.get("completion_tokens"),
        }

    def _record_usage(self, role: ModelRole, binding: EndpointBinding,
                      usage: dict, latency_ms: float, retries: int) -> None:
        record = {
            "role": ModelRole(role).value,
            "model": binding.model_name,
            "tokens_in": usage.get("tokens_in"),
            "tokens_out": usage.get("tokens_out"),
            "latency_ms": round(latency_ms, 3),
            "retries": retries,
        }
        if self.usage_log_path is None:
            return
        line = json.dumps(record, sort_keys=True) + "\n"
        with self._lock:
            with open(self.usage_log_path, "a", encoding="utf-8") as fh:
                fh.write(line)

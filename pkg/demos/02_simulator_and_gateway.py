"""The scripted simulator, the gateway's retry/batching, and record/replay.

Run: python demos/02_simulator_and_gateway.py
"""

import tempfile
from pathlib import Path

from textreward.gateway import ChatGateway, EndpointBinding, GenerationParams, ModelRole
from textreward.simserver import ScriptRule, record_replay, serve_script
from textreward.templating import ChatMessage

rules = [
    ScriptRule(match="2+2", response="4"),
    ScriptRule(match="flaky", response="recovered", failures=[429, 500]),
    ScriptRule(match="slow", response="done", delay_ms=30),
]
sim = serve_script(rules)
print(f"simulator on {sim.base_url}")

gateway = ChatGateway(usage_log_path=None)
gateway.bind_role(ModelRole.TARGET_MODEL,
                  EndpointBinding(sim.base_url, "demo-model", max_in_flight=4))
params = GenerationParams(temperature=0.001, max_tokens=32)

print("\n== scripted and fallback responses ==")
for content in ["what is 2+2?", "something unscripted"]:
    text = gateway.complete(ModelRole.TARGET_MODEL, [ChatMessage("user", content)], params)
    print(f"  {content!r} -> {text!r}")

print("\n== retry-with-backoff over injected failures ==")
text = gateway.complete(ModelRole.TARGET_MODEL, [ChatMessage("user", "a flaky call")], params)
print(f"  survived two injected failures -> {text!r}")

print("\n== bounded concurrency, observed by the server ==")
sim.reset_stats()
requests = [([ChatMessage("user", f"slow call {i}")], params) for i in range(12)]
results = gateway.complete_many(ModelRole.TARGET_MODEL, requests)
stats = sim.stats()
print(f"  12 requests, bound 4 -> high-water mark {stats['high_water_mark']}")
print(f"  order alignment: {results[:2]} ... all equal 'done': {set(results) == {'done'}}")

print("\n== record a session, then replay it with zero egress ==")
log = Path(tempfile.mkdtemp()) / "session.jsonl"
recorder = record_replay("record", sim.base_url, log)
gateway.bind_role(ModelRole.TARGET_MODEL, EndpointBinding(recorder.base_url, "demo-model"))
first = gateway.complete(ModelRole.TARGET_MODEL, [ChatMessage("user", "what is 2+2?")], params)
recorder.stop()

upstream_before = sim.stats()["request_count"]
replayer = record_replay("replay", sim.base_url, log)
gateway.bind_role(ModelRole.TARGET_MODEL, EndpointBinding(replayer.base_url, "demo-model"))
second = gateway.complete(ModelRole.TARGET_MODEL, [ChatMessage("user", "what is 2+2?")], params)
replayer.stop()
print(f"  recorded {first!r}, replayed {second!r}, byte-identical: {first == second}")
print(f"  upstream calls during replay: {sim.stats()['request_count'] - upstream_before}")

gateway.close()
sim.stop()

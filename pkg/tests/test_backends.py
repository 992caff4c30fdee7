from __future__ import annotations

import json

import httpx
import numpy as np
import pytest

from pamas.backends import (
    BackendError,
    HashingEmbedder,
    ParseError,
    ReflectionContext,
    RemoteBackend,
    SimulatedAgentSpec,
    SimulatedBackend,
    Summary,
    TokenUsage,
    UsageMeter,
    meter,
    self_reflect,
)
from pamas.backends.prompts import parse_experience, parse_judgment, parse_weights
from pamas.model import Instance, Judgment, Origin, Profile, cosine

VIEW = {"rating": 5.0, "length": 12.0, "burst": -3.0}
PROFILE = Profile("rating analyst", tuple(VIEW))


def sim(labels, **kwargs):
    return SimulatedBackend(UsageMeter(), labels=labels, **kwargs)


def test_perfect_oracle_and_anti_oracle():
    good = sim({"x": 0}, default_spec=SimulatedAgentSpec(1.0))
    bad = sim({"x": 0}, default_spec=SimulatedAgentSpec(0.0))
    assert good.judge("A", "x", VIEW, PROFILE, [], "")[0].decision == 0
    assert bad.judge("A", "x", VIEW, PROFILE, [], "")[0].decision == 1


def test_judgment_deterministic_across_backends():
    labels = {f"x{i}": i % 2 for i in range(50)}
    a, b = sim(labels, seed=3), sim(labels, seed=3)
    for i in range(50):
        ja, _ = a.judge("A01", f"x{i}", VIEW, PROFILE, [], "")
        jb, _ = b.judge("A01", f"x{i}", VIEW, PROFILE, ["other experience"], "history differs")
        assert ja == jb


@pytest.mark.parametrize("accuracy", [0.3, 0.7, 0.9])
def test_accuracy_convergence(accuracy):
    labels = {f"x{i}": i % 2 for i in range(1000)}
    backend = sim(labels, seed=11, default_spec=SimulatedAgentSpec(accuracy))
    hits = sum(backend.decide("A", k) == y for k, y in labels.items())
    assert abs(hits / 1000 - accuracy) < 0.05


def test_full_correlation_gives_identical_errors():
    labels = {f"x{i}": i % 2 for i in range(300)}
    spec = SimulatedAgentSpec(0.6, correlation_group="g", corr_strength=1.0)
    backend = sim(labels, specs={"A": spec, "B": spec})
    va = [backend.decide("A", k) for k in labels]
    vb = [backend.decide("B", k) for k in labels]
    assert va == vb
    independent = sim(labels)
    assert [independent.decide("A", k) for k in labels] != [independent.decide("B", k) for k in labels]


def test_missing_hidden_label_is_backend_error():
    with pytest.raises(BackendError):
        sim({}).judge("A", "nope", VIEW, PROFILE, [], "")
    with pytest.raises(BackendError):
        sim({"x": 1}).judge("A", "x", {}, PROFILE, [], "")


def test_synthesize_rule():
    spec = {"DM": SimulatedAgentSpec(1.0)}
    backend = sim({"x": 1}, specs=spec)
    j, _ = backend.synthesize("DM", "x", VIEW, [Summary("C1", 1, "r1", 0.9), Summary("C2", 1, "r2", 0.8)], [], {})
    assert j.decision == 1 and j.direct == 1
    j, _ = backend.synthesize("DM", "x", VIEW, [Summary("C1", 1, "r1", 0.73), Summary("C2", 0, "r2", 0.41)], [], {})
    assert j.decision == 1  # 0.73 - 0.41 + 1.0 > 0
    # a confident contrary team outweighs the direct vote
    j, _ = backend.synthesize("DM", "x", VIEW, [Summary("C1", 0, "r1", 1.5)], [], {})
    assert (j.decision, j.direct) == (0, 1)
    assert "r1" in j.reason


def test_reflection_templates():
    backend = sim({"x": 1})
    ctx = ReflectionContext("decision", "x", VIEW, Judgment(0, "quiet"), 1)
    frag, refl, usages = self_reflect(backend, "DM", ctx, "DM#1")
    assert refl.text.startswith("missed-positive on features {")
    assert frag.origin is Origin.REFLECTED and frag.id == "DM#1"
    assert [u.kind for u in usages] == ["reflect", "embed"]
    merged, _ = backend.reflect("A", ReflectionContext("merge", fragments=("A", "B")))
    assert "A" in merged.text and "B" in merged.text and merged.text.count(".") == 1
    false_alarm, _ = backend.reflect("DM", ReflectionContext("decision", "x", VIEW, Judgment(1), 0))
    assert false_alarm.text.startswith("false-alarm")


def test_reflection_context_validation():
    with pytest.raises(ValueError):
        ReflectionContext("merge")
    with pytest.raises(ValueError):
        ReflectionContext("decision", "x", VIEW)
    with pytest.raises(ValueError):
        ReflectionContext("other", fragments=("a",))


def test_embedding_properties():
    emb = HashingEmbedder(64, seed=0)
    v = emb("reviews reuse identical templates")
    assert np.array_equal(v, emb("reviews reuse identical templates"))
    assert abs(np.linalg.norm(v) - 1.0) < 1e-9
    assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)
    assert cosine(v, emb("Reviews, reuse IDENTICAL templates!")) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        emb("   ")


def test_every_call_is_metered():
    m = UsageMeter()
    backend = SimulatedBackend(m, labels={"x": 1}, tokens_per_call=100)
    backend.judge("A", "x", VIEW, PROFILE, [], "")
    backend.judge("B", "x", VIEW, PROFILE, [], "")
    backend.reflect("A", ReflectionContext("merge", fragments=("t",)))
    totals = m.totals()
    assert totals.grand == 300 and totals.calls == 3
    assert totals.per_kind == {"judge": 200, "reflect": 100}
    assert meter([]).grand == 0


def test_meter_phases():
    m = UsageMeter()
    with m.in_phase("forward"):
        m.emit(TokenUsage(10, 5, "judge", "A"))
    m.emit(TokenUsage(1, 0, "embed", "A", phase="custom"))
    totals = m.totals()
    assert totals.per_phase == {"forward": 15, "custom": 1}
    assert m.phase == "default"
    with pytest.raises(ValueError):
        TokenUsage(-1, 0, "judge", "A")


# -- reply parsing -----------------------------------------------------------


def test_parse_auditor_reply():
    d, r = parse_judgment("User: 1327, Decision: 1, Reason: reviews are excessively repetitive and sentimentally exaggerated")
    assert d == 1 and r == "reviews are excessively repetitive and sentimentally exaggerated"
    assert parse_judgment("Decision: 0, Reason: consistent review lengths") == (0, "consistent review lengths")
    assert parse_judgment("**Decision:** 1\nReason: bursty") == (1, "bursty")
    with pytest.raises(ParseError):
        parse_judgment("I think it is probably fake")


def test_parse_experience_and_weights():
    reply = "New Weights: C1_00=0.9, C1_01=0.2, C1_02=1.7\nNew Experience: Bursty posting with uniform ratings signals coordination."
    assert parse_experience(reply) == "Bursty posting with uniform ratings signals coordination."
    assert parse_weights(reply, ["C1_00", "C1_01", "C1_02", "C9"]) == {"C1_00": 0.9, "C1_01": 0.2}
    assert parse_weights("nothing", ["C1"]) == {}


# -- remote client over a mock transport ------------------------------------


def completion(content, prompt_tokens=40, completion_tokens=7):
    return {
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


def remote(handler, **kwargs):
    return RemoteBackend(
        UsageMeter(), base_url="http://llm.test/v1", model="m", api_key="k", transport=httpx.MockTransport(handler), **kwargs
    )


def test_remote_judge_wire_format():
    seen = []

    def handler(request):
        seen.append(request)
        return httpx.Response(200, json=completion("User: u1, Decision: 1, Reason: repeated templates"))

    backend = remote(handler)
    j, usage = backend.judge("A00", "u1", VIEW, PROFILE, ["past heuristic"], "no prior decisions")
    assert j == Judgment(1, "repeated templates")
    assert usage.total == 47 and usage.kind == "judge"
    req = seen[0]
    assert req.url.path == "/v1/chat/completions"
    assert req.headers["authorization"] == "Bearer k"
    body = json.loads(req.content)
    assert body["model"] == "m" and body["messages"][0]["role"] == "system"
    assert "rating: 5" in body["messages"][1]["content"]


def test_remote_retries_once_on_parse_failure():
    replies = iter(["no idea", "Decision: 0, Reason: benign"])

    def handler(request):
        return httpx.Response(200, json=completion(next(replies), 10, 2))

    backend = remote(handler)
    j, usage = backend.judge("A00", "u1", VIEW, PROFILE, [], "")
    assert j.decision == 0
    assert usage.total == 24 and len(backend.meter.log) == 1


def test_remote_parse_failure_after_retry_carries_raw_reply():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(200, json=completion("maybe?"))

    backend = remote(handler)
    with pytest.raises(BackendError) as info:
        backend.judge("A00", "u1", VIEW, PROFILE, [], "")
    assert info.value.raw == "maybe?" and len(calls) == 2
    assert len(backend.meter.log) == 1


def test_remote_transport_and_http_errors():
    def boom(request):
        raise httpx.ConnectError("refused", request=request)

    with pytest.raises(BackendError) as info:
        remote(boom).judge("A00", "u1", VIEW, PROFILE, [], "")
    assert info.value.meta["agent_id"] == "A00"
    with pytest.raises(BackendError) as info:
        remote(lambda r: httpx.Response(503, text="busy")).judge("A00", "u1", VIEW, PROFILE, [], "")
    assert info.value.meta["status"] == 503


def test_remote_synthesize_and_reflect():
    replies = iter([
        completion("Decision: 0, Reason: all coordinators predict benign"),
        completion("New Weights: C1=0.8, C2=0.1\nNew Experience: Stable ratings rarely indicate fraud."),
    ])
    backend = remote(lambda r: httpx.Response(200, json=next(replies)))
    j, _ = backend.synthesize("DM", "u1", VIEW, [Summary("C1", 0, "calm", 1.0)], [], {"C1": 1.0})
    assert j.decision == 0 and j.direct is None
    ctx = ReflectionContext(
        "decision", "u1", VIEW, j, 1, children=(Summary("C1", 0, "calm", 1.0), Summary("C2", 1, "odd", 0.5))
    )
    refl, _ = backend.reflect("DM", ctx)
    assert refl.text == "Stable ratings rarely indicate fraud."
    assert refl.adjustments == {"C1": 0.8, "C2": 0.1}
    vec, usage = backend.embed("DM", refl.text)
    assert abs(np.linalg.norm(vec) - 1) < 1e-9 and usage.total == 0


def test_remote_from_env(monkeypatch):
    monkeypatch.delenv("PAMAS_API_BASE", raising=False)
    with pytest.raises(BackendError):
        RemoteBackend.from_env()
    monkeypatch.setenv("PAMAS_API_BASE", "http://x.test")
    monkeypatch.setenv("PAMAS_MODEL", "m1")
    backend = RemoteBackend.from_env()
    assert backend.model == "m1" and backend.client.timeout.read == 60


def test_simulated_backend_is_thread_safe():
    from concurrent.futures import ThreadPoolExecutor

    labels = {f"x{i}": i % 2 for i in range(200)}
    backend = sim(labels, seed=1)
    with ThreadPoolExecutor(8) as pool:
        got = list(pool.map(lambda k: backend.decide("A", k), labels))
    assert got == [backend.decide("A", k) for k in labels]
    backend.register([Instance("new", {"a": 1.0}, 1)])
    assert backend.labels["new"] == 1

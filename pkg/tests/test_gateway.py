from __future__ import annotations

import json
import threading

import pytest

from planeval.errors import BackendUnavailable, FormatUnrecoverable, QuotaExceeded, UnknownRole
from planeval.gateway import (
    DecodingConfig,
    FunctionBackend,
    HttpJudge,
    JudgeGateway,
    JudgeRequest,
    QuotaError,
    ScriptedJudge,
    ScriptedRule,
    TokenBucket,
    TransportError,
    cache_key,
    preset_for,
    presets,
)


def request(user="hello judge", seed=0, model="m1"):
    return JudgeRequest(
        system_prompt="system",
        user_prompt=user,
        model_id=model,
        decoding=DecodingConfig(temperature=0.0, top_p=1.0, max_tokens=64, seed=seed),
    )


class CountingBackend:
    def __init__(self, responses):
        self.responses = responses
        self.calls = 0

    def complete(self, req):
        self.calls += 1
        for pattern, response in self.responses:
            if pattern in req.user_prompt:
                return response
        return "default"


# ---------------------------------------------------------------------------
# cache semantics


def test_cache_hit_skips_backend(tmp_path):
    backend = CountingBackend([("hello", "answer")])
    gw = JudgeGateway(backend, cache_dir=tmp_path)
    assert gw.invoke(request()) == "answer"
    assert gw.invoke(request()) == "answer"
    assert backend.calls == 1
    assert gw.stats.cache_hits == 1


def test_seed_participates_in_cache_key():
    assert cache_key(request(seed=1)) != cache_key(request(seed=2))
    backend = CountingBackend([("hello", "answer")])
    gw = JudgeGateway(backend)
    gw.invoke(request(seed=1))
    gw.invoke(request(seed=2))
    assert backend.calls == 2


def test_equal_requests_equal_keys():
    assert cache_key(request()) == cache_key(request())


def test_cache_is_files_with_manifest(tmp_path):
    gw = JudgeGateway(CountingBackend([("hello", "answer")]), cache_dir=tmp_path)
    gw.invoke(request())
    entries = list((tmp_path / "entries").iterdir())
    assert len(entries) == 1
    assert entries[0].read_text(encoding="utf-8") == "answer"
    manifest = (tmp_path / "manifest.jsonl").read_text(encoding="utf-8").strip().splitlines()
    assert json.loads(manifest[0])["key"] == entries[0].name


def test_warm_cache_transparency(tmp_path):
    # results identical with and without a warm cache
    cold = JudgeGateway(CountingBackend([("hello", "answer")]), cache_dir=tmp_path)
    first = cold.invoke(request())
    warm = JudgeGateway(CountingBackend([("hello", "answer")]), cache_dir=tmp_path)
    second = warm.invoke(request())
    assert first == second
    assert warm.stats.backend_calls == 0


# ---------------------------------------------------------------------------
# format retries


def test_format_retry_reprompts_until_valid():
    judge = ScriptedJudge(
        rules=(
            ScriptedRule(pattern=r"format retry", response="valid at last"),
            ScriptedRule(pattern=r"hello", response="garbage"),
        )
    )
    gw = JudgeGateway(judge)
    result = gw.invoke(request(), validator=lambda t: t == "valid at last", max_format_retries=2)
    assert result == "valid at last"
    assert gw.stats.format_retries == 1


def test_format_unrecoverable_after_retries():
    gw = JudgeGateway(ScriptedJudge(rules=(), default_response="never valid"))
    with pytest.raises(FormatUnrecoverable):
        gw.invoke(request(), validator=lambda t: False, max_format_retries=2)
    assert gw.stats.format_retries == 2


# ---------------------------------------------------------------------------
# transport retries and rate limiting


class FlakyBackend:
    def __init__(self, failures, exc=TransportError):
        self.failures = failures
        self.exc = exc
        self.calls = 0

    def complete(self, req):
        self.calls += 1
        if self.calls <= self.failures:
            raise self.exc("boom")
        return "recovered"


def test_transport_backoff_then_success():
    sleeps = []
    gw = JudgeGateway(FlakyBackend(2), sleep=sleeps.append)
    assert gw.invoke(request()) == "recovered"
    assert sleeps == [1.0, 2.0]
    assert gw.stats.transport_retries == 2


def test_backend_unavailable_after_exhaustion():
    gw = JudgeGateway(FlakyBackend(100), max_transport_retries=3, sleep=lambda s: None)
    with pytest.raises(BackendUnavailable):
        gw.invoke(request())


def test_quota_exceeded_signal():
    gw = JudgeGateway(FlakyBackend(100, exc=QuotaError), max_transport_retries=2, sleep=lambda s: None)
    with pytest.raises(QuotaExceeded):
        gw.invoke(request())


def test_token_bucket_blocks_until_refill():
    now = [0.0]
    waits = []

    def clock():
        return now[0]

    def sleep(t):
        waits.append(t)
        now[0] += t

    bucket = TokenBucket(rate=1.0, capacity=1.0, clock=clock, sleep=sleep)
    bucket.acquire()
    bucket.acquire()
    assert waits and waits[0] == pytest.approx(1.0)


def test_concurrency_bound_observed():
    barrier = threading.Barrier(4, timeout=5)
    release = threading.Event()

    def slow(req):
        release.wait(timeout=5)
        return "ok"

    gw = JudgeGateway(FunctionBackend(slow), max_concurrency=2)
    threads = [
        threading.Thread(target=lambda n=n: (barrier.wait(), gw.invoke(request(user=f"u{n}"))))
        for n in range(3)
    ]
    for t in threads:
        t.start()
    barrier.wait()
    release.set()
    for t in threads:
        t.join(timeout=5)
    assert gw.max_in_flight_seen <= 2


# ---------------------------------------------------------------------------
# scripted judge


def test_scripted_first_match_wins():
    judge = ScriptedJudge(
        rules=(
            ScriptedRule(pattern="alpha", response="first"),
            ScriptedRule(pattern="alpha beta", response="second"),
        ),
        default_response="fallback",
    )
    assert judge.complete(request(user="alpha beta")) == "first"
    assert judge.complete(request(user="nothing")) == "fallback"


def test_scripted_judge_from_file(tmp_path):
    spec = {
        "rules": [{"pattern": "ping", "response": "pong"}],
        "default_response": "dunno",
    }
    path = tmp_path / "judge.json"
    path.write_text(json.dumps(spec), encoding="utf-8")
    judge = ScriptedJudge.from_file(path)
    assert judge.complete(request(user="ping")) == "pong"
    assert judge.complete(request(user="other")) == "dunno"


def test_scripted_pipeline_reproducible(tmp_path):
    judge = ScriptedJudge(rules=(ScriptedRule("hello", "stable bytes"),))
    runs = []
    for _ in range(2):
        gw = JudgeGateway(judge, cache_dir=tmp_path / "cache")
        runs.append(gw.invoke(request()))
    assert runs[0] == runs[1] == "stable bytes"


# ---------------------------------------------------------------------------
# presets


def test_evaluator_presets_deterministic():
    table = presets()
    for role in ("metric-eval", "one-shot-judge", "step-evaluator", "plan-optimizer"):
        cfg = table[role]
        assert (cfg.temperature, cfg.top_p, cfg.max_tokens) == (0.0, 1.0, 4096)


def test_generator_presets():
    assert preset_for("plan-generation").temperature == 0.2
    assert preset_for("query-generation").temperature == 0.2
    assert preset_for("one-shot-judge").temperature == 0.0


def test_unknown_role_is_an_error():
    with pytest.raises(UnknownRole):
        preset_for("mystery-role")


def test_decoding_config_invariants():
    with pytest.raises(ValueError):
        DecodingConfig(temperature=-1, top_p=1.0, max_tokens=10, seed=0)
    with pytest.raises(ValueError):
        DecodingConfig(temperature=0, top_p=0.0, max_tokens=10, seed=0)
    with pytest.raises(ValueError):
        DecodingConfig(temperature=0, top_p=1.0, max_tokens=0, seed=0)


def test_request_prompts_must_be_nonempty():
    with pytest.raises(ValueError):
        JudgeRequest(system_prompt="", user_prompt="x", model_id="m",
                     decoding=DecodingConfig(0.0, 1.0, 10, 0))


# ---------------------------------------------------------------------------
# HTTP backend (stubbed session)


class StubResponse:
    def __init__(self, status_code=200, body=None, text=""):
        self.status_code = status_code
        self._body = body or {}
        self.text = text

    def json(self):
        return self._body


class StubSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.posts = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.posts.append({"url": url, "json": json, "headers": headers})
        return self.responses.pop(0)


def test_http_judge_payload_and_extraction():
    session = StubSession([StubResponse(body={"choices": [{"message": {"content": "hi"}}]})])
    judge = HttpJudge(url="http://judge.local/chat", api_key="k", session=session)
    assert judge.complete(request()) == "hi"
    post = session.posts[0]
    assert post["json"]["messages"][0]["role"] == "system"
    assert post["json"]["seed"] == 0
    assert post["headers"]["Authorization"] == "Bearer k"


def test_http_judge_maps_status_codes():
    judge = HttpJudge(url="http://judge.local", session=StubSession([StubResponse(status_code=429)]))
    with pytest.raises(QuotaError):
        judge.complete(request())
    judge = HttpJudge(url="http://judge.local", session=StubSession([StubResponse(status_code=503)]))
    with pytest.raises(TransportError):
        judge.complete(request())

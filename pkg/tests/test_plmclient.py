import json

import pytest

from weaklab.corpus import Instance, TEXT_TASK, RELATION_TASK
from weaklab.plmclient import (
    BackendError,
    ChatMessage,
    CompletionRequest,
    HttpBackend,
    MockBackend,
    MockOracleConfig,
    RecordingBackend,
    ReplayBackend,
    ReplayMissError,
    Transcript,
    TranscriptRecord,
    complete,
    load_transcript,
    mock_oracle_respond,
    request_from_dict,
    request_hash,
    request_to_dict,
    save_transcript,
)
from weaklab.prompting import parse_response


def _request(text="PASSAGE: free stuff", n=1, temperature=0.0):
    return CompletionRequest(
        messages=[ChatMessage("system", "Classify."), ChatMessage("user", text)],
        temperature=temperature, n=n)


class TestRequest:
    def test_validation(self):
        with pytest.raises(ValueError):
            CompletionRequest(messages=[ChatMessage("user", "hi")])
        with pytest.raises(ValueError):
            CompletionRequest(messages=[ChatMessage("system", "")])
        with pytest.raises(ValueError):
            _request(n=0)
        with pytest.raises(ValueError):
            _request(temperature=-1.0)

    def test_dict_round_trip(self):
        req = _request(n=3, temperature=0.7)
        assert request_from_dict(request_to_dict(req)) == req

    def test_hash_stable_and_sensitive(self):
        base = request_hash(_request())
        assert base == request_hash(_request())
        assert base != request_hash(_request(text="PASSAGE: other"))
        assert base != request_hash(_request(n=2))
        assert base != request_hash(_request(temperature=1.0))

    def test_hash_ignores_model_name_and_max_tokens(self):
        a = _request()
        b = _request()
        b.model_name = "other-model"
        b.max_tokens = 9
        assert request_hash(a) == request_hash(b)


def _oracle_config(**overrides):
    defaults = dict(
        gold={0: 1, 1: 0},
        signatures={0: ["great song"], 1: ["free stuff"]},
        classes=["HAM", "SPAM"],
        p_label=1.0, p_keyword=1.0, seed=0)
    defaults.update(overrides)
    return MockOracleConfig(**defaults)


class TestMockOracle:
    def test_deterministic_per_draw(self):
        config = _oracle_config(p_label=0.5, p_keyword=0.5)
        inst = Instance(id=0, text="free stuff here")
        r1 = mock_oracle_respond(config, inst, TEXT_TASK, cot=False, draw_index=2)
        r2 = mock_oracle_respond(config, inst, TEXT_TASK, cot=False, draw_index=2)
        assert r1 == r2

    def test_different_draws_can_differ(self):
        config = _oracle_config(p_label=0.5)
        inst = Instance(id=0, text="free stuff here and more tokens to vary")
        responses = {mock_oracle_respond(config, inst, TEXT_TASK, False, i) for i in range(10)}
        assert len(responses) > 1

    def test_reliable_oracle_emits_gold_label_and_signature(self):
        config = _oracle_config()
        inst = Instance(id=0, text="get free stuff today")
        parsed = parse_response(mock_oracle_respond(config, inst, TEXT_TASK, False),
                                TEXT_TASK, config.classes)
        assert parsed.label == 1
        assert "free stuff" in parsed.keywords

    def test_cot_response_has_reasoning(self):
        config = _oracle_config()
        inst = Instance(id=0, text="free stuff")
        text = mock_oracle_respond(config, inst, TEXT_TASK, cot=True)
        assert text.startswith("REASONING:")

    def test_unknown_instance_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            mock_oracle_respond(_oracle_config(), Instance(id=99, text="x"), TEXT_TASK, False)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            _oracle_config(p_label=1.5)
        with pytest.raises(ValueError):
            _oracle_config(signatures={0: []})


class TestMockBackend:
    def _backend(self, **overrides):
        instances = [Instance(id=0, text="get free stuff today", gold_label=1),
                     Instance(id=1, text="what a great song", gold_label=0)]
        return MockBackend(_oracle_config(**overrides), instances, TEXT_TASK)

    def test_task_request(self):
        backend = self._backend()
        responses = complete(backend, _request("PASSAGE: get free stuff today"))
        assert len(responses) == 1
        assert "LABEL: SPAM" in responses[0]

    def test_n_responses(self):
        backend = self._backend(p_label=0.5)
        responses = complete(backend, _request("PASSAGE: get free stuff today", n=10,
                                               temperature=1.0))
        assert len(responses) == 10

    def test_annotation_request(self):
        backend = self._backend()
        text = "PASSAGE: what a great song\nLABEL: HAM\nThe label above is correct."
        responses = complete(backend, _request(text))
        assert "LABEL: HAM" in responses[0]
        assert "great song" in responses[0]

    def test_unknown_passage(self):
        with pytest.raises(BackendError, match="identify"):
            self._backend().complete(_request("PASSAGE: never seen before"))


class TestTranscript:
    def test_round_trip(self, tmp_path):
        transcript = Transcript()
        req = _request()
        transcript.append(TranscriptRecord(hash=request_hash(req),
                                           request=request_to_dict(req),
                                           responses=["LABEL: SPAM"], backend="mock",
                                           elapsed=0.01))
        path = tmp_path / "t.jsonl"
        save_transcript(transcript, path)
        reloaded = load_transcript(path)
        assert reloaded.by_hash() == transcript.by_hash()
        assert reloaded.records[0].backend == "mock"

    def test_corrupt_line_reports_number(self, tmp_path):
        path = tmp_path / "t.jsonl"
        path.write_text('{"hash": "a", "request": {}, "responses": []}\nnot json\n')
        with pytest.raises(BackendError, match="line 2"):
            load_transcript(path)


class TestReplay:
    def test_replay_hit(self):
        req = _request()
        transcript = Transcript()
        transcript.append(TranscriptRecord(hash=request_hash(req),
                                           request=request_to_dict(req),
                                           responses=["LABEL: HAM\nKEYWORDS: NONE"]))
        backend = ReplayBackend(transcript)
        assert complete(backend, req) == ["LABEL: HAM\nKEYWORDS: NONE"]

    def test_replay_miss(self):
        backend = ReplayBackend(Transcript())
        with pytest.raises(ReplayMissError):
            backend.complete(_request())

    def test_record_then_replay(self):
        instances = [Instance(id=0, text="get free stuff today", gold_label=1)]
        mock = MockBackend(_oracle_config(), instances, TEXT_TASK)
        transcript = Transcript()
        recorder = RecordingBackend(mock, transcript)
        req = _request("PASSAGE: get free stuff today")
        original = complete(recorder, req)
        replayed = complete(ReplayBackend(transcript), req)
        assert replayed == original


class _FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text

    def json(self):
        if self._payload is None:
            raise ValueError("no json")
        return self._payload


class _FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers})
        result = self.responses.pop(0)
        if isinstance(result, Exception):
            raise result
        return result


def _ok(texts):
    return _FakeResponse(200, {"choices": [{"message": {"content": t}} for t in texts]})


class TestHttpBackend:
    def _backend(self, session, **kwargs):
        kwargs.setdefault("backoff", 0.0)
        return HttpBackend("http://example.test/v1", model_name="m", session=session, **kwargs)

    def test_success(self):
        session = _FakeSession([_ok(["LABEL: SPAM"])])
        backend = self._backend(session)
        assert backend.complete(_request()) == ["LABEL: SPAM"]
        assert session.calls[0]["url"] == "http://example.test/v1/chat/completions"
        assert session.calls[0]["json"]["model"] == "m"

    def test_retries_on_retryable_status_then_succeeds(self):
        session = _FakeSession([_FakeResponse(429), _FakeResponse(503), _ok(["ok"])])
        backend = self._backend(session)
        assert backend.complete(_request()) == ["ok"]
        assert len(session.calls) == 3

    def test_retries_exhausted(self):
        session = _FakeSession([_FakeResponse(500)] * 3)
        backend = self._backend(session)
        with pytest.raises(BackendError, match="retries exhausted"):
            backend.complete(_request())

    def test_non_retryable_status_fails_fast(self):
        session = _FakeSession([_FakeResponse(400, text="bad request")])
        backend = self._backend(session)
        with pytest.raises(BackendError, match="status 400"):
            backend.complete(_request())
        assert len(session.calls) == 1

    def test_connection_error_is_retryable(self):
        session = _FakeSession([ConnectionError("boom"), _ok(["ok"])])
        backend = self._backend(session)
        assert backend.complete(_request()) == ["ok"]

    def test_api_key_header_from_environment(self, monkeypatch):
        monkeypatch.setenv("PLM_API_KEY", "secret-token")
        session = _FakeSession([_ok(["ok"])])
        self._backend(session).complete(_request())
        assert session.calls[0]["headers"]["Authorization"] == "Bearer secret-token"

    def test_no_key_no_auth_header(self, monkeypatch):
        monkeypatch.delenv("PLM_API_KEY", raising=False)
        session = _FakeSession([_ok(["ok"])])
        self._backend(session).complete(_request())
        assert "Authorization" not in session.calls[0]["headers"]

    def test_malformed_body(self):
        session = _FakeSession([_FakeResponse(200, {"unexpected": 1})])
        backend = self._backend(session)
        with pytest.raises(BackendError, match="malformed"):
            backend.complete(_request())

    def test_too_few_choices(self):
        session = _FakeSession([_ok(["only one"])])
        backend = self._backend(session)
        with pytest.raises(BackendError, match="expected 2"):
            backend.complete(_request(n=2))


def test_complete_enforces_response_count():
    class Broken:
        def complete(self, request):
            return []

    with pytest.raises(BackendError, match="expected 1"):
        complete(Broken(), _request())


def test_relation_oracle_emits_patterns():
    config = MockOracleConfig(gold={0: 1}, signatures={1: ["married"]},
                              classes=["NONE", "SPOUSE"], p_label=1.0, p_keyword=1.0)
    inst = Instance(id=0, text="alice married bob")
    text = mock_oracle_respond(config, inst, RELATION_TASK, cot=False)
    parsed = parse_response(text, RELATION_TASK, config.classes)
    assert parsed.label == 1
    assert parsed.patterns and "{{E1}}" in parsed.patterns[0]

import json

import httpx
import pytest

from partmotion.llm import (
    DEFAULT_MODEL,
    QUESTION_MARKER,
    FixtureClient,
    HttpChatClient,
    LlmConfigError,
    LlmTransportError,
    load_transcript_records,
    question_of,
    save_transcript_records,
)
from partmotion.semantics import Verdict, build_prompt, extract_with_retry


def chat_reply(text):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("TEST_LLM_KEY", "sk-test")
    return "TEST_LLM_KEY"


def test_missing_key_is_a_config_error(monkeypatch):
    monkeypatch.delenv("NO_SUCH_KEY", raising=False)
    with pytest.raises(LlmConfigError):
        HttpChatClient(api_key_env="NO_SUCH_KEY")


def test_request_shape_and_reply(api_key):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        seen["url"] = str(request.url)
        return chat_reply("left arm: waves")

    client = HttpChatClient("https://llm.test/v1/chat", api_key_env=api_key, transport=httpx.MockTransport(handler))
    assert client.complete("hello") == "left arm: waves"
    assert seen["auth"] == "Bearer sk-test"
    assert seen["url"] == "https://llm.test/v1/chat"
    assert seen["body"] == {"model": DEFAULT_MODEL, "messages": [{"role": "user", "content": "hello"}],
                            "temperature": 0}


@pytest.mark.parametrize("response", [
    httpx.Response(500, text="overloaded"),
    httpx.Response(200, text="not json"),
    httpx.Response(200, json={"choices": []}),
    httpx.Response(200, json={"unexpected": True}),
])
def test_bad_replies_become_transport_errors(api_key, response):
    client = HttpChatClient(api_key_env=api_key, transport=httpx.MockTransport(lambda r: response))
    with pytest.raises(LlmTransportError):
        client.complete("hi")


def test_network_failure_is_a_transport_error(api_key):
    def handler(request):
        raise httpx.ConnectError("refused")

    client = HttpChatClient(api_key_env=api_key, transport=httpx.MockTransport(handler))
    with pytest.raises(LlmTransportError):
        client.complete("hi")


def test_http_client_in_the_retry_protocol(api_key):
    replies = iter([httpx.Response(503), chat_reply("nonsense"), chat_reply("right leg: kicks a ball")])
    client = HttpChatClient(api_key_env=api_key, transport=httpx.MockTransport(lambda r: next(replies)))
    spec, ts = extract_with_retry("a man kicks a ball with his right foot", client)
    assert [t.verdict for t in ts] == [Verdict.TRANSPORT_ERROR, Verdict.FORMAT_REJECTED, Verdict.ACCEPTED]
    assert spec.pairs == (("right leg", "kicks a ball"),)


def test_question_of_takes_the_last_marker():
    assert question_of(build_prompt("a man waves")) == "a man waves"
    assert question_of(f"x {QUESTION_MARKER}a {QUESTION_MARKER}b") == "b"
    with pytest.raises(ValueError):
        question_of("no marker here")


def test_fixture_client_replays_in_attempt_order():
    records = [
        {"sentence": "s", "attempt": 2, "response": "second"},
        {"sentence": "s", "attempt": 1, "response": None},
    ]
    c = FixtureClient(records)
    p = build_prompt("s")
    with pytest.raises(LlmTransportError):
        c.complete(p)
    assert c.complete(p) == "second"
    assert c.complete(p) == "second"       # last response repeats
    with pytest.raises(LlmTransportError):
        c.complete(build_prompt("unknown"))
    assert c.calls == 4


def test_transcript_file_round_trip(tmp_path):
    recs = [{"sentence": "a", "attempt": 1, "response": "none"}, {"sentence": "b", "attempt": 1, "response": None}]
    save_transcript_records(recs, tmp_path / "t.jsonl")
    assert load_transcript_records(tmp_path / "t.jsonl") == recs
    assert FixtureClient.from_file(tmp_path / "t.jsonl").complete(build_prompt("a")) == "none"

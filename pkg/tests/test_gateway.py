"""Scripted and remote gateway backends."""

import logging

import httpx
import pytest

from transittalk.gateway import (
    ChatMessage,
    CompletionParams,
    FinishReason,
    GatewayError,
    GatewayTimeout,
    RateLimited,
    RemoteGateway,
    ScriptEntry,
    ScriptedGateway,
    ScriptExhausted,
    TriggerMismatch,
    parse_transcript,
)

PARAMS = CompletionParams()


def messages(*texts):
    return [ChatMessage.user(t) for t in texts]


class TestScriptedGateway:
    def test_single_entry(self):
        gw = ScriptedGateway(["hello"])
        result = gw.complete(messages("hi"), PARAMS)
        assert result.text == "hello"
        assert result.finish_reason is FinishReason.STOP
        assert result.usage.prompt_tokens == 0

    def test_exhaustion(self):
        gw = ScriptedGateway([])
        with pytest.raises(ScriptExhausted):
            gw.complete(messages("hi"), PARAMS)

    def test_trigger_mismatch(self):
        gw = ScriptedGateway([ScriptEntry("x", trigger="Observation:")])
        with pytest.raises(TriggerMismatch):
            gw.complete(messages("no observation here"), PARAMS)

    def test_trigger_match_uses_last_user_message(self):
        gw = ScriptedGateway([ScriptEntry("x", trigger="Observation: OK")])
        msgs = [
            ChatMessage.system("sys"),
            ChatMessage.user("Observation: OK"),
        ]
        assert gw.complete(msgs, PARAMS).text == "x"

    def test_consumes_in_order(self):
        gw = ScriptedGateway(["one", "two"])
        assert gw.complete(messages("a"), PARAMS).text == "one"
        assert gw.complete(messages("b"), PARAMS).text == "two"
        assert gw.remaining == 0

    def test_determinism(self):
        script = ["alpha", "beta"]
        first = [ScriptedGateway(script).complete(messages("m"), PARAMS).text for _ in range(2)]
        gw = ScriptedGateway(script)
        second = [gw.complete(messages("m"), PARAMS).text, gw.reset() or gw.complete(messages("m"), PARAMS).text]
        assert first == ["alpha", "alpha"]
        assert second == ["alpha", "alpha"]

    def test_empty_messages_rejected(self):
        with pytest.raises(ValueError):
            ScriptedGateway(["x"]).complete([], PARAMS)


class TestTranscriptFormat:
    def test_parse_blocks_and_triggers(self):
        text = (
            "@trigger: first\n"
            "Thought: a\nAction: t\nAction Input: i\n"
            "---\n"
            "plain entry\n"
            "with two lines\n"
            "---\n"
            '{"k": "v"}\n'
        )
        entries = parse_transcript(text)
        assert len(entries) == 3
        assert entries[0].trigger == "first"
        assert entries[0].text.startswith("Thought: a")
        assert entries[1].text == "plain entry\nwith two lines"
        assert entries[2].text == '{"k": "v"}'
        assert entries[2].trigger is None

    def test_interior_blank_lines_preserved(self):
        entries = parse_transcript("para one\n\npara two\n---\nnext\n")
        assert entries[0].text == "para one\n\npara two"


class TestCompletionParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            CompletionParams(temperature=-1)
        with pytest.raises(ValueError):
            CompletionParams(max_tokens=0)
        with pytest.raises(ValueError):
            CompletionParams(stop_sequences=("a", "b", "c", "d", "e"))


def _remote(handler, retries=2):
    transport = httpx.MockTransport(handler)
    client = httpx.Client(transport=transport, base_url="http://llm.test")
    return RemoteGateway(
        "http://llm.test/v1", "test-model", client=client, retries=retries, sleep=lambda s: None
    )


class TestRemoteGateway:
    def test_success(self):
        def handler(request):
            assert request.url.path == "/v1/chat/completions"
            return httpx.Response(
                200,
                json={
                    "choices": [{"message": {"content": "ok"}, "finish_reason": "stop"}],
                    "usage": {"prompt_tokens": 7, "completion_tokens": 3},
                },
            )

        result = _remote(handler).complete(messages("hi"), PARAMS)
        assert result.text == "ok"
        assert result.finish_reason is FinishReason.STOP
        assert result.usage.prompt_tokens == 7

    def test_retries_transient_then_succeeds(self):
        calls = []

        def handler(request):
            calls.append(1)
            if len(calls) < 3:
                return httpx.Response(500)
            return httpx.Response(
                200, json={"choices": [{"message": {"content": "ok"}, "finish_reason": "stop"}]}
            )

        assert _remote(handler).complete(messages("hi"), PARAMS).text == "ok"
        assert len(calls) == 3

    def test_rate_limited_after_retries(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(429)

        with pytest.raises(RateLimited):
            _remote(handler, retries=2).complete(messages("hi"), PARAMS)
        assert len(calls) == 3  # retry bound: at most N+1 attempts

    def test_timeout(self):
        def handler(request):
            raise httpx.ConnectTimeout("slow")

        with pytest.raises(GatewayTimeout):
            _remote(handler).complete(messages("hi"), PARAMS)

    def test_client_error_not_retried(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(400)

        with pytest.raises(GatewayError):
            _remote(handler).complete(messages("hi"), PARAMS)
        assert len(calls) == 1


def test_no_prompt_content_logged_at_info(caplog):
    secret = "SECRET-PROMPT-CONTENT-XYZ"
    gw = ScriptedGateway(["SECRET-RESPONSE-ABC"])
    with caplog.at_level(logging.INFO):
        gw.complete(messages(secret), PARAMS)
    joined = " ".join(r.getMessage() for r in caplog.records)
    assert secret not in joined
    assert "SECRET-RESPONSE-ABC" not in joined

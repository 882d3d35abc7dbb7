from __future__ import annotations

import json

import httpx
import pytest

from erl.envs import BackendError, Context
from erl.policy import (ProtocolError, RemoteClient, RemotePolicy, SamplingParams,
                        build_request, parse_completion)
from erl.trainer import Group, Sample, UpdateBatch, policy_loss


def reply(content="```Up```", logprobs=True, tool_calls=None):
    msg = {"role": "assistant", "content": content}
    if tool_calls:
        msg["tool_calls"] = tool_calls
    choice = {"index": 0, "message": msg}
    if logprobs:
        choice["logprobs"] = {"content": [{"token": "```", "logprob": -0.1},
                                          {"token": "Up", "logprob": -0.5},
                                          {"token": "```", "logprob": 0.0}]}
    return {"choices": [choice]}


def client_for(handler, **kw):
    sleeps = []
    client = RemoteClient("http://test/v1/chat/completions", "m", token="secret",
                          transport=httpx.MockTransport(handler), sleep=sleeps.append, **kw)
    return client, sleeps


def test_request_shape():
    body = build_request("m", [{"role": "user", "content": "hi"}], SamplingParams(0.7, 0.8, 20))
    assert body == {"model": "m", "messages": [{"role": "user", "content": "hi"}],
                    "temperature": 0.7, "top_p": 0.8, "top_k": 20, "max_tokens": 8196,
                    "logprobs": True}


def test_happy_path_sends_messages_and_auth():
    seen = {}

    def handler(request):
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json=reply())

    client, _ = client_for(handler)
    pol = RemotePolicy(client)
    c = pol.generate(Context("system text", "board", memory="mem"))
    assert c.text == "```Up```" and c.tokens == ("```", "Up", "```")
    assert c.logprobs == (-0.1, -0.5, 0.0)
    assert seen["auth"] == "Bearer secret"
    roles = [m["role"] for m in seen["body"]["messages"]]
    assert roles == ["system", "user"]
    assert "mem" in seen["body"]["messages"][0]["content"]


def test_429_backs_off_and_retries():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(429, headers={"Retry-After": "2"})
        return httpx.Response(200, json=reply())

    client, sleeps = client_for(handler, backoff=0.5)
    assert parse_completion(client.complete({"model": "m"})).text == "```Up```"
    # Retry-After raises the first wait; later waits keep doubling
    assert len(calls) == 3 and sleeps == [2.0, 4.0]


def test_gives_up_after_cap():
    client, sleeps = client_for(lambda r: httpx.Response(503), max_retries=2, backoff=1.0)
    with pytest.raises(BackendError) as info:
        client.complete({})
    assert info.value.retryable and sleeps == [1.0, 2.0]


def test_transport_error_is_retryable():
    def handler(request):
        raise httpx.ConnectError("down")

    client, _ = client_for(handler, max_retries=1)
    with pytest.raises(BackendError):
        client.complete({})


def test_malformed_response_is_protocol_error():
    client, _ = client_for(lambda r: httpx.Response(200, json={"nope": 1}))
    with pytest.raises(ProtocolError) as info:
        parse_completion(client.complete({}))
    assert not info.value.retryable


def test_missing_logprobs_degrade_to_reinforce():
    c = parse_completion(reply(logprobs=False))
    assert c.logprobs is None and c.tokens == ()

    class Scorer:
        def score(self, ctx, toks):
            return [-1.0 for _ in toks]

        def grad_log_prob(self, ctx, tok):
            import numpy as np
            return {"k": np.ones(2)}

    s1 = Sample([Context("s", "o")], ["Up"], None, 1.0, advantage=1.0)
    s2 = Sample([Context("s", "o")], ["Up"], None, 0.0, advantage=-1.0)
    result = policy_loss(Scorer(), UpdateBatch([Group("attempt1", "i", [s1, s2])]))
    assert result.loss == pytest.approx(0.0) and result.n_tokens == 2


def test_tool_calls_become_tool_call_text():
    calls = [{"id": "1", "type": "function",
              "function": {"name": "local_search", "arguments": '{"query": "x"}'}}]
    c = parse_completion(reply(content=None, logprobs=False, tool_calls=calls))
    assert c.text == '<tool_call>{"name": "local_search", "arguments": {"query": "x"}}</tool_call>'
    assert c.tool_calls == ({"name": "local_search", "arguments": {"query": "x"}},)


def test_endpoint_from_environment(monkeypatch):
    monkeypatch.setenv("ERL_ENDPOINT", "http://env/v1")
    assert RemoteClient(transport=httpx.MockTransport(lambda r: None)).endpoint == "http://env/v1"
    monkeypatch.delenv("ERL_ENDPOINT")
    with pytest.raises(ValueError):
        RemoteClient()

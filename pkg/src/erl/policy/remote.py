"""Chat-completions client used as a rollout-only policy backend."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from typing import Callable, Optional

import httpx

from ..envs.core import BackendError, Completion, Context
from ..envs.qa import format_tool_call
from .tabular import SamplingParams

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "ERL_ENDPOINT"
TOKEN_ENV = "ERL_API_KEY"


class ProtocolError(BackendError):
    """The server answered, but not in the chat-completions shape."""

    def __init__(self, message: str):
        super().__init__(message, retryable=False)


def build_request(model: str, messages: list[dict], sampling: SamplingParams,
                  logprobs: bool = True, tools: Optional[list] = None) -> dict:
    body = {"model": model, "messages": messages, "temperature": sampling.temperature,
            "top_p": sampling.top_p, "top_k": sampling.top_k,
            "max_tokens": sampling.max_tokens}
    if logprobs:
        body["logprobs"] = True
    if tools:
        body["tools"] = tools
    return body


def parse_completion(response: dict) -> Completion:
    try:
        choice = response["choices"][0]
        message = choice["message"]
    except (KeyError, IndexError, TypeError):
        raise ProtocolError("response has no choices[0].message") from None
    text = message.get("content") or ""
    calls = []
    for call in message.get("tool_calls") or []:
        fn = call.get("function", {})
        args = fn.get("arguments", "{}")
        try:
            args = json.loads(args) if isinstance(args, str) else args
        except json.JSONDecodeError:
            raise ProtocolError("tool call arguments are not JSON") from None
        calls.append({"name": fn.get("name"), "arguments": args})
        text += ("\n" if text else "") + format_tool_call(fn.get("name"), args)
    tokens: tuple = ()
    logprobs = None
    content = (choice.get("logprobs") or {}).get("content")
    if content:
        tokens = tuple(t["token"] for t in content)
        logprobs = tuple(min(float(t["logprob"]), 0.0) for t in content)
    return Completion(text, tokens, logprobs, "remote", tuple(calls))


class RemoteClient:
    """Blocking client with capped retries and a concurrency limit."""

    def __init__(self, endpoint: Optional[str] = None, model: str = "default",
                 token: Optional[str] = None, max_retries: int = 4, backoff: float = 1.0,
                 max_concurrency: int = 8, timeout: float = 120.0,
                 transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        if not self.endpoint:
            raise ValueError(f"no endpoint given and {ENDPOINT_ENV} is unset")
        self.model = model
        token = token or os.environ.get(TOKEN_ENV)
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._http = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def close(self) -> None:
        self._http.close()

    def complete(self, request: dict) -> dict:
        delay = self.backoff
        last = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(delay)
                delay *= 2
            try:
                with self._slots:
                    resp = self._http.post(self.endpoint, json=request)
            except httpx.TransportError as exc:
                last = f"transport error: {exc}"
                logger.warning("request failed (%s), attempt %d", last, attempt + 1)
                continue
            if 200 <= resp.status_code < 300:
                try:
                    return resp.json()
                except ValueError:
                    raise ProtocolError("response body is not JSON") from None
            last = f"HTTP {resp.status_code}"
            retry_after = resp.headers.get("retry-after")
            if retry_after and retry_after.replace(".", "", 1).isdigit():
                delay = max(delay, float(retry_after))
            logger.warning("request failed (%s), attempt %d", last, attempt + 1)
        raise BackendError(f"giving up after {self.max_retries + 1} attempts: {last}")


def remote_complete(endpoint: str, request: dict, **client_kwargs) -> dict:
    client = RemoteClient(endpoint, request.get("model", "default"), **client_kwargs)
    try:
        return client.complete(request)
    finally:
        client.close()


class RemotePolicy:
    """Generates through a chat-completions server; holds no weights."""

    backend = "remote"

    def __init__(self, client: RemoteClient, sampling: Optional[SamplingParams] = None,
                 tools: Optional[list] = None, logprobs: bool = True):
        self.client = client
        self.sampling = sampling or SamplingParams()
        self.tools = tools
        self.want_logprobs = logprobs

    def generate(self, context: Context, sampling: Optional[SamplingParams] = None,
                 rng=None) -> Completion:
        return self.chat(context.messages(), sampling, tools=self.tools)

    def chat(self, messages: list[dict], sampling: Optional[SamplingParams] = None,
             tools: Optional[list] = None) -> Completion:
        req = build_request(self.client.model, messages, sampling or self.sampling,
                            self.want_logprobs, tools)
        return parse_completion(self.client.complete(req))

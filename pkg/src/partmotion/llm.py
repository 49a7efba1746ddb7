"""Language-model clients: an HTTP chat-completion client and a replay fixture."""
from __future__ import annotations

import json
import os
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Protocol

import httpx

DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
DEFAULT_MODEL = "gpt-3.5-turbo"
DEFAULT_KEY_ENV = "OPENAI_API_KEY"
QUESTION_MARKER = "Provide your answer for the following sentence: "


class LlmConfigError(RuntimeError):
    pass


class LlmTransportError(RuntimeError):
    pass


class LlmClient(Protocol):
    def complete(self, prompt: str) -> str: ...


class HttpChatClient:
    """POSTs a single user message in the standard chat-completion shape."""

    def __init__(self, endpoint: str = DEFAULT_ENDPOINT, model: str = DEFAULT_MODEL,
                 api_key_env: str = DEFAULT_KEY_ENV, timeout: float = 30.0,
                 transport: httpx.BaseTransport | None = None):
        key = os.environ.get(api_key_env)
        if not key:
            raise LlmConfigError(f"environment variable {api_key_env} is not set")
        self.endpoint = endpoint
        self.model = model
        self._client = httpx.Client(
            timeout=timeout,
            transport=transport,
            headers={"Authorization": f"Bearer {key}"},
        )

    def request_body(self, prompt: str) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }

    def complete(self, prompt: str) -> str:
        try:
            resp = self._client.post(self.endpoint, json=self.request_body(prompt))
            resp.raise_for_status()
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except (httpx.HTTPError, ValueError, KeyError, IndexError, TypeError) as exc:
            raise LlmTransportError(f"chat completion failed: {exc}") from exc

    def close(self) -> None:
        self._client.close()


def question_of(prompt: str) -> str:
    idx = prompt.rfind(QUESTION_MARKER)
    if idx < 0:
        raise ValueError("prompt has no question sentence")
    return prompt[idx + len(QUESTION_MARKER):]


class FixtureClient:
    """Replays recorded responses per question sentence, in attempt order.

    A ``None`` response simulates a transport failure.
    """

    def __init__(self, records: Iterable[dict]):
        self._responses: dict[str, list[str | None]] = defaultdict(list)
        for rec in sorted(records, key=lambda r: int(r.get("attempt", 1))):
            self._responses[rec["sentence"]].append(rec["response"])
        self._cursor: dict[str, int] = defaultdict(int)
        self.calls = 0

    @classmethod
    def from_file(cls, path) -> "FixtureClient":
        return cls(load_transcript_records(path))

    def complete(self, prompt: str) -> str:
        self.calls += 1
        sentence = question_of(prompt)
        queue = self._responses.get(sentence)
        if not queue:
            raise LlmTransportError(f"no recorded response for {sentence!r}")
        i = self._cursor[sentence]
        self._cursor[sentence] = i + 1
        resp = queue[min(i, len(queue) - 1)]
        if resp is None:
            raise LlmTransportError("recorded transport failure")
        return resp


def load_transcript_records(path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out


def save_transcript_records(records: Iterable[dict], path) -> None:
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))

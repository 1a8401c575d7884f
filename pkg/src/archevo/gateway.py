"""LLM access: an OpenAI-compatible HTTP client and a scripted replay mock.

Every exchange belongs to a named conversation stream and gets a sequence
number within it. The scripted gateway resolves responses purely by
(stream, seq), so replay is exact no matter how calls interleave across
worker threads. Transcript logs round-trip: a recorded transcript can be
loaded back as a script for the same run.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import requests

RESPONSE_MARKERS = ("##response##", "**response**")


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    """Connection-level failure or malformed completion payload."""


class GatewayTimeout(GatewayError):
    pass


class StatusError(GatewayError):
    def __init__(self, status: int, body: str, retry_after: float | None = None):
        super().__init__(f"gateway returned status {status}")
        self.status = status
        self.body = body
        self.retry_after = retry_after


class ScriptExhausted(GatewayError):
    """No scripted response recorded for a (stream, seq) pair."""


class TagParseError(ValueError):
    """Response carries no ##response## / **response** marker."""


@dataclass(frozen=True)
class ChatExchange:
    stream: str
    seq: int
    system: str | None
    user: str
    response: str
    latency_ms: float


class TranscriptWriter:
    """Thread-safe JSONL appender for chat exchanges."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, ex: ChatExchange) -> None:
        line = json.dumps(
            {
                "stream": ex.stream,
                "seq": ex.seq,
                "system": ex.system,
                "user": ex.user,
                "response": ex.response,
                "latency_ms": ex.latency_ms,
            },
            ensure_ascii=False,
        )
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")


class _StreamCounter:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._seqs: dict[str, int] = {}

    def next(self, stream: str) -> int:
        with self._lock:
            seq = self._seqs.get(stream, 0)
            self._seqs[stream] = seq + 1
            return seq


class ScriptedGateway:
    """Replays canned responses keyed by (stream, seq)."""

    def __init__(
        self,
        script: dict[tuple[str, int], str],
        transcript: TranscriptWriter | None = None,
    ):
        self._script = dict(script)
        self._transcript = transcript
        self._counter = _StreamCounter()

    def complete(self, stream: str, system: str | None, user: str) -> str:
        seq = self._counter.next(stream)
        key = (stream, seq)
        if key not in self._script:
            raise ScriptExhausted(f"no scripted response for stream={stream!r} seq={seq}")
        response = self._script[key]
        if self._transcript:
            self._transcript.append(
                ChatExchange(stream, seq, system, user, response, 0.0)
            )
        return response


class HttpGateway:
    """Minimal OpenAI-style chat-completions client.

    One POST per call, no retries here; retry policy belongs to the caller.
    The API key is read from the environment at call time.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "ARCHEVO_API_KEY",
        timeout_s: float = 120.0,
        temperature: float = 1.0,
        transcript: TranscriptWriter | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.temperature = temperature
        self._transcript = transcript
        self._counter = _StreamCounter()

    def complete(self, stream: str, system: str | None, user: str) -> str:
        seq = self._counter.next(stream)
        messages = []
        if system is not None:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": user})
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        t0 = time.monotonic()
        try:
            resp = requests.post(
                f"{self.endpoint}/chat/completions",
                json={
                    "model": self.model,
                    "messages": messages,
                    "temperature": self.temperature,
                },
                headers=headers,
                timeout=self.timeout_s,
            )
        except requests.Timeout as exc:
            raise GatewayTimeout(f"timed out after {self.timeout_s}s") from exc
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        latency_ms = (time.monotonic() - t0) * 1000.0
        if not 200 <= resp.status_code < 300:
            retry_after = None
            raw = resp.headers.get("Retry-After")
            if raw is not None:
                try:
                    retry_after = float(raw)
                except ValueError:
                    retry_after = None
            raise StatusError(resp.status_code, resp.text, retry_after)
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc
        if self._transcript:
            self._transcript.append(
                ChatExchange(stream, seq, system, user, content, latency_ms)
            )
        return content


def load_script(path: str | Path) -> dict[tuple[str, int], str]:
    """Load a script fixture or a recorded transcript as a replay script."""
    script: dict[tuple[str, int], str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = (rec["stream"], int(rec["seq"]))
                script[key] = rec["response"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad script record ({exc})")
    return script


def parse_tag_response(text: str) -> str:
    """Extract the decision payload after the last response marker.

    Both marker spellings are honored because prompts themselves mix them.
    The payload is whatever trails the final marker, stripped and lowercased.
    """
    best = -1
    marker_len = 0
    for marker in RESPONSE_MARKERS:
        pos = text.rfind(marker)
        if pos > best:
            best = pos
            marker_len = len(marker)
    if best < 0:
        raise TagParseError("no ##response## marker in LLM output")
    return text[best + marker_len :].strip().lower()

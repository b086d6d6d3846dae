"""Chat-completion gateway: transports, transcript persistence, and
validation-driven resampling.

Every model response is appended to the transcript store before any caller
sees it, so downstream computation can always be replayed byte-identically
with zero network calls (replay=True).
"""
from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import citations

DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_TRANSPORT_RETRIES = 5


class GatewayError(Exception):
    def __init__(self, message: str, last_output: str | None = None):
        super().__init__(message)
        self.last_output = last_output


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.8
    top_p: float = 1.0
    max_tokens: int = 2048
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")

    def to_record(self) -> dict:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        }


# named sampling profiles: primary response model runs warm (greedy decoding
# tends to break the required citation formatting), utility prompts run cold
PROFILES: dict[str, SamplingParams] = {
    "primary": SamplingParams(temperature=0.8),
    "open_model": SamplingParams(temperature=1.0, top_p=0.9),
    "deterministic": SamplingParams(temperature=0.0),
}


@dataclass
class ChatExchange:
    exchange_id: str
    prompt: str
    params: SamplingParams
    response_text: str
    attempt: int
    endpoint_id: str
    timestamp: float

    def to_record(self) -> dict:
        return {
            "exchange_id": self.exchange_id,
            "prompt": self.prompt,
            "params": self.params.to_record(),
            "response_text": self.response_text,
            "attempt": self.attempt,
            "endpoint_id": self.endpoint_id,
            "timestamp": self.timestamp,
        }


def request_key(prompt: str, params: SamplingParams) -> str:
    digest = hashlib.sha256()
    digest.update(prompt.encode())
    digest.update(json.dumps(params.to_record(), sort_keys=True).encode())
    return digest.hexdigest()


class TranscriptStore:
    """Append-only JSONL store of chat exchanges, keyed by (prompt, params) digest."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._by_key: dict[str, list[dict]] = {}
        if self.path and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._by_key.setdefault(rec["key"], []).append(rec)

    def append(self, key: str, exchange: ChatExchange) -> None:
        rec = {"key": key, **exchange.to_record()}
        with self._lock:
            self._by_key.setdefault(key, []).append(rec)
            if self.path:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def recorded(self, key: str) -> list[dict]:
        return list(self._by_key.get(key, []))


# -- transports ---------------------------------------------------------------


class HttpTransport:
    """OpenAI-style chat completion endpoint over HTTP."""

    def __init__(
        self,
        url: str,
        model: str,
        api_key: str = "",
        timeout: float = 120.0,
        retries: int = DEFAULT_TRANSPORT_RETRIES,
        backoff_base: float = 0.5,
        httpx_transport=None,
    ):
        self.url = url
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.retries = retries
        self.backoff_base = backoff_base
        self._httpx_transport = httpx_transport

    @property
    def endpoint_id(self) -> str:
        return f"{self.url}#{self.model}"

    def send(self, prompt: str, params: SamplingParams) -> str:
        import httpx

        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        }
        if params.seed is not None:
            payload["seed"] = params.seed
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_exc: Exception | None = None
        client_kwargs = {"timeout": self.timeout}
        if self._httpx_transport is not None:
            client_kwargs["transport"] = self._httpx_transport
        for retry in range(self.retries):
            try:
                with httpx.Client(**client_kwargs) as client:
                    resp = client.post(self.url, json=payload, headers=headers)
                if resp.status_code in (401, 403):
                    raise GatewayError(f"authentication failed against {self.url}")
                if resp.status_code == 400 and "context" in resp.text.lower():
                    raise GatewayError(
                        f"context-length rejection; prompt is roughly {len(prompt) // 4} tokens"
                    )
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except GatewayError:
                raise
            except Exception as exc:  # transport-level failure: retry with backoff
                last_exc = exc
                if retry < self.retries - 1 and self.backoff_base > 0:
                    time.sleep(self.backoff_base * 2**retry)
        raise GatewayError(f"endpoint unreachable after {self.retries} retries: {last_exc}")


class ScriptedTransport:
    """Deterministic fake for tests: returns canned responses in order, or via a callable."""

    def __init__(self, responses=None, handler: Callable[[str, SamplingParams], str] | None = None):
        self.responses = list(responses or [])
        self.handler = handler
        self.calls = 0
        self.endpoint_id = "scripted"

    def send(self, prompt: str, params: SamplingParams) -> str:
        self.calls += 1
        if self.handler is not None:
            return self.handler(prompt, params)
        if not self.responses:
            raise GatewayError("scripted transport exhausted")
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


class TransportError(Exception):
    """Scriptable transient transport failure (retried by HttpTransport-style logic)."""


# -- validators ----------------------------------------------------------------

_OPTION_PATTERNS = [
    re.compile(r"final answer[^A-Za-z0-9]{0,20}\(?([A-J])\)?\b", re.IGNORECASE),
    re.compile(r"^\s*\**answer\**\s*[:,]?\s*\(?([A-J])\)?\b", re.IGNORECASE | re.MULTILINE),
    re.compile(r"\(?\b([A-J])\)?\s*[.)]?\s*$"),
]


def _has_option_letter(text: str) -> bool:
    return any(p.search(text.strip()) for p in _OPTION_PATTERNS)


def _parses(fn: Callable[[str], object]) -> Callable[[str], bool]:
    def check(text: str) -> bool:
        try:
            fn(text)
            return True
        except Exception:
            return False

    return check


VALIDATORS: dict[str, Callable[[str], bool]] = {
    "nonempty": lambda text: bool(text.strip()),
    "reference_section_present": lambda text: not citations.parse_reference_section(text)[1][
        "missing_section"
    ],
    "yes_no_token": lambda text: text.strip().strip('".').lower() in ("yes", "no"),
    "option_letter_parseable": _has_option_letter,
    "valid_alignment_structure": _parses(citations.parse_llm_alignment),
    "statement_list": _parses(citations.parse_statement_list),
    "distinctive_token": lambda text: text.strip().strip('".').lower()
    in ("distinctive", "non-distinctive"),
}


# -- gateway -------------------------------------------------------------------


@dataclass
class ChatGateway:
    """Talks to one chat endpoint through a transport, logging every exchange.

    In replay mode no transport calls happen at all: responses come from the
    transcript store in recorded order and a missing recording is an error.
    """

    transport: object | None = None
    store: TranscriptStore = field(default_factory=TranscriptStore)
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    transport_retries: int = DEFAULT_TRANSPORT_RETRIES
    backoff_base: float = 0.0
    replay: bool = False
    network_calls: int = 0
    _replay_cursor: dict[str, int] = field(default_factory=dict)

    def _send_with_retry(self, prompt: str, params: SamplingParams) -> str:
        last_exc: Exception | None = None
        for retry in range(self.transport_retries):
            self.network_calls += 1
            try:
                return self.transport.send(prompt, params)
            except TransportError as exc:
                last_exc = exc
                if self.backoff_base > 0:
                    time.sleep(self.backoff_base * 2**retry)
        raise GatewayError(
            f"transport failed {self.transport_retries} times; last error: {last_exc}"
        )

    def _obtain(self, prompt: str, params: SamplingParams, attempt: int) -> ChatExchange:
        key = request_key(prompt, params)
        if self.replay:
            recorded = self.store.recorded(key)
            cursor = self._replay_cursor.get(key, 0)
            if cursor >= len(recorded):
                raise GatewayError(f"replay miss: no recorded exchange for key {key[:12]}...")
            rec = recorded[cursor]
            self._replay_cursor[key] = cursor + 1
            return ChatExchange(
                exchange_id=rec["exchange_id"],
                prompt=prompt,
                params=params,
                response_text=rec["response_text"],
                attempt=rec["attempt"],
                endpoint_id=rec["endpoint_id"],
                timestamp=rec["timestamp"],
            )
        if self.transport is None:
            raise GatewayError("no transport configured")
        response_text = self._send_with_retry(prompt, params)
        exchange = ChatExchange(
            exchange_id=hashlib.sha256(f"{key}:{attempt}:{response_text}".encode()).hexdigest()[:16],
            prompt=prompt,
            params=params,
            response_text=response_text,
            attempt=attempt,
            endpoint_id=getattr(self.transport, "endpoint_id", "unknown"),
            timestamp=time.time(),
        )
        self.store.append(key, exchange)
        return exchange

    def complete(self, prompt: str, params: SamplingParams) -> ChatExchange:
        if not prompt:
            raise GatewayError("prompt must be non-empty")
        return self._obtain(prompt, params, attempt=1)

    def complete_validated(
        self, prompt: str, params: SamplingParams, validator: str
    ) -> ChatExchange:
        """Resample until the named structural check passes, up to max_attempts."""
        check = VALIDATORS.get(validator)
        if check is None:
            raise GatewayError(f"unknown validator {validator!r}; known: {sorted(VALIDATORS)}")
        last: ChatExchange | None = None
        for attempt in range(1, self.max_attempts + 1):
            last = self._obtain(prompt, params, attempt=attempt)
            if check(last.response_text):
                return last
        raise GatewayError(
            f"validator {validator!r} failed after {self.max_attempts} attempts",
            last_output=last.response_text if last else None,
        )

"""Chat-completion client with per-token logprob extraction.

Speaks the de-facto JSON-over-HTTP chat-completion format (the variant
exposing "logprobs"/"top_logprobs" per generated token), with a scripted
mock backend for deterministic offline runs and an append-only JSONL
response cache keyed by a stable request digest.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import requests

from .confidence import (
    DEFAULT_NO_ALIASES,
    DEFAULT_TOP_K,
    DEFAULT_YES_ALIASES,
    CandidateScore,
    ConfidenceScore,
    MissingPolicy,
    TokenDistribution,
    self_eval_confidence,
    normalized_confidence,
)
from .errors import (
    EndpointUnreachable,
    InvalidInput,
    MalformedResponse,
    NoLabelTokenPresent,
    RateLimited,
    UnmappableLabel,
    UnsupportedReadoutMode,
)

SELF_EVAL_PROMPT = "Is this answer correct? Answer only Yes/No."

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant
    content: str


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[Message, ...]
    model_name: str = "mock"
    max_tokens: int = 1
    temperature: float = 0.0
    top_logprobs: int = DEFAULT_TOP_K

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if self.max_tokens < 1:
            raise InvalidInput(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.top_logprobs < 1:
            raise InvalidInput(f"top_logprobs must be >= 1, got {self.top_logprobs}")


def request_digest(request: CompletionRequest) -> str:
    """Stable hash over everything that affects the response."""
    payload = {
        "model_name": request.model_name,
        "messages": [[m.role, m.content] for m in request.messages],
        "max_tokens": request.max_tokens,
        "temperature": request.temperature,
        "top_logprobs": request.top_logprobs,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionResponse:
    generated_tokens: tuple[str, ...]
    token_distributions: tuple[TokenDistribution, ...]
    finish_reason: str = "stop"

    def __post_init__(self):
        object.__setattr__(self, "generated_tokens", tuple(self.generated_tokens))
        object.__setattr__(self, "token_distributions", tuple(self.token_distributions))

    @property
    def text(self) -> str:
        return "".join(self.generated_tokens)

    def to_json(self) -> dict:
        return {
            "generated_tokens": list(self.generated_tokens),
            "token_distributions": [
                {"position_index": d.position_index, "entries": [[t, lp] for t, lp in d.entries]}
                for d in self.token_distributions
            ],
            "finish_reason": self.finish_reason,
        }

    @classmethod
    def from_json(cls, data: dict) -> "CompletionResponse":
        dists = tuple(
            TokenDistribution(
                entries=tuple((t, lp) for t, lp in d["entries"]),
                position_index=d.get("position_index", i),
            )
            for i, d in enumerate(data["token_distributions"])
        )
        return cls(
            generated_tokens=tuple(data["generated_tokens"]),
            token_distributions=dists,
            finish_reason=data.get("finish_reason", "stop"),
        )


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


def _distribution_from_map(entries: dict[str, float], position: int) -> TokenDistribution:
    # Scripted maps may be arbitrarily ordered; keep them sorted for stable digests.
    ordered = tuple(sorted(entries.items(), key=lambda kv: (-kv[1], kv[0])))
    return TokenDistribution(entries=ordered, position_index=position)


class MockBackend:
    """Scripted backend: entries served by digest match or in order.

    Digest-keyed entries are reusable; order-based entries are consumed
    one per request. Thread-safe.
    """

    def __init__(self, entries: list[dict]):
        self._by_digest: dict[str, CompletionResponse] = {}
        self._ordered: list[CompletionResponse] = []
        self._lock = threading.Lock()
        for entry in entries:
            response = self._parse_entry(entry)
            digest = entry.get("digest")
            if digest:
                self._by_digest[digest] = response
            else:
                self._ordered.append(response)
        self._cursor = 0

    @staticmethod
    def _parse_entry(entry: dict) -> CompletionResponse:
        tokens = entry["tokens"]
        raw_dists = entry.get("distributions")
        if raw_dists is None:
            # Tokens without scripted distributions get a certain (logprob 0) dist.
            raw_dists = [{tok: 0.0} for tok in tokens]
        dists = tuple(
            _distribution_from_map(d, i) for i, d in enumerate(raw_dists)
        )
        return CompletionResponse(generated_tokens=tuple(tokens), token_distributions=dists)

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "MockBackend":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entries.append(json.loads(line))
        return cls(entries)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        digest = request_digest(request)
        with self._lock:
            if digest in self._by_digest:
                return self._by_digest[digest]
            if self._cursor >= len(self._ordered):
                raise MalformedResponse(
                    f"mock script exhausted after {self._cursor} in-order responses"
                )
            response = self._ordered[self._cursor]
            self._cursor += 1
            return response


class HTTPBackend:
    """Adapter to a chat-completion endpoint exposing top_logprobs."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        max_retries: int = 3,
        backoff_start_s: float = 0.5,
        timeout_s: float = 120.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.max_retries = max_retries
        self.backoff_start_s = backoff_start_s
        self.timeout_s = timeout_s
        self._session = requests.Session()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        payload = {
            "model": request.model_name,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "logprobs": True,
            "top_logprobs": request.top_logprobs,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        delay = self.backoff_start_s
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(delay)
                delay *= 2
            try:
                resp = self._session.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout_s,
                )
            except requests.RequestException as exc:
                last_error = EndpointUnreachable(str(exc))
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = RateLimited(f"HTTP {resp.status_code}: {resp.text[:200]}")
                continue
            if resp.status_code != 200:
                raise EndpointUnreachable(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return self._parse(resp.json())
        raise last_error if last_error is not None else EndpointUnreachable("no attempts made")

    @staticmethod
    def _parse(body: dict) -> CompletionResponse:
        try:
            choice = body["choices"][0]
            content = choice["logprobs"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"response missing logprob fields: {exc}") from exc
        if content is None:
            raise MalformedResponse("endpoint returned null logprobs")
        tokens: list[str] = []
        dists: list[TokenDistribution] = []
        for position, item in enumerate(content):
            try:
                tokens.append(item["token"])
                top = item["top_logprobs"]
                entries = tuple((alt["token"], min(alt["logprob"], 0.0)) for alt in top)
            except (KeyError, TypeError) as exc:
                raise MalformedResponse(f"malformed logprob entry at position {position}") from exc
            dists.append(
                TokenDistribution(entries=entries, position_index=position, max_entries=max(len(entries), DEFAULT_TOP_K))
            )
        return CompletionResponse(
            generated_tokens=tuple(tokens),
            token_distributions=tuple(dists),
            finish_reason=choice.get("finish_reason", "stop"),
        )


class ResponseCache:
    """Append-only JSONL cache; concurrent readers, single-writer appends."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._entries: dict[str, CompletionResponse] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    self._entries[record["request_digest"]] = CompletionResponse.from_json(
                        record["response"]
                    )

    def get(self, digest: str) -> CompletionResponse | None:
        return self._entries.get(digest)

    def put(self, digest: str, response: CompletionResponse) -> None:
        with self._lock:
            if digest in self._entries:
                return
            self._entries[digest] = response
            record = {
                "request_digest": digest,
                "response": response.to_json(),
                "created_at": time.time(),
            }
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class ClassifyResult:
    label: str
    confidence: ConfidenceScore
    raw_probability: float  # unnormalized summed alias probability of the chosen label


@dataclass(frozen=True)
class SelfEvalResult:
    confidence: ConfidenceScore | None
    raw_yes_probability: float


@dataclass(frozen=True)
class GenerationParams:
    max_tokens: int = 256
    temperature: float = 0.0


class ModelClient:
    """High-level classification / self-evaluation protocol over a backend."""

    def __init__(
        self,
        backend: Backend,
        model_name: str = "mock",
        cache: ResponseCache | None = None,
        yes_aliases: frozenset[str] = DEFAULT_YES_ALIASES,
        no_aliases: frozenset[str] = DEFAULT_NO_ALIASES,
        missing_policy: MissingPolicy = MissingPolicy.NEUTRAL,
        top_logprobs: int = DEFAULT_TOP_K,
        readout_mode: str = "first_token",
    ):
        if readout_mode != "first_token":
            raise UnsupportedReadoutMode(
                f"readout mode {readout_mode!r} requires forced-continuation endpoint support"
            )
        self.backend = backend
        self.model_name = model_name
        self.cache = cache
        self.yes_aliases = frozenset(yes_aliases)
        self.no_aliases = frozenset(no_aliases)
        self.missing_policy = missing_policy
        self.top_logprobs = top_logprobs

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        digest = request_digest(request)
        if self.cache is not None:
            hit = self.cache.get(digest)
            if hit is not None:
                return hit
        response = self.backend.complete(request)
        if len(response.token_distributions) != len(response.generated_tokens):
            raise MalformedResponse(
                f"{len(response.generated_tokens)} tokens but "
                f"{len(response.token_distributions)} distributions"
            )
        if self.cache is not None:
            self.cache.put(digest, response)
        return response

    def _single_token_distribution(self, messages: list[Message]) -> TokenDistribution:
        request = CompletionRequest(
            messages=tuple(messages),
            model_name=self.model_name,
            max_tokens=1,
            temperature=0.0,
            top_logprobs=self.top_logprobs,
        )
        response = self.complete(request)
        if not response.token_distributions:
            raise MalformedResponse("no token distribution at first answer position")
        return response.token_distributions[0]

    def classify(
        self, input: str, label_set: list[tuple[str, frozenset[str] | set[str]]]
    ) -> ClassifyResult:
        """Single-token readout: per-label summed alias probability, normalized.

        Labels whose aliases are all absent from the top-K score probability 0.
        Argmax ties break to the alphabetically first label.
        """
        for label, aliases in label_set:
            if not aliases:
                raise UnmappableLabel(f"label {label!r} has no single-token alias")

        dist = self._single_token_distribution([Message("user", input)])

        probs: dict[str, float] = {}
        for label, aliases in label_set:
            probs[label] = math.fsum(dist.probability(tok) for tok in aliases)
        if all(p == 0.0 for p in probs.values()):
            raise NoLabelTokenPresent(
                f"no alias of any label in {sorted(probs)} present in top-{self.top_logprobs}"
            )

        chosen = min(probs, key=lambda lab: (-probs[lab], lab))
        candidates = [
            CandidateScore(label, math.log(p) if p > 0 else _NEG_INF)
            for label, p in probs.items()
        ]
        confidence = normalized_confidence(candidates, chosen)
        return ClassifyResult(label=chosen, confidence=confidence, raw_probability=probs[chosen])

    def _self_eval_messages(
        self, question: str, answer: str, context: str | None
    ) -> list[Message]:
        user_content = f"{context}\n\n{question}" if context else question
        return [
            Message("user", user_content),
            Message("assistant", answer),
            Message("user", SELF_EVAL_PROMPT),
        ]

    def self_evaluate_with_raw(
        self, question: str, answer: str, context: str | None = None
    ) -> SelfEvalResult:
        dist = self._single_token_distribution(
            self._self_eval_messages(question, answer, context)
        )
        confidence = self_eval_confidence(
            dist, self.yes_aliases, self.no_aliases, self.missing_policy
        )
        raw_yes = math.fsum(dist.probability(tok) for tok in self.yes_aliases)
        return SelfEvalResult(confidence=confidence, raw_yes_probability=raw_yes)

    def self_evaluate(
        self, question: str, answer: str, context: str | None = None
    ) -> ConfidenceScore | None:
        return self.self_evaluate_with_raw(question, answer, context).confidence

    def generate_answer(
        self,
        question: str,
        context: str | None = None,
        params: GenerationParams = GenerationParams(),
    ) -> tuple[str, tuple[str, ...]]:
        """Free-form answer pass; deterministic at the default temperature 0."""
        if not question.strip():
            raise InvalidInput("question is empty")
        user_content = f"{context}\n\n{question}" if context else question
        request = CompletionRequest(
            messages=(Message("user", user_content),),
            model_name=self.model_name,
            max_tokens=params.max_tokens,
            temperature=params.temperature,
            top_logprobs=self.top_logprobs,
        )
        response = self.complete(request)
        return response.text, response.generated_tokens

"""Confidence-gated retrieval controller and threshold sweeps.

Pass 1 answers without context and self-evaluates; if that confidence
falls below the threshold, a second pass answers with retrieved context
and the higher-confidence answer wins. Both inequalities are strict:
a tie keeps the first answer, and a first-pass confidence equal to the
threshold does not retrieve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import requests

from .client import ModelClient
from .errors import EndpointUnreachable, NoNumberFound, RetrievalMiss
from .harness import DatasetExample, match_answer
from .metrics import retrieval_efficiency


def _matches(prediction: str, gold, matcher: str) -> bool:
    try:
        return match_answer(prediction, gold, matcher)
    except NoNumberFound:
        return False


class StaticRetriever:
    """Serves pre-associated contexts by example id."""

    def __init__(self, contexts: dict[str, str]):
        self._contexts = dict(contexts)

    def retrieve(self, example: DatasetExample) -> str:
        try:
            return self._contexts[example.id]
        except KeyError:
            raise RetrievalMiss(f"no static context for example {example.id!r}") from None

    @classmethod
    def from_examples(cls, examples: list[DatasetExample]) -> "StaticRetriever":
        return cls({ex.id: ex.context for ex in examples if ex.context is not None})


class HTTPRetriever:
    """Thin client for a {"query", "top_k"} -> {"passages": [{"text"}]} endpoint."""

    def __init__(self, url: str, top_k: int = 5, timeout_s: float = 30.0):
        self.url = url
        self.top_k = top_k
        self.timeout_s = timeout_s

    def retrieve(self, example: DatasetExample) -> str:
        try:
            resp = requests.post(
                self.url,
                json={"query": example.input, "top_k": self.top_k},
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            passages = resp.json()["passages"]
        except (requests.RequestException, KeyError, json.JSONDecodeError) as exc:
            raise EndpointUnreachable(f"retriever failed: {exc}") from exc
        return "\n\n".join(p["text"] for p in passages)


@dataclass(frozen=True)
class AdaptiveOutcome:
    id: str
    first_answer: str
    first_conf: float
    retrieved: bool
    second_answer: str | None
    second_conf: float | None
    final_answer: str
    final_conf: float
    flags: frozenset[str] = field(default_factory=frozenset)


@dataclass(frozen=True)
class SweepRow:
    tau: float
    retrieval_rate_pct: float
    accuracy_pct: float
    gain_pp: float
    efficiency: float | None


def _first_pass(example: DatasetExample, client: ModelClient) -> tuple[str, float, set[str]]:
    answer, _ = client.generate_answer(example.input)
    se = client.self_evaluate_with_raw(example.input, answer)
    flags: set[str] = set()
    if se.confidence is None:
        conf = 0.5
        flags.add("self_eval_skipped")
    else:
        conf = se.confidence.value
        flags |= {f.value for f in se.confidence.flags}
    return answer, conf, flags


def _second_pass(
    example: DatasetExample, client: ModelClient, retriever
) -> tuple[str | None, float | None, set[str]]:
    flags: set[str] = set()
    try:
        context = retriever.retrieve(example)
    except RetrievalMiss:
        flags.add("retrieval_miss")
        return None, None, flags
    answer, _ = client.generate_answer(example.input, context=context)
    se = client.self_evaluate_with_raw(example.input, answer, context=context)
    conf = 0.5 if se.confidence is None else se.confidence.value
    return answer, conf, flags


def answer_adaptive(
    example: DatasetExample, tau: float, client: ModelClient, retriever
) -> AdaptiveOutcome:
    first_answer, first_conf, flags = _first_pass(example, client)
    if first_conf < tau:
        second_answer, second_conf, extra = _second_pass(example, client, retriever)
        flags |= extra
        if second_answer is not None and second_conf > first_conf:
            final_answer, final_conf = second_answer, second_conf
        else:
            final_answer, final_conf = first_answer, first_conf
        return AdaptiveOutcome(
            id=example.id,
            first_answer=first_answer,
            first_conf=first_conf,
            retrieved=True,
            second_answer=second_answer,
            second_conf=second_conf,
            final_answer=final_answer,
            final_conf=final_conf,
            flags=frozenset(flags),
        )
    return AdaptiveOutcome(
        id=example.id,
        first_answer=first_answer,
        first_conf=first_conf,
        retrieved=False,
        second_answer=None,
        second_conf=None,
        final_answer=first_answer,
        final_conf=first_conf,
        flags=frozenset(flags),
    )


def sweep(
    examples: list[DatasetExample],
    taus: list[float],
    client: ModelClient,
    retriever,
    matcher: str,
) -> list[SweepRow]:
    """One row per threshold. First-pass results are computed once and shared
    across thresholds; second passes run at most once per example."""
    if not taus:
        raise ValueError("tau list is empty")
    if not examples:
        raise ValueError("example list is empty")

    first = {ex.id: _first_pass(ex, client) for ex in examples}
    max_tau = max(taus)
    second: dict[str, tuple[str | None, float | None, set[str]]] = {}
    for ex in examples:
        if first[ex.id][1] < max_tau:
            second[ex.id] = _second_pass(ex, client, retriever)

    n = len(examples)
    baseline_correct = sum(
        1 for ex in examples if _matches(first[ex.id][0], ex.gold, matcher)
    )
    baseline_acc_pct = 100.0 * baseline_correct / n

    rows: list[SweepRow] = []
    for tau in taus:
        retrieved = 0
        correct = 0
        for ex in examples:
            first_answer, first_conf, _ = first[ex.id]
            final_answer = first_answer
            if first_conf < tau:
                retrieved += 1
                second_answer, second_conf, _ = second[ex.id]
                if second_answer is not None and second_conf > first_conf:
                    final_answer = second_answer
            if _matches(final_answer, ex.gold, matcher):
                correct += 1
        rate_pct = 100.0 * retrieved / n
        acc_pct = 100.0 * correct / n
        gain_pp = acc_pct - baseline_acc_pct
        eff = retrieval_efficiency(gain_pp, rate_pct) if rate_pct > 0 else None
        rows.append(
            SweepRow(
                tau=tau,
                retrieval_rate_pct=rate_pct,
                accuracy_pct=acc_pct,
                gain_pp=gain_pp,
                efficiency=eff,
            )
        )
    return rows

"""Dataset ingestion, answer matching, and end-to-end evaluation runs.

Datasets are JSONL files with one {"id", "input", "choices"?, "gold",
"context"?} object per line. Evaluation produces EvalRecords: classification
tasks go through the single-token label readout; generation tasks through
answer generation followed by Yes/No self-evaluation.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import metrics
from .client import ModelClient
from .confidence import Flag, Method
from .errors import ConfcalError, NoNumberFound, SchemaViolation
from .metrics import CalibrationReport, EvalRecord

# ~4 chars/token is close enough for a tail-cut context budget
CONTEXT_TOKEN_BUDGET = 2000
MAX_CONTEXT_DOCS = 5
_CHARS_PER_TOKEN = 4

_NUMBER_RE = re.compile(r"-?\d[\d,]*(?:\.\d+)?")
_PUNCT_STRIP = " \t\n\r.,;:!?\"'()[]{}"


@dataclass(frozen=True)
class LabelSpec:
    label: str
    aliases: frozenset[str]


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    kind: str  # classification | generation
    matcher: str  # exact | numeric | substring
    prompt_template: str = "{input}"
    label_set: tuple[LabelSpec, ...] = ()
    context_field: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "label_set", tuple(self.label_set))
        if self.kind not in ("classification", "generation"):
            raise SchemaViolation(f"unknown task kind {self.kind!r}")
        if self.matcher not in ("exact", "numeric", "substring"):
            raise SchemaViolation(f"unknown matcher {self.matcher!r}")
        if self.kind == "classification" and not self.label_set:
            raise SchemaViolation("classification task needs a non-empty label_set")
        if self.kind == "generation" and self.matcher == "exact":
            raise SchemaViolation("generation tasks use numeric or substring matching")

    @classmethod
    def from_json(cls, data: dict) -> "TaskSpec":
        labels = tuple(
            LabelSpec(label=item["label"], aliases=frozenset(item["aliases"]))
            for item in data.get("label_set", [])
        )
        return cls(
            task_id=data["task_id"],
            kind=data["kind"],
            matcher=data["matcher"],
            prompt_template=data.get("prompt_template", "{input}"),
            label_set=labels,
            context_field=data.get("context_field"),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "TaskSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class DatasetExample:
    id: str
    input: str
    gold: str | list[str]
    choices: tuple[str, ...] | None = None
    context: str | None = None


def truncate_context(context: str, token_budget: int = CONTEXT_TOKEN_BUDGET) -> str:
    """Tail-cut one document to the configured token budget."""
    limit = token_budget * _CHARS_PER_TOKEN
    return context[:limit]


def load_dataset(path: str | Path, task: TaskSpec) -> list[DatasetExample]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    examples: list[DatasetExample] = []
    seen_ids: set[str] = set()
    errors: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(f"line {lineno}: invalid JSON ({exc})")
                continue
            missing = [key for key in ("id", "input", "gold") if key not in data]
            if missing:
                errors.append(f"line {lineno}: missing {missing}")
                continue
            gold = data["gold"]
            if gold in ("", [], None):
                errors.append(f"line {lineno}: empty gold")
                continue
            example_id = str(data["id"])
            if example_id in seen_ids:
                errors.append(f"line {lineno}: duplicate id {example_id!r}")
                continue
            seen_ids.add(example_id)
            context = data.get("context")
            if context is not None:
                context = truncate_context(context)
            examples.append(
                DatasetExample(
                    id=example_id,
                    input=data["input"],
                    gold=gold,
                    choices=tuple(data["choices"]) if data.get("choices") else None,
                    context=context,
                )
            )
    if errors:
        raise SchemaViolation(f"{path}: {len(errors)} bad line(s); first: {errors[0]}")
    return examples


def _normalize(text: str) -> str:
    return re.sub(r"\s+", " ", text.strip(_PUNCT_STRIP).lower())


def extract_last_number(text: str) -> float:
    matches = _NUMBER_RE.findall(text)
    if not matches:
        raise NoNumberFound(f"no numeric literal in {text[:80]!r}")
    return float(matches[-1].replace(",", ""))


def match_answer(prediction: str, gold: str | list[str], matcher: str) -> bool:
    """exact: normalized equality; numeric: last number within 1e-9 relative;
    substring: any normalized reference contained in the normalized prediction."""
    golds = gold if isinstance(gold, list) else [gold]
    if matcher == "exact":
        pred = _normalize(prediction)
        return any(pred == _normalize(g) for g in golds)
    if matcher == "numeric":
        value = extract_last_number(prediction)
        for g in golds:
            target = float(str(g).replace(",", ""))
            if value == target:
                return True
            if target != 0 and abs(value - target) <= 1e-9 * abs(target):
                return True
        return False
    if matcher == "substring":
        pred = _normalize(prediction)
        return any(_normalize(str(g)) in pred for g in golds)
    raise SchemaViolation(f"unknown matcher {matcher!r}")


@dataclass
class EvalRunResult:
    records: list[EvalRecord]
    raw_records: list[EvalRecord] = field(default_factory=list)


def _neutral_confidence(flags: set[str]) -> tuple[float, set[str]]:
    flags = set(flags)
    flags.add(Flag.FALLBACK_NEUTRAL.value)
    flags.add(Flag.ANCHOR_MISSING_YES.value)
    flags.add(Flag.ANCHOR_MISSING_NO.value)
    return 0.5, flags


def _eval_one(
    task: TaskSpec, example: DatasetExample, client: ModelClient, want_raw: bool
) -> tuple[EvalRecord, EvalRecord | None]:
    flags: set[str] = set()
    raw_value: float | None = None
    try:
        if task.kind == "classification":
            prompt = task.prompt_template.format(
                input=example.input,
                choices="\n".join(example.choices or ()),
                context=example.context or "",
            )
            result = client.classify(prompt, [(l.label, l.aliases) for l in task.label_set])
            prediction = result.label
            confidence = result.confidence.value
            method = result.confidence.method.value
            flags |= {f.value for f in result.confidence.flags}
            raw_value = result.raw_probability
        else:
            prompt = task.prompt_template.format(
                input=example.input, choices="", context=""
            )
            answer, _ = client.generate_answer(prompt, context=example.context)
            prediction = answer
            se = client.self_evaluate_with_raw(prompt, answer, context=example.context)
            raw_value = se.raw_yes_probability
            if se.confidence is None:
                confidence, flags = _neutral_confidence(flags)
                flags.add("self_eval_skipped")
                method = Method.SELF_EVAL.value
            else:
                confidence = se.confidence.value
                method = se.confidence.method.value
                flags |= {f.value for f in se.confidence.flags}
    except ConfcalError as exc:
        prediction = ""
        method = Method.SELF_EVAL.value if task.kind == "generation" else Method.CLASSIFICATION_NORMALIZED.value
        confidence, flags = _neutral_confidence(flags)
        flags.add(f"error:{type(exc).__name__}")
        raw_value = 0.0

    try:
        correct = match_answer(prediction, example.gold, task.matcher)
    except NoNumberFound:
        correct = False
        flags.add("no_number_found")

    record = EvalRecord(
        id=example.id,
        task_id=task.task_id,
        prediction=prediction,
        gold=example.gold,
        correct=correct,
        confidence=confidence,
        method=method,
        flags=frozenset(flags),
    )
    raw_record = None
    if want_raw:
        raw_record = EvalRecord(
            id=example.id,
            task_id=task.task_id,
            prediction=prediction,
            gold=example.gold,
            correct=correct,
            confidence=min(max(raw_value or 0.0, 0.0), 1.0),
            method=Method.RAW.value,
            flags=frozenset(flags),
        )
    return record, raw_record


def run_eval(
    task: TaskSpec,
    examples: list[DatasetExample],
    client: ModelClient,
    confidence_mode: str = "normalized",
    concurrency: int = 1,
) -> EvalRunResult:
    """Evaluate every example; per-example failures become flagged records.

    confidence_mode "both" pairs each record with a raw-confidence twin on
    the same ids (unnormalized chosen-label probability for classification,
    raw P(Yes) for self-evaluation).
    """
    if confidence_mode not in ("normalized", "raw", "both"):
        raise SchemaViolation(f"unknown confidence mode {confidence_mode!r}")
    want_raw = confidence_mode in ("raw", "both")

    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            pairs = list(pool.map(lambda ex: _eval_one(task, ex, client, want_raw), examples))
    else:
        pairs = [_eval_one(task, ex, client, want_raw) for ex in examples]

    records = sorted((rec for rec, _ in pairs), key=lambda r: r.id)
    raw_records = sorted((raw for _, raw in pairs if raw is not None), key=lambda r: r.id)
    if confidence_mode == "raw":
        return EvalRunResult(records=raw_records, raw_records=[])
    return EvalRunResult(records=records, raw_records=raw_records)


def verify_records(task: TaskSpec, records: list[EvalRecord]) -> bool:
    """Re-check every record's correct flag against match_answer."""
    for rec in records:
        try:
            expected = match_answer(rec.prediction, rec.gold, task.matcher)
        except NoNumberFound:
            expected = False
        if rec.correct != expected:
            return False
    return True


def build_report(records: list[EvalRecord], n_bins: int = metrics.DEFAULT_N_BINS) -> CalibrationReport:
    return metrics.build_report(records, n_bins=n_bins)

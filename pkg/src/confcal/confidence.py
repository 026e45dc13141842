"""Pure confidence arithmetic over truncated token distributions.

All probability products are carried as sums of log-probabilities and
normalized with a stable log-sum-exp, so candidate sets whose linear-space
probabilities underflow still produce correct ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    AliasOverlap,
    AnchorTokensAbsent,
    DuplicateCandidate,
    EmptySequence,
    InvalidLogProb,
    UnknownCandidate,
)

DEFAULT_TOP_K = 20

# Tokenizers differ on casing and leading spaces; these cover the common
# single-token variants and are configurable at every call site.
DEFAULT_YES_ALIASES = frozenset({"Yes", " Yes", "yes", " yes"})
DEFAULT_NO_ALIASES = frozenset({"No", " No", "no", " no"})


class Method(str, Enum):
    CLASSIFICATION_NORMALIZED = "classification_normalized"
    SELF_EVAL = "self_eval"
    RAW = "raw"


class Flag(str, Enum):
    ANCHOR_MISSING_YES = "anchor_missing_yes"
    ANCHOR_MISSING_NO = "anchor_missing_no"
    FALLBACK_NEUTRAL = "fallback_neutral"


class MissingPolicy(str, Enum):
    ERROR = "error"
    NEUTRAL = "neutral"
    SKIP = "skip"


@dataclass(frozen=True)
class TokenDistribution:
    """Truncated top-K map from token to log-probability at one position."""

    entries: tuple[tuple[str, float], ...]
    position_index: int = 0
    max_entries: int = DEFAULT_TOP_K

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.position_index < 0:
            raise InvalidLogProb(f"position_index must be >= 0, got {self.position_index}")
        if len(self.entries) > self.max_entries:
            raise InvalidLogProb(
                f"distribution has {len(self.entries)} entries, truncation limit is {self.max_entries}"
            )
        seen = set()
        for token, logprob in self.entries:
            if logprob > 0:
                raise InvalidLogProb(f"logprob for token {token!r} is positive: {logprob}")
            if token in seen:
                raise DuplicateCandidate(f"token {token!r} appears twice in one distribution")
            seen.add(token)

    def logprob(self, token: str) -> float | None:
        for tok, lp in self.entries:
            if tok == token:
                return lp
        return None

    def probability(self, token: str) -> float:
        """Linear probability of ``token``; 0 when absent from the top-K."""
        lp = self.logprob(token)
        return math.exp(lp) if lp is not None else 0.0


@dataclass(frozen=True)
class CandidateScore:
    """One candidate output and the log of its sequence probability."""

    candidate_id: str
    sequence_logprob: float

    def __post_init__(self):
        if self.sequence_logprob > 0:
            raise InvalidLogProb(
                f"sequence_logprob for {self.candidate_id!r} is positive: {self.sequence_logprob}"
            )


@dataclass(frozen=True)
class ConfidenceScore:
    value: float
    method: Method
    flags: frozenset[Flag] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "flags", frozenset(self.flags))
        if not 0.0 <= self.value <= 1.0:
            raise InvalidLogProb(f"confidence value out of [0,1]: {self.value}")
        if Flag.FALLBACK_NEUTRAL in self.flags and not (
            Flag.ANCHOR_MISSING_YES in self.flags and Flag.ANCHOR_MISSING_NO in self.flags
        ):
            raise AnchorTokensAbsent(
                "fallback_neutral flag requires both anchor_missing flags"
            )


def sequence_logprob(token_logprobs: list[float]) -> float:
    """Log of the product of token probabilities (sum of logs)."""
    if not token_logprobs:
        raise EmptySequence("token logprob list is empty")
    for lp in token_logprobs:
        if lp > 0:
            raise InvalidLogProb(f"token logprob is positive: {lp}")
    return math.fsum(token_logprobs)


def _logsumexp(values: list[float]) -> float:
    m = max(values)
    if math.isinf(m) and m < 0:
        return m
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def normalized_confidence(
    candidates: list[CandidateScore], selected: str
) -> ConfidenceScore:
    """Selected candidate's probability renormalized over the candidate set.

    Computed as exp(lp_selected - logsumexp(all lps)); summing the result
    over every candidate as ``selected`` gives exactly 1.
    """
    if not candidates:
        raise EmptySequence("candidate list is empty")
    seen = set()
    for cand in candidates:
        if cand.candidate_id in seen:
            raise DuplicateCandidate(f"candidate id {cand.candidate_id!r} repeated")
        seen.add(cand.candidate_id)
    if selected not in seen:
        raise UnknownCandidate(f"selected candidate {selected!r} not in candidate set")

    logprobs = [c.sequence_logprob for c in candidates]
    total = _logsumexp(logprobs)
    selected_lp = next(c.sequence_logprob for c in candidates if c.candidate_id == selected)
    value = math.exp(selected_lp - total)
    return ConfidenceScore(value=min(value, 1.0), method=Method.CLASSIFICATION_NORMALIZED)


def self_eval_confidence(
    dist: TokenDistribution,
    yes_aliases: frozenset[str] | set[str] = DEFAULT_YES_ALIASES,
    no_aliases: frozenset[str] | set[str] = DEFAULT_NO_ALIASES,
    missing_policy: MissingPolicy = MissingPolicy.NEUTRAL,
) -> ConfidenceScore | None:
    """Yes/No anchor-token confidence: c_yes / (c_yes + c_no).

    Tokens absent from the truncated distribution contribute probability 0.
    When both alias sets are entirely absent the result is policy-defined:
    raise, return 0.5 with a fallback flag, or return None (skip).
    """
    if not yes_aliases or not no_aliases:
        raise AliasOverlap("alias sets must be non-empty")
    overlap = set(yes_aliases) & set(no_aliases)
    if overlap:
        raise AliasOverlap(f"yes/no alias sets intersect: {sorted(overlap)}")

    c_yes = math.fsum(dist.probability(tok) for tok in yes_aliases)
    c_no = math.fsum(dist.probability(tok) for tok in no_aliases)

    flags: set[Flag] = set()
    if c_yes == 0.0:
        flags.add(Flag.ANCHOR_MISSING_YES)
    if c_no == 0.0:
        flags.add(Flag.ANCHOR_MISSING_NO)

    if c_yes == 0.0 and c_no == 0.0:
        if missing_policy is MissingPolicy.ERROR:
            raise AnchorTokensAbsent("no yes/no anchor token present in top-K")
        if missing_policy is MissingPolicy.SKIP:
            return None
        flags.add(Flag.FALLBACK_NEUTRAL)
        return ConfidenceScore(value=0.5, method=Method.SELF_EVAL, flags=frozenset(flags))

    value = c_yes / (c_yes + c_no)
    return ConfidenceScore(value=value, method=Method.SELF_EVAL, flags=frozenset(flags))

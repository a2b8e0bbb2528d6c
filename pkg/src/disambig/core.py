"""Value types shared by the disambiguation pipeline, evaluation, and attention analysis.

Everything here is an immutable value object: safe to share across threads and
to serialize into run traces.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum


class EmptySpan(ValueError):
    """A risk span was empty after whitespace trimming."""


class RiskKind(Enum):
    REFERENTIAL = "referential"
    MISSING_ASSUMPTION = "missing_assumption"
    TEMPORAL = "temporal"
    OTHER = "other"


@dataclass(frozen=True)
class RiskType:
    """Category of a semantic risk; OTHER carries a free-text label."""

    kind: RiskKind
    label: str = ""

    def __post_init__(self) -> None:
        if self.kind is RiskKind.OTHER and not self.label.strip():
            raise ValueError("OTHER risk type requires a non-empty label")

    def display(self) -> str:
        """Human-readable label, stable across runs."""
        if self.kind is RiskKind.OTHER:
            return self.label
        return {
            RiskKind.REFERENTIAL: "referential ambiguity",
            RiskKind.MISSING_ASSUMPTION: "missing assumption",
            RiskKind.TEMPORAL: "temporal ambiguity",
        }[self.kind]

    @classmethod
    def from_label(cls, label: str) -> "RiskType":
        """Map a free-text type description onto the taxonomy.

        Labels containing "referen" are referential, "assum"/"premise" are
        missing-assumption, "tempor" are temporal; anything else is kept as
        OTHER with the original label.
        """
        lowered = label.strip().lower()
        if "referen" in lowered:
            return cls(RiskKind.REFERENTIAL)
        if "assum" in lowered or "premise" in lowered:
            return cls(RiskKind.MISSING_ASSUMPTION)
        if "tempor" in lowered:
            return cls(RiskKind.TEMPORAL)
        return cls(RiskKind.OTHER, label.strip())


REFERENTIAL = RiskType(RiskKind.REFERENTIAL)
MISSING_ASSUMPTION = RiskType(RiskKind.MISSING_ASSUMPTION)
TEMPORAL = RiskType(RiskKind.TEMPORAL)


@dataclass(frozen=True)
class RiskPoint:
    """A located, typed risk span in the original prompt.

    Character offsets are 0-based, end exclusive.  ``located=False`` means the
    quoted span could not be matched back into the prompt; such points keep
    ``start == end == 0`` and are still processed downstream (the span text is
    all the interpretation step needs).
    """

    span: str
    start: int
    end: int
    risk_type: RiskType
    located: bool

    def __post_init__(self) -> None:
        if not self.span.strip():
            raise EmptySpan("risk span is empty after trimming")
        if self.located:
            if not (0 <= self.start < self.end):
                raise ValueError(f"located span has bad offsets [{self.start}, {self.end})")
        elif self.start != 0 or self.end != 0:
            raise ValueError("unlocated span must carry zero offsets")


def validate_risk_point(candidate: RiskPoint, prompt: str) -> RiskPoint:
    """Re-anchor a candidate span into the prompt.

    Locates the first case-insensitive occurrence of the (trimmed) span text
    and stores the prompt's own casing, so ``prompt[start:end] == span`` holds
    for every located point.  Unmatched spans are kept with ``located=False``.

    Raises:
        EmptySpan: if the span is whitespace-only.
    """
    span = candidate.span.strip()
    if not span:
        raise EmptySpan("risk span is empty after trimming")
    match = re.search(re.escape(span), prompt, re.IGNORECASE)
    if match is None:
        return RiskPoint(span=span, start=0, end=0, risk_type=candidate.risk_type, located=False)
    start, end = match.start(), match.end()
    return RiskPoint(
        span=prompt[start:end],
        start=start,
        end=end,
        risk_type=candidate.risk_type,
        located=True,
    )


class Channel(Enum):
    FIRST = "first"
    SECOND = "second"


@dataclass(frozen=True)
class Interpretation:
    """One reading of a risk point, produced by one verification channel."""

    risk_index: int
    channel: Channel
    text: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("interpretation text must be non-empty")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    dim: int

    def __post_init__(self) -> None:
        if self.dim <= 0:
            raise ValueError("embedding dim must be positive")
        if len(self.values) != self.dim:
            raise ValueError(f"embedding has {len(self.values)} values but dim={self.dim}")

    @classmethod
    def of(cls, values) -> "EmbeddingVector":
        vals = tuple(float(v) for v in values)
        return cls(values=vals, dim=len(vals))


@dataclass(frozen=True)
class ConsistencyVerdict:
    """Outcome of the similarity gate between the two channel readings."""

    similarity: float
    threshold: float
    consistent: bool

    def __post_init__(self) -> None:
        if not (-1.0 <= self.similarity <= 1.0):
            raise ValueError(f"similarity {self.similarity} outside [-1, 1]")
        if not (0.0 < self.threshold <= 1.0):
            raise ValueError(f"threshold {self.threshold} outside (0, 1]")
        if self.consistent != (self.similarity >= self.threshold):
            raise ValueError("consistent flag contradicts similarity/threshold")

    @classmethod
    def gate(cls, similarity: float, threshold: float) -> "ConsistencyVerdict":
        return cls(similarity=similarity, threshold=threshold, consistent=similarity >= threshold)


class ExplanationSource(Enum):
    FUSED = "fused"
    CONFLICT_RESOLVED = "conflict_resolved"


@dataclass(frozen=True)
class ResolvedExplanation:
    """The settled explanation for one risk point.

    FUSED text is the two channel readings concatenated with a single newline
    (one reading under single-channel mode); CONFLICT_RESOLVED text came from
    a resolver model call.
    """

    risk_index: int
    text: str
    source: ExplanationSource

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("resolved explanation text must be non-empty")


def fuse(first: Interpretation, second: Interpretation) -> ResolvedExplanation:
    """Equal-weight fusion: both readings verbatim, newline-joined, no preference."""
    if first.risk_index != second.risk_index:
        raise ValueError("cannot fuse interpretations of different risk points")
    return ResolvedExplanation(
        risk_index=first.risk_index,
        text=first.text + "\n" + second.text,
        source=ExplanationSource.FUSED,
    )


@dataclass(frozen=True)
class EnhancedContext:
    """Aggregated clarifying context appended to the original prompt."""

    text: str
    resolved_count: int

    def __post_init__(self) -> None:
        if self.resolved_count < 0:
            raise ValueError("resolved_count must be non-negative")
        if (self.resolved_count == 0) != (self.text == ""):
            raise ValueError("resolved_count is zero iff text is empty")


EMPTY_CONTEXT = EnhancedContext(text="", resolved_count=0)


@dataclass(frozen=True)
class DisambiguatedPrompt:
    """The final model input: the original prompt plus any clarifying context."""

    original: str
    enhanced: EnhancedContext
    final_text: str

    def __post_init__(self) -> None:
        if self.original not in self.final_text:
            raise ValueError("final text must contain the original prompt verbatim")
        if self.enhanced.text == "" and self.final_text != self.original:
            raise ValueError("empty context must leave the prompt unchanged")

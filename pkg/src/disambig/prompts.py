"""The five prompt templates and the risk-line wire format.

Templates live twice on purpose: as embedded constants (what the pipeline
renders) and as plain-text files under ``disambig/templates/`` (what a
reviewer audits).  Tests pin the two byte-for-byte.

The first-layer prompt asks for spans and risk types but fixes no output
syntax on its own, so a one-line machine-format footer is appended to it:
one risk point per line, ``SPAN: <exact span> || TYPE: <risk type>``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Iterable, Mapping

from .core import RiskPoint, RiskType, EmptySpan, validate_risk_point


class TemplateError(Exception):
    pass


class MissingPlaceholder(TemplateError):
    def __init__(self, name: str):
        super().__init__(f"binding for placeholder {{{name}}} is missing")
        self.name = name


class UnknownPlaceholder(TemplateError):
    def __init__(self, name: str):
        super().__init__(f"binding {name!r} matches no placeholder in this template")
        self.name = name


class TemplateId(Enum):
    L1_RISK_IDENTIFY = "l1_risk_identify"
    L2_INTERPRET = "l2_interpret"
    L2_RESOLVE = "l2_resolve"
    L3_AGGREGATE = "l3_aggregate"
    AUGMENT = "augment"


L1_FOOTER = "Output one risk point per line as: SPAN: <exact span> || TYPE: <risk type>."

_L1_BODY = """\
You are given a user question.
Your task is to identify spans or phrases that may introduce semantic ambiguity, underspecified references, or logical uncertainty that could affect reasoning stability.
Do NOT attempt to answer the question.
Do NOT resolve the ambiguity.
For each identified risk point, output:
(1) the exact text span, and
(2) a brief description of the type of semantic risk (referential ambiguity, missing assumption, temporal ambiguity).
User Question:
{Input Prompt}
"""

_L2_INTERPRET = """\
You are given a user question and a specific semantic risk point extracted from it.
Your task is to provide ONE plausible interpretation that clarifies the meaning of the risk point in the context of the question.
Focus only on explaining the risk point.
Do NOT solve the entire problem.
User Question:
{Input Prompt}
Semantic Risk Point:
{Risk Span}
"""

_L2_RESOLVE = """\
You are given a user question and two different interpretations of the same semantic risk point.
Your task is to produce a single, self-consistent explanation that resolves the semantic conflict between the two interpretations, based on your explanation of the original question, and ensure logical consistency.
User Question:
{Input Prompt}
Interpretation 1:
{Interpretation 1}
Interpretation 2:
{Interpretation 2}
"""

_L3_AGGREGATE = """\
You are given a user question and a list of resolved semantic clarifications.
Your task is to integrate these clarifications into a concise and structured supplemental context that improves semantic clarity for downstream reasoning.
Do NOT answer the question.
Do NOT introduce new assumptions.
User Question:
{Input Prompt}
Resolved Clarifications:
{Resolved Explanations}
"""

_AUGMENT = """\
Instruction:
Rewrite the following question to make it slightly more semantically ambiguous, while keeping it logically solvable.
You may introduce ambiguity by:
• using unclear or underspecified references (e.g., pronouns or vague entities),
• omitting minor contextual details, or
• introducing mild logical uncertainty that requires inference.
Do NOT change the underlying correct answer.
The rewritten question should remain natural, fluent, and answerable by careful reasoning.
Only output the rewritten question.
Original Question:
{Q}
"""

_TEMPLATE_TEXT: dict[TemplateId, str] = {
    TemplateId.L1_RISK_IDENTIFY: _L1_BODY + L1_FOOTER + "\n",
    TemplateId.L2_INTERPRET: _L2_INTERPRET,
    TemplateId.L2_RESOLVE: _L2_RESOLVE,
    TemplateId.L3_AGGREGATE: _L3_AGGREGATE,
    TemplateId.AUGMENT: _AUGMENT,
}

_PLACEHOLDERS: dict[TemplateId, frozenset[str]] = {
    TemplateId.L1_RISK_IDENTIFY: frozenset({"Input Prompt"}),
    TemplateId.L2_INTERPRET: frozenset({"Input Prompt", "Risk Span"}),
    TemplateId.L2_RESOLVE: frozenset({"Input Prompt", "Interpretation 1", "Interpretation 2"}),
    TemplateId.L3_AGGREGATE: frozenset({"Input Prompt", "Resolved Explanations"}),
    TemplateId.AUGMENT: frozenset({"Q"}),
}


def template_text(template: TemplateId) -> str:
    """The embedded template body, placeholders unexpanded."""
    return _TEMPLATE_TEXT[template]


def template_file_text(template: TemplateId) -> str:
    """The packaged plain-text copy of the same template."""
    path = resources.files("disambig").joinpath(f"templates/{template.value}.txt")
    return path.read_text(encoding="utf-8")


@dataclass(frozen=True)
class RenderedPrompt:
    template: TemplateId
    text: str
    placeholders_filled: tuple[tuple[str, int], ...]


def render(template: TemplateId, bindings: Mapping[str, str]) -> RenderedPrompt:
    """Substitute placeholder bindings into a template.

    Substitution happens in a single pass, so binding values are never
    re-scanned for markers.

    Raises:
        MissingPlaceholder: a declared placeholder has no binding.
        UnknownPlaceholder: a binding names no declared placeholder.
    """
    declared = _PLACEHOLDERS[template]
    for name in declared:
        if name not in bindings:
            raise MissingPlaceholder(name)
    for name in bindings:
        if name not in declared:
            raise UnknownPlaceholder(name)
    pattern = "|".join(re.escape("{" + name + "}") for name in sorted(declared))
    text = re.sub(pattern, lambda m: bindings[m.group(0)[1:-1]], template_text(template))
    filled = tuple((name, len(bindings[name])) for name in sorted(declared))
    return RenderedPrompt(template=template, text=text, placeholders_filled=filled)


_RISK_LINE = re.compile(r"^\s*SPAN:\s*(.*?)\s*\|\|\s*TYPE:\s*(.*?)\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class ParseReport:
    """Counts from one pass over first-layer output (non-blank lines only)."""

    scanned: int
    parsed: int
    skipped: int
    truncated: int


def parse_risk_points(
    l1_output: str, prompt: str, max_points: int = 4
) -> tuple[list[RiskPoint], ParseReport]:
    """Extract risk points from first-layer output, tolerantly.

    Lines that do not match the wire format, or whose span is empty, are
    skipped and counted rather than raised.  Spans are re-anchored into the
    prompt; an empty result list is a valid "no risks" outcome.
    """
    if max_points < 1:
        raise ValueError("max_points must be >= 1")
    points: list[RiskPoint] = []
    scanned = skipped = 0
    for line in l1_output.splitlines():
        if not line.strip():
            continue
        scanned += 1
        match = _RISK_LINE.match(line)
        if match is None or not match.group(1).strip() or not match.group(2).strip():
            skipped += 1
            continue
        span, label = match.group(1), match.group(2)
        try:
            candidate = RiskPoint(
                span=span, start=0, end=0, risk_type=RiskType.from_label(label), located=False
            )
            points.append(validate_risk_point(candidate, prompt))
        except EmptySpan:
            skipped += 1
    truncated = max(0, len(points) - max_points)
    kept = points[:max_points]
    return kept, ParseReport(
        scanned=scanned, parsed=len(points), skipped=skipped, truncated=truncated
    )


def format_risk_points(points: Iterable[RiskPoint]) -> str:
    """Serialize risk points back into the wire format (inverse of parsing)."""
    return "\n".join(f"SPAN: {p.span} || TYPE: {p.risk_type.display()}" for p in points)

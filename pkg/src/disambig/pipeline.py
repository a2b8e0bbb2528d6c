"""Three-layer disambiguation flow: identify risks, dual-interpret and verify,
resolve conflicts, aggregate, and compose the final prompt.

Risk points are processed concurrently in layer 2, but every output (trace,
aggregation input, final text) is ordered by risk-point index, so identical
scripted backends always reproduce identical results.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

from .clients import Backend, ChatRequest, Role, UsageLedger, ZeroVector, chat, embed, user
from .core import (
    EMPTY_CONTEXT,
    Channel,
    ConsistencyVerdict,
    DisambiguatedPrompt,
    EmbeddingVector,
    EnhancedContext,
    ExplanationSource,
    Interpretation,
    ResolvedExplanation,
    RiskPoint,
    fuse,
)
from .prompts import TemplateId, parse_risk_points, render

log = logging.getLogger(__name__)


class PipelineError(Exception):
    pass


class DimensionMismatch(ValueError):
    pass


class Ablation(Enum):
    """Runtime variants that switch off parts of the flow."""

    FULL = "full"
    NO_L2_L3 = "no_l2_l3"
    SINGLE_CHANNEL = "single_channel"
    NO_CONFLICT_RESOLUTION = "no_conflict_resolution"
    NO_L3 = "no_l3"


@dataclass
class PipelineConfig:
    slm_backend: Backend
    embed_backend: Backend
    slm_backend_second: Backend | None = None  # optional distinct model for channel two
    delta: float = 0.8
    temperature: float = 0.2
    max_points: int = 4
    ablation: Ablation = Ablation.FULL
    base_seed: int = 2025
    layer2_workers: int = 4

    def __post_init__(self) -> None:
        if not (0.0 < self.delta <= 1.0):
            raise ValueError("delta must lie in (0, 1]")
        if self.max_points < 1:
            raise ValueError("max_points must be >= 1")


@dataclass(frozen=True)
class PipelineTrace:
    """Materialized dataflow of one run, for auditing and serialization.

    Shape depends on the ablation: dual-channel modes carry two
    interpretations and one verdict per risk point, single-channel carries one
    interpretation and no verdicts, and the layer-2-less mode carries none.
    """

    risk_points: tuple[RiskPoint, ...]
    interpretations: tuple[Interpretation, ...]
    verdicts: tuple[ConsistencyVerdict, ...]
    resolutions: tuple[ResolvedExplanation, ...]
    enhanced: EnhancedContext
    optimizer_cost_usd: float

    def to_dict(self) -> dict:
        return {
            "risk_points": [
                {
                    "span": p.span,
                    "start": p.start,
                    "end": p.end,
                    "risk_type": p.risk_type.display(),
                    "located": p.located,
                }
                for p in self.risk_points
            ],
            "interpretations": [
                {"risk_index": i.risk_index, "channel": i.channel.value, "text": i.text}
                for i in self.interpretations
            ],
            "verdicts": [
                {
                    "similarity": v.similarity,
                    "threshold": v.threshold,
                    "consistent": v.consistent,
                }
                for v in self.verdicts
            ],
            "resolutions": [
                {"risk_index": r.risk_index, "source": r.source.value, "text": r.text}
                for r in self.resolutions
            ],
            "enhanced": {
                "text": self.enhanced.text,
                "resolved_count": self.enhanced.resolved_count,
            },
            "optimizer_cost_usd": self.optimizer_cost_usd,
        }


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine of the angle between two embeddings, clamped to [-1, 1].

    Raises:
        DimensionMismatch: vectors differ in dimension.
        ZeroVector: either vector has zero norm.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"dims differ: {a.dim} vs {b.dim}")
    dot = math.fsum(x * y for x, y in zip(a.values, b.values))
    norm_a = math.sqrt(math.fsum(x * x for x in a.values))
    norm_b = math.sqrt(math.fsum(y * y for y in b.values))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("cosine similarity undefined for zero vectors")
    return max(-1.0, min(1.0, dot / (norm_a * norm_b)))


def _slm_request(config: PipelineConfig, backend: Backend, text: str, seed: int) -> ChatRequest:
    return ChatRequest(
        model=backend.config.model,
        messages=(user(text),),
        temperature=config.temperature,
        seed=seed,
    )


def identify_risks(prompt: str, config: PipelineConfig, ledger: UsageLedger) -> list[RiskPoint]:
    """Layer 1: one scanning call, parsed into at most ``max_points`` risk points."""
    if not prompt:
        raise ValueError("prompt must be non-empty")
    rendered = render(TemplateId.L1_RISK_IDENTIFY, {"Input Prompt": prompt})
    response = chat(
        config.slm_backend,
        _slm_request(config, config.slm_backend, rendered.text, config.base_seed),
        Role.OPTIMIZER,
        ledger,
    )
    points, report = parse_risk_points(response.text, prompt, config.max_points)
    if report.skipped or report.truncated:
        log.debug("risk parse report: %s", report)
    return points


def interpret_pair(
    prompt: str,
    point: RiskPoint,
    index: int,
    config: PipelineConfig,
    ledger: UsageLedger,
) -> tuple[Interpretation, Interpretation]:
    """Layer 2a: two independent readings of one risk point.

    Both channels see the identical rendered prompt; they differ by seed
    (consecutive) and optionally by backend.  Results are ordered by channel.
    Under the single-channel ablation one call is made and its reading fills
    both slots.
    """
    rendered = render(
        TemplateId.L2_INTERPRET, {"Input Prompt": prompt, "Risk Span": point.span}
    )
    seed = config.base_seed + 2 * index
    first_resp = chat(
        config.slm_backend,
        _slm_request(config, config.slm_backend, rendered.text, seed),
        Role.OPTIMIZER,
        ledger,
    )
    first = Interpretation(risk_index=index, channel=Channel.FIRST, text=first_resp.text)
    if config.ablation is Ablation.SINGLE_CHANNEL:
        return first, first
    second_backend = config.slm_backend_second or config.slm_backend
    second_resp = chat(
        second_backend,
        _slm_request(config, second_backend, rendered.text, seed + 1),
        Role.OPTIMIZER,
        ledger,
    )
    second = Interpretation(risk_index=index, channel=Channel.SECOND, text=second_resp.text)
    return first, second


def verify_and_resolve(
    prompt: str,
    point: RiskPoint,
    pair: tuple[Interpretation, Interpretation],
    config: PipelineConfig,
    ledger: UsageLedger,
) -> tuple[ResolvedExplanation, ConsistencyVerdict | None]:
    """Layer 2b: gate the pair on embedding similarity, fuse or resolve.

    Consistent pairs are fused by newline concatenation; inconsistent pairs go
    through one resolver call, except under the no-conflict-resolution
    ablation where they are fused regardless.  Single-channel mode skips the
    gate entirely (no verdict, the single reading stands).
    """
    first, second = pair
    if config.ablation is Ablation.SINGLE_CHANNEL:
        return (
            ResolvedExplanation(
                risk_index=first.risk_index, text=first.text, source=ExplanationSource.FUSED
            ),
            None,
        )
    vec_first = embed(config.embed_backend, first.text, ledger)
    vec_second = embed(config.embed_backend, second.text, ledger)
    verdict = ConsistencyVerdict.gate(cosine_similarity(vec_first, vec_second), config.delta)
    if verdict.consistent or config.ablation is Ablation.NO_CONFLICT_RESOLUTION:
        return fuse(first, second), verdict
    rendered = render(
        TemplateId.L2_RESOLVE,
        {
            "Input Prompt": prompt,
            "Interpretation 1": first.text,
            "Interpretation 2": second.text,
        },
    )
    response = chat(
        config.slm_backend,
        _slm_request(config, config.slm_backend, rendered.text, config.base_seed),
        Role.OPTIMIZER,
        ledger,
    )
    resolved = ResolvedExplanation(
        risk_index=first.risk_index,
        text=response.text,
        source=ExplanationSource.CONFLICT_RESOLVED,
    )
    return resolved, verdict


def _numbered(resolutions: list[ResolvedExplanation]) -> str:
    return "\n".join(f"{i + 1}. {r.text}" for i, r in enumerate(resolutions))


def aggregate(
    prompt: str,
    resolutions: list[ResolvedExplanation],
    config: PipelineConfig,
    ledger: UsageLedger,
) -> EnhancedContext:
    """Layer 3: merge resolved explanations into one clarifying context.

    No resolutions means no model call and an empty context.  Under the
    no-layer-3 ablation the numbered explanation list is returned verbatim,
    also without a call.
    """
    if not resolutions:
        return EMPTY_CONTEXT
    numbered = _numbered(resolutions)
    if config.ablation is Ablation.NO_L3:
        return EnhancedContext(text=numbered, resolved_count=len(resolutions))
    rendered = render(
        TemplateId.L3_AGGREGATE,
        {"Input Prompt": prompt, "Resolved Explanations": numbered},
    )
    response = chat(
        config.slm_backend,
        _slm_request(config, config.slm_backend, rendered.text, config.base_seed),
        Role.OPTIMIZER,
        ledger,
    )
    text = response.text.strip()
    if not text:
        raise PipelineError("aggregation call returned empty context")
    return EnhancedContext(text=text, resolved_count=len(resolutions))


@dataclass
class _PointResult:
    pair: tuple[Interpretation, Interpretation]
    verdict: ConsistencyVerdict | None
    resolution: ResolvedExplanation


def _process_point(
    prompt: str,
    point: RiskPoint,
    index: int,
    config: PipelineConfig,
    ledger: UsageLedger,
) -> _PointResult:
    pair = interpret_pair(prompt, point, index, config, ledger)
    resolution, verdict = verify_and_resolve(prompt, point, pair, config, ledger)
    return _PointResult(pair=pair, verdict=verdict, resolution=resolution)


def _compose(prompt: str, enhanced: EnhancedContext) -> DisambiguatedPrompt:
    if not enhanced.text:
        return DisambiguatedPrompt(original=prompt, enhanced=enhanced, final_text=prompt)
    final = f"{prompt}\n\nClarifying context:\n{enhanced.text}"
    return DisambiguatedPrompt(original=prompt, enhanced=enhanced, final_text=final)


def disambiguate(
    prompt: str, config: PipelineConfig, ledger: UsageLedger
) -> tuple[DisambiguatedPrompt, PipelineTrace]:
    """Run the full flow on one prompt.

    Zero identified risks short-circuits layers 2 and 3 and returns the prompt
    unchanged.  Any layer-2 failure aborts the whole run; a partially
    clarified context is never emitted.
    """
    cost_before = ledger.subtotal(Role.OPTIMIZER)
    points = identify_risks(prompt, config, ledger)

    interpretations: list[Interpretation] = []
    verdicts: list[ConsistencyVerdict] = []
    resolutions: list[ResolvedExplanation] = []

    if not points:
        enhanced = EMPTY_CONTEXT
    elif config.ablation is Ablation.NO_L2_L3:
        # Risk awareness without rectification: list what was found, verbatim.
        lines = "\n".join(f"- Risk: {p.span} ({p.risk_type.display()})" for p in points)
        enhanced = EnhancedContext(text=lines, resolved_count=len(points))
    else:
        workers = min(len(points), config.layer2_workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_process_point, prompt, point, index, config, ledger)
                for index, point in enumerate(points)
            ]
            results = [f.result() for f in futures]
        for result in results:
            if config.ablation is Ablation.SINGLE_CHANNEL:
                interpretations.append(result.pair[0])
            else:
                interpretations.extend(result.pair)
            if result.verdict is not None:
                verdicts.append(result.verdict)
            resolutions.append(result.resolution)
        enhanced = aggregate(prompt, resolutions, config, ledger)

    trace = PipelineTrace(
        risk_points=tuple(points),
        interpretations=tuple(interpretations),
        verdicts=tuple(verdicts),
        resolutions=tuple(resolutions),
        enhanced=enhanced,
        optimizer_cost_usd=ledger.subtotal(Role.OPTIMIZER) - cost_before,
    )
    return _compose(prompt, enhanced), trace

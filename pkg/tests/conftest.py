"""Shared scripted fixtures for the test suite."""

from __future__ import annotations

import pytest

from disambig.clients import BackendConfig, ScriptEntry, ScriptedBackend, UsageLedger
from disambig.pipeline import Ablation, PipelineConfig

PRICED_SLM = BackendConfig(
    base_url="scripted:", model="slm", price_in_per_1k=0.15, price_out_per_1k=0.60
)
PRICED_EMBED = BackendConfig(
    base_url="scripted:", model="embedder", price_in_per_1k=0.15, price_out_per_1k=0.60
)
PRICED_TARGET = BackendConfig(
    base_url="scripted:", model="target", price_in_per_1k=0.15, price_out_per_1k=0.60
)

TWO_RISK_PROMPT = (
    "Team A sends half of the surplus to Team B. "
    "Later Team B spends 20% of it on tools. How much does Team B keep?"
)

L1_TWO_RISKS = (
    "SPAN: it || TYPE: referential ambiguity\n"
    "SPAN: the surplus || TYPE: missing assumption"
)

INTERPRETATIONS = {
    "it": (
        "Reading alpha: it refers to the transferred amount.",
        "Reading bravo: it denotes the money Team B received.",
    ),
    "the surplus": (
        "Surplus gloss one: money left after covering costs.",
        "Surplus gloss two: funds remaining once expenses are paid.",
    ),
}

AGGREGATED = 'Here, "it" means the transferred amount; the surplus is post-cost money.'
RESOLVED = "Unified: it refers to the transferred amount in every reading."


def two_risk_chat_entries(delay_it: float = 0.0, delay_surplus: float = 0.0) -> list[ScriptEntry]:
    """Chat script covering every ablation: layer-1 scan, two interpretation
    channels per risk point, one resolver entry, one aggregation entry."""
    it_first, it_second = INTERPRETATIONS["it"]
    sp_first, sp_second = INTERPRETATIONS["the surplus"]
    return [
        ScriptEntry("identify spans or phrases", response=L1_TWO_RISKS),
        ScriptEntry("Semantic Risk Point:\nit", response=it_first, delay_s=delay_it),
        ScriptEntry("Semantic Risk Point:\nit", response=it_second, delay_s=delay_it),
        ScriptEntry("Semantic Risk Point:\nthe surplus", response=sp_first, delay_s=delay_surplus),
        ScriptEntry("Semantic Risk Point:\nthe surplus", response=sp_second, delay_s=delay_surplus),
        ScriptEntry("two different interpretations", response=RESOLVED),
        ScriptEntry("Resolved Clarifications:", response=AGGREGATED),
    ]


def two_risk_embed_entries(
    consistent_second: bool = True,
    delay_it: float = 0.0,
    delay_surplus: float = 0.0,
) -> list[ScriptEntry]:
    it_first, it_second = INTERPRETATIONS["it"]
    sp_first, sp_second = INTERPRETATIONS["the surplus"]
    second_vec = (0.05, 0.995) if consistent_second else (1.0, 0.0)
    return [
        ScriptEntry(it_first, embedding=(1.0, 0.0), delay_s=delay_it),
        ScriptEntry(it_second, embedding=(0.995, 0.05), delay_s=delay_it),
        ScriptEntry(sp_first, embedding=(0.0, 1.0), delay_s=delay_surplus),
        ScriptEntry(sp_second, embedding=second_vec, delay_s=delay_surplus),
    ]


def make_two_risk_backends(
    consistent_second: bool = True,
    delay_it: float = 0.0,
    delay_surplus: float = 0.0,
) -> tuple[ScriptedBackend, ScriptedBackend]:
    chatter = ScriptedBackend(
        two_risk_chat_entries(delay_it=delay_it, delay_surplus=delay_surplus), PRICED_SLM
    )
    embedder = ScriptedBackend(
        two_risk_embed_entries(
            consistent_second=consistent_second, delay_it=delay_it, delay_surplus=delay_surplus
        ),
        PRICED_EMBED,
    )
    return chatter, embedder


def make_pipeline_config(
    chatter: ScriptedBackend, embedder: ScriptedBackend, ablation: Ablation = Ablation.FULL
) -> PipelineConfig:
    return PipelineConfig(slm_backend=chatter, embed_backend=embedder, ablation=ablation)


@pytest.fixture
def ledger() -> UsageLedger:
    return UsageLedger()

"""Run a local causal language model and export its attention rows.

The export is a JSON document with one causal row per (layer, head, query
token): tokens carry character offsets from the tokenizer's offset mapping,
and every row is renormalized to sum to exactly one (recorded in the
provenance block).  Mean head mode averages heads before renormalizing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer


class ExtractorError(Exception):
    pass


class ModelLoadFailure(ExtractorError):
    pass


class SpanResolutionFailure(ExtractorError):
    """A query span overlaps no token of the encoded prompt."""


@dataclass
class ExtractorConfig:
    model_id: str
    prompt: str
    query_spans: tuple[tuple[int, int], ...]
    head_mode: str = "full"  # "full" or "mean"
    max_layers: int | None = None
    provenance_extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.head_mode not in ("full", "mean"):
            raise ValueError(f"head_mode must be 'full' or 'mean', not {self.head_mode!r}")
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if not self.query_spans:
            raise ValueError("at least one query span is required")


def load_model(model_id: str):
    """Load tokenizer and model in inference mode with attention outputs on.

    Raises:
        ModelLoadFailure: anything goes wrong, including a non-fast tokenizer
        (character offsets require one).
    """
    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id, use_fast=True)
        # SDPA/flash kernels do not materialize attention weights.
        model = AutoModelForCausalLM.from_pretrained(model_id, attn_implementation="eager")
    except Exception as exc:
        raise ModelLoadFailure(f"cannot load {model_id!r}: {exc}") from exc
    if not getattr(tokenizer, "is_fast", False):
        raise ModelLoadFailure(f"{model_id!r} has no fast tokenizer (offsets unavailable)")
    model.eval()
    return tokenizer, model


def resolve_query_positions(
    offsets: list[tuple[int, int]], spans: tuple[tuple[int, int], ...]
) -> list[int]:
    """Map character spans to token indices by overlap; union, ascending."""
    positions: set[int] = set()
    for span_start, span_end in spans:
        hits = [
            index
            for index, (start, end) in enumerate(offsets)
            if end > start and start < span_end and end > span_start
        ]
        if not hits:
            raise SpanResolutionFailure(f"query span [{span_start}, {span_end}) maps to no token")
        positions.update(hits)
    return sorted(positions)


def extract(config: ExtractorConfig) -> dict:
    """Produce the attention-export document for one prompt."""
    tokenizer, model = load_model(config.model_id)
    encoded = tokenizer(
        config.prompt, return_offsets_mapping=True, return_tensors="pt"
    )
    offsets = [(int(s), int(e)) for s, e in encoded["offset_mapping"][0].tolist()]
    input_ids = encoded["input_ids"]
    token_ids = input_ids[0].tolist()
    tokens = []
    for token_id, (start, end) in zip(token_ids, offsets):
        if end > start:
            text = config.prompt[start:end]
        else:
            # Special tokens carry no span; keep their display form.
            text = tokenizer.convert_ids_to_tokens([token_id])[0]
        tokens.append({"text": text, "start": start, "end": end})

    query_positions = resolve_query_positions(offsets, config.query_spans)

    with torch.no_grad():
        output = model(
            input_ids=input_ids,
            attention_mask=encoded.get("attention_mask"),
            output_attentions=True,
        )
    if not output.attentions:
        raise ModelLoadFailure(f"{config.model_id!r} returned no attention tensors")
    per_layer = [a[0].to(torch.float64) for a in output.attentions]  # [H, S, S]
    if config.max_layers is not None:
        per_layer = per_layer[: config.max_layers]
    if config.head_mode == "mean":
        per_layer = [a.mean(dim=0, keepdim=True) for a in per_layer]
    heads = per_layer[0].shape[0]

    weights = []
    for matrix in per_layer:
        layer_rows = []
        for head in range(heads):
            head_rows = []
            for q_pos in query_positions:
                row = matrix[head, q_pos, : q_pos + 1]
                total = float(row.sum())
                if total <= 0.0:
                    raise ExtractorError(f"degenerate attention row at query {q_pos}")
                head_rows.append([float(v) / total for v in row.tolist()])
            layer_rows.append(head_rows)
        weights.append(layer_rows)

    return {
        "model": config.model_id,
        "prompt": config.prompt,
        "tokens": tokens,
        "query_positions": query_positions,
        "layers": len(weights),
        "heads": heads,
        "head_mode": config.head_mode,
        "weights": weights,
        "provenance": {
            "extractor": "attn-extractor 0.1.0",
            "rows_renormalized": True,
            "attn_implementation": "eager",
            "compute_dtype": "float64",
            **config.provenance_extra,
        },
    }


def extract_to_file(config: ExtractorConfig, path: str | Path) -> dict:
    document = extract(config)
    Path(path).write_text(json.dumps(document), encoding="utf-8")
    return document

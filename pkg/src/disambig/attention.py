"""Attention diagnostics over a language-neutral export format.

An export carries normalized causal attention rows for a set of query tokens,
per layer and head.  The functions here compute focus ratio (summed mass on a
target token set), Shannon entropy of a row (with a small epsilon inside the
log for stability), layer-wise focus curves, entropy/focus scatter points, and
per-category mass reallocation between two exports.  Outputs are plain values
and CSV files; plotting happens elsewhere.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

ROW_SUM_TOLERANCE = 1e-4
DEFAULT_EPSILON = 1e-10


class AttentionError(Exception):
    pass


class ExportInvalid(AttentionError):
    pass


class IndexOutOfRange(AttentionError):
    pass


class UnnormalizedRow(AttentionError):
    pass


class CategoryMapIncomplete(AttentionError):
    pass


class HeadMode(Enum):
    FULL = "full"
    MEAN = "mean"


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int


@dataclass(frozen=True)
class AttentionExport:
    """Validated attention rows for designated query tokens.

    ``weights[layer][head][q]`` is the causal row of query ``query_positions[q]``
    over keys ``0..query_positions[q]``; every row sums to one within
    ``ROW_SUM_TOLERANCE``.  Token spans are character offsets into ``prompt``.
    """

    model: str
    prompt: str
    tokens: tuple[Token, ...]
    query_positions: tuple[int, ...]
    layers: int
    heads: int
    head_mode: HeadMode
    weights: tuple  # [layer][head][query][key] nested tuples
    provenance: dict | None = None

    def rows(self) -> Iterator[tuple[int, int, int, tuple[float, ...]]]:
        """Yield (layer, head, query_position, row) in deterministic order."""
        for layer in range(self.layers):
            for head in range(self.heads):
                for q_index, q_pos in enumerate(self.query_positions):
                    yield layer, head, q_pos, self.weights[layer][head][q_index]


def validate_export(export: AttentionExport) -> AttentionExport:
    """Check every structural invariant; raise ExportInvalid with the first failure."""
    n_prompt = len(export.prompt)
    previous_end = 0
    for index, token in enumerate(export.tokens):
        if not (0 <= token.start <= token.end <= n_prompt):
            raise ExportInvalid(f"token {index} span [{token.start}, {token.end}) out of bounds")
        if token.start < previous_end:
            raise ExportInvalid(f"token {index} overlaps or reorders the previous span")
        if token.end > token.start and export.prompt[token.start : token.end] != token.text:
            raise ExportInvalid(f"token {index} text does not match its prompt span")
        previous_end = max(previous_end, token.end)
    for q_pos in export.query_positions:
        if not (0 <= q_pos < len(export.tokens)):
            raise ExportInvalid(f"query position {q_pos} outside the token list")
    if export.head_mode is HeadMode.MEAN and export.heads != 1:
        raise ExportInvalid("mean head mode requires exactly one head")
    if len(export.weights) != export.layers:
        raise ExportInvalid(f"expected {export.layers} layers, found {len(export.weights)}")
    for layer, per_head in enumerate(export.weights):
        if len(per_head) != export.heads:
            raise ExportInvalid(f"layer {layer}: expected {export.heads} heads")
        for head, per_query in enumerate(per_head):
            if len(per_query) != len(export.query_positions):
                raise ExportInvalid(f"layer {layer} head {head}: query row count mismatch")
            for q_index, row in enumerate(per_query):
                q_pos = export.query_positions[q_index]
                if len(row) != q_pos + 1:
                    raise ExportInvalid(
                        f"layer {layer} head {head} query {q_pos}: "
                        f"row length {len(row)} != {q_pos + 1}"
                    )
                if any(w < 0.0 or w > 1.0 for w in row):
                    raise ExportInvalid(
                        f"layer {layer} head {head} query {q_pos}: weight outside [0, 1]"
                    )
                total = math.fsum(row)
                if abs(total - 1.0) > ROW_SUM_TOLERANCE:
                    raise ExportInvalid(
                        f"layer {layer} head {head} query {q_pos}: row sums to {total}"
                    )
    return export


def export_from_dict(data: Mapping) -> AttentionExport:
    try:
        export = AttentionExport(
            model=str(data["model"]),
            prompt=str(data["prompt"]),
            tokens=tuple(
                Token(text=str(t["text"]), start=int(t["start"]), end=int(t["end"]))
                for t in data["tokens"]
            ),
            query_positions=tuple(int(q) for q in data["query_positions"]),
            layers=int(data["layers"]),
            heads=int(data["heads"]),
            head_mode=HeadMode(data["head_mode"]),
            weights=tuple(
                tuple(tuple(tuple(float(w) for w in row) for row in per_query) for per_query in per_head)
                for per_head in data["weights"]
            ),
            provenance=data.get("provenance"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ExportInvalid(f"malformed export document: {exc}") from exc
    return validate_export(export)


def export_to_dict(export: AttentionExport) -> dict:
    doc: dict = {
        "model": export.model,
        "prompt": export.prompt,
        "tokens": [{"text": t.text, "start": t.start, "end": t.end} for t in export.tokens],
        "query_positions": list(export.query_positions),
        "layers": export.layers,
        "heads": export.heads,
        "head_mode": export.head_mode.value,
        "weights": [
            [[list(row) for row in per_query] for per_query in per_head]
            for per_head in export.weights
        ],
    }
    if export.provenance is not None:
        doc["provenance"] = export.provenance
    return doc


def load_export(path: str | Path) -> AttentionExport:
    return export_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_export(export: AttentionExport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(export_to_dict(export)), encoding="utf-8")


class Category(Enum):
    SINK = "sink"
    NEUTRAL = "neutral"
    TARGET = "target"
    OTHER = "other"


@dataclass(frozen=True)
class FocusSpec:
    """Target token set plus a total token-index -> category map."""

    target_indices: frozenset[int]
    category_map: Mapping[int, Category]

    def __post_init__(self) -> None:
        for index in self.target_indices:
            if self.category_map.get(index) is not Category.TARGET:
                raise ValueError(f"target index {index} is not mapped to the target category")

    def check_covers(self, export: AttentionExport) -> None:
        missing = [i for i in range(len(export.tokens)) if i not in self.category_map]
        if missing:
            raise CategoryMapIncomplete(f"category map misses token indices {missing[:8]}")


_BEGIN_MARKERS = frozenset(
    {"<|begin_of_text|>", "<|beginoftext|>", "<|endoftext|>", "<s>", "<bos>", "[CLS]"}
)

STOPWORDS = frozenset(
    """a an the of in on at to for by with from as and or but if then is are was were be been
    being it its this that these those there here do does did done has have had not no yes
    so such than too very can could will would shall should may might must about into over
    under again further once only own same s t don now he she they them his her their we our
    you your i me my us what which who whom whose when where why how all any both each few
    more most other some""".split()
)


def _is_begin_marker(token: Token) -> bool:
    return token.text in _BEGIN_MARKERS or (token.start == token.end and token.text != "")


def resolve_target_spans(
    export: AttentionExport, spans: Iterable[tuple[int, int]]
) -> frozenset[int]:
    """Map character ranges onto token indices by span overlap."""
    indices: set[int] = set()
    for span_start, span_end in spans:
        if span_end <= span_start:
            raise ValueError(f"empty target span [{span_start}, {span_end})")
        hit = False
        for index, token in enumerate(export.tokens):
            if token.end > token.start and token.start < span_end and token.end > span_start:
                indices.add(index)
                hit = True
        if not hit:
            raise ValueError(f"target span [{span_start}, {span_end}) overlaps no token")
    return frozenset(indices)


def build_focus_spec(
    export: AttentionExport,
    target_spans: Iterable[tuple[int, int]],
    stopwords: frozenset[str] = STOPWORDS,
) -> FocusSpec:
    """Categorize every token: targets from spans, sink at index 0 for a
    begin-of-text marker, stopwords as neutral, everything else as other."""
    targets = resolve_target_spans(export, target_spans)
    category_map: dict[int, Category] = {}
    for index, token in enumerate(export.tokens):
        if index in targets:
            category_map[index] = Category.TARGET
        elif index == 0 and _is_begin_marker(token):
            category_map[index] = Category.SINK
        elif token.text.strip().lower() in stopwords:
            category_map[index] = Category.NEUTRAL
        else:
            category_map[index] = Category.OTHER
    return FocusSpec(target_indices=targets, category_map=category_map)


def _check_row(row: Sequence[float]) -> None:
    total = math.fsum(row)
    if abs(total - 1.0) > ROW_SUM_TOLERANCE:
        raise UnnormalizedRow(f"row sums to {total}")


def focus_ratio(row: Sequence[float], targets: Iterable[int]) -> float:
    """Summed attention mass on the target indices; lies in [0, 1]."""
    _check_row(row)
    target_list = sorted(set(targets))
    if any(i < 0 or i >= len(row) for i in target_list):
        raise IndexOutOfRange(f"target index outside row of length {len(row)}")
    return math.fsum(row[i] for i in target_list)


def shannon_entropy(
    row: Sequence[float], epsilon: float = DEFAULT_EPSILON, base: float | None = None
) -> float:
    """Entropy of a normalized row, epsilon-shifted inside the log only.

    Natural log by default; pass ``base`` for plotting parity with other
    tooling.  Zero entries contribute exactly zero.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    _check_row(row)
    value = -math.fsum(p * math.log(p + epsilon) for p in row)
    if base is not None:
        value /= math.log(base)
    return value


def _clipped_focus(row: Sequence[float], targets: frozenset[int]) -> float:
    # Causal rows only reach keys up to the query position; later targets hold
    # zero mass by definition and are skipped rather than raised.
    return focus_ratio(row, (i for i in targets if i < len(row)))


def layerwise_focus_curve(
    export: AttentionExport, spec: FocusSpec
) -> list[tuple[int, float]]:
    """Mean focus ratio per layer, averaged over heads and query rows."""
    spec.check_covers(export)
    curve: list[tuple[int, float]] = []
    per_layer: dict[int, list[float]] = {layer: [] for layer in range(export.layers)}
    for layer, _head, _q_pos, row in export.rows():
        per_layer[layer].append(_clipped_focus(row, spec.target_indices))
    for layer in range(export.layers):
        values = per_layer[layer]
        curve.append((layer, math.fsum(values) / len(values)))
    return curve


def entropy_focus_rows(
    export: AttentionExport, spec: FocusSpec, epsilon: float = DEFAULT_EPSILON
) -> list[tuple[int, int, int, float, float]]:
    """(layer, head, query_position, entropy, focus) for every row."""
    spec.check_covers(export)
    out = []
    for layer, head, q_pos, row in export.rows():
        out.append(
            (
                layer,
                head,
                q_pos,
                shannon_entropy(row, epsilon),
                _clipped_focus(row, spec.target_indices),
            )
        )
    return out


def entropy_focus_distribution(
    export: AttentionExport, spec: FocusSpec, epsilon: float = DEFAULT_EPSILON
) -> list[tuple[float, float]]:
    """One (entropy, focus) point per (layer, head, query) row."""
    return [(e, f) for _l, _h, _q, e, f in entropy_focus_rows(export, spec, epsilon)]


def category_masses(export: AttentionExport, spec: FocusSpec) -> dict[Category, float]:
    """Mean per-row attention mass per category.

    Rows are renormalized by their exact sums first, so the four masses add up
    to one to float precision even when rows only meet the looser export
    tolerance.
    """
    spec.check_covers(export)
    sums: dict[Category, list[float]] = {category: [] for category in Category}
    n_rows = 0
    for _layer, _head, _q_pos, row in export.rows():
        _check_row(row)
        total = math.fsum(row)
        per_category = {category: 0.0 for category in Category}
        for index, weight in enumerate(row):
            per_category[spec.category_map[index]] += weight / total
        for category in Category:
            sums[category].append(per_category[category])
        n_rows += 1
    if n_rows == 0:
        raise ExportInvalid("export has no attention rows")
    return {category: math.fsum(sums[category]) / n_rows for category in Category}


def category_reallocation(
    base: AttentionExport,
    optimized: AttentionExport,
    base_spec: FocusSpec,
    optimized_spec: FocusSpec,
) -> dict[Category, tuple[float, float, float]]:
    """Per-category (mass_base, mass_optimized, delta) between two exports."""
    mass_base = category_masses(base, base_spec)
    mass_optimized = category_masses(optimized, optimized_spec)
    return {
        category: (
            mass_base[category],
            mass_optimized[category],
            mass_optimized[category] - mass_base[category],
        )
        for category in Category
    }


def write_layer_curve_csv(
    path: str | Path, curves: Mapping[str, Sequence[tuple[int, float]]]
) -> None:
    """One row per layer; one focus column per labelled curve."""
    labels = list(curves)
    layer_count = {len(curve) for curve in curves.values()}
    if len(layer_count) != 1:
        raise ValueError("curves must cover the same layers")
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["layer"] + [f"focus_{label}" for label in labels])
        for row_index in range(layer_count.pop()):
            layer = curves[labels[0]][row_index][0]
            writer.writerow(
                [layer] + [f"{curves[label][row_index][1]:.12g}" for label in labels]
            )


def write_categories_csv(
    path: str | Path, realloc: Mapping[Category, tuple[float, float, float]]
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["category", "mass_base", "mass_optimized", "delta"])
        for category in Category:
            mass_base, mass_optimized, delta = realloc[category]
            writer.writerow(
                [category.value, f"{mass_base:.12g}", f"{mass_optimized:.12g}", f"{delta:.12g}"]
            )


def write_points_csv(
    path: str | Path, rows: Sequence[tuple[int, int, int, float, float]]
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["layer", "head", "query_position", "entropy", "focus"])
        for layer, head, q_pos, entropy, focus in rows:
            writer.writerow([layer, head, q_pos, f"{entropy:.12g}", f"{focus:.12g}"])

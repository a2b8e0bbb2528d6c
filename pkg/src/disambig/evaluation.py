"""Benchmark ingestion, multi-sample target runs, stability metrics, and the
ambiguity-augmentation tool.

Metrics are exact rational counts over the evaluated items: single-sample
accuracy (first sample), majority-vote accuracy (ties broken by the
lexicographically smallest normalized answer), and disagreement rate (items
whose samples are not all identical after normalization).  Items that fail
with a backend error are excluded from every denominator and surfaced as a
warning count instead of being scored wrong.
"""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .clients import Backend, ChatRequest, ClientError, Role, UsageLedger, chat, user
from .pipeline import PipelineConfig, PipelineError, disambiguate
from .prompts import TemplateId, render


class BenchmarkError(Exception):
    pass


class MalformedLine(BenchmarkError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class DuplicateId(BenchmarkError):
    def __init__(self, item_id: str):
        super().__init__(f"duplicate item id {item_id!r}")
        self.item_id = item_id


class RewriteEmpty(BenchmarkError):
    """The augmentation rewriter returned an empty question."""


class EvalError(Exception):
    pass


@dataclass(frozen=True)
class BenchmarkItem:
    id: str
    question: str
    answer: str
    choices: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("item id must be non-empty")
        if not self.question or not self.answer:
            raise ValueError(f"item {self.id!r}: question and answer must be non-empty")


def load_benchmark(path: str | Path) -> list[BenchmarkItem]:
    """Parse a JSON-Lines benchmark file (id, question, answer, optional choices)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    items: list[BenchmarkItem] = []
    seen: set[str] = set()
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(line_no, f"invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise MalformedLine(line_no, "expected a JSON object")
        try:
            item = BenchmarkItem(
                id=str(obj["id"]),
                question=str(obj["question"]),
                answer=str(obj["answer"]),
                choices=tuple(str(c) for c in obj["choices"]) if "choices" in obj else None,
            )
        except (KeyError, ValueError) as exc:
            raise MalformedLine(line_no, str(exc)) from exc
        if item.id in seen:
            raise DuplicateId(item.id)
        seen.add(item.id)
        items.append(item)
    return items


def write_benchmark(items: Iterable[BenchmarkItem], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for item in items:
            obj: dict = {"id": item.id, "question": item.question, "answer": item.answer}
            if item.choices is not None:
                obj["choices"] = list(item.choices)
            handle.write(json.dumps(obj, ensure_ascii=False) + "\n")


_ARTICLES = ("a", "an", "the")
_TERMINAL_PUNCT = ".,!?;:"
_ANSWER_MARKER = re.compile(r"\banswer\s*:\s*")


def _strip_articles(text: str) -> str:
    words = text.split(" ")
    while words and words[0] in _ARTICLES:
        words.pop(0)
    return " ".join(words)


def _strip_tail_punct(text: str) -> str:
    return text.rstrip(_TERMINAL_PUNCT).strip()


def normalize_answer(raw: str) -> str:
    """Canonical form used for every answer comparison.

    In order: lowercase, trim, collapse whitespace runs to single spaces,
    strip terminal punctuation, strip leading articles; then, if an
    "answer:" marker remains, keep only what follows the last one and strip
    it the same way.
    """
    text = raw.lower().strip()
    text = re.sub(r"\s+", " ", text)
    text = _strip_articles(_strip_tail_punct(text))
    marker = None
    for marker in _ANSWER_MARKER.finditer(text):
        pass
    if marker is not None:
        text = _strip_articles(_strip_tail_punct(text[marker.end() :].strip()))
    return text


def _choice_letters(n: int) -> str:
    return string.ascii_lowercase[:n]


def is_correct(normalized: str, item: BenchmarkItem) -> bool:
    """Whether a normalized answer matches the item's gold answer.

    Multiple-choice items also match across the letter/text boundary: a gold
    letter accepts its choice's text and a gold text accepts its letter.
    """
    gold = normalize_answer(item.answer)
    if normalized == gold:
        return True
    if item.choices:
        norm_choices = [normalize_answer(c) for c in item.choices]
        letters = _choice_letters(len(norm_choices))
        if len(gold) == 1 and gold in letters:
            return normalized == norm_choices[letters.index(gold)]
        if gold in norm_choices:
            return normalized == letters[norm_choices.index(gold)]
    return False


def majority_answer(normalized: Sequence[str]) -> str:
    """Most frequent answer; ties go to the lexicographically smallest."""
    if not normalized:
        raise ValueError("majority vote needs at least one answer")
    counts = Counter(normalized)
    return min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]


@dataclass(frozen=True)
class EvalRunRecord:
    item_id: str
    samples: tuple[str, ...]
    normalized: tuple[str, ...]
    correct_flags: tuple[bool, ...]
    seeds_used: tuple[int, ...]

    def __post_init__(self) -> None:
        k = len(self.samples)
        if not (len(self.normalized) == len(self.correct_flags) == len(self.seeds_used) == k):
            raise ValueError("record lists must share one length")
        if k == 0:
            raise ValueError("record needs at least one sample")
        base = self.seeds_used[0]
        if any(seed != base + j for j, seed in enumerate(self.seeds_used)):
            raise ValueError("seeds must be consecutive from the base")

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "samples": list(self.samples),
            "normalized": list(self.normalized),
            "correct_flags": list(self.correct_flags),
            "seeds_used": list(self.seeds_used),
        }


@dataclass(frozen=True)
class MetricsReport:
    acc_at_1: float
    majority_acc: float
    disagreement_rate: float
    avg_optimizer_cost_usd: float
    n_items: int
    n_errored: int = 0
    errored_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name in ("acc_at_1", "majority_acc", "disagreement_rate"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name}={value} outside [0, 1]")
        if self.avg_optimizer_cost_usd < 0:
            raise ValueError("average cost must be non-negative")
        if self.n_items <= 0:
            raise ValueError("n_items must be positive")

    def to_dict(self) -> dict:
        return {
            "acc_at_1": self.acc_at_1,
            "majority_acc": self.majority_acc,
            "disagreement_rate": self.disagreement_rate,
            "avg_optimizer_cost_usd": self.avg_optimizer_cost_usd,
            "n_items": self.n_items,
            "n_errored": self.n_errored,
            "errored_ids": list(self.errored_ids),
        }

    def table(self) -> str:
        rows = [
            ("Items evaluated", f"{self.n_items}"),
            ("Items errored", f"{self.n_errored}"),
            ("Acc@1", f"{self.acc_at_1:.4f}"),
            ("Majority acc", f"{self.majority_acc:.4f}"),
            ("Disagreement", f"{self.disagreement_rate:.4f}"),
            ("Avg optimizer $", f"{self.avg_optimizer_cost_usd:.6f}"),
        ]
        width = max(len(label) for label, _ in rows)
        return "\n".join(f"{label:<{width}}  {value}" for label, value in rows)


def compute_metrics(
    records: Sequence[EvalRunRecord],
    items: Sequence[BenchmarkItem],
    avg_optimizer_cost_usd: float = 0.0,
    n_errored: int = 0,
    errored_ids: tuple[str, ...] = (),
) -> MetricsReport:
    """Fold per-item records into the report.  Pure and deterministic."""
    if not records:
        raise EvalError("no items were evaluated")
    by_id = {item.id: item for item in items}
    acc_hits = majority_hits = disagreements = 0
    for record in records:
        item = by_id[record.item_id]
        if record.correct_flags[0]:
            acc_hits += 1
        if is_correct(majority_answer(record.normalized), item):
            majority_hits += 1
        if len(set(record.normalized)) > 1:
            disagreements += 1
    n = len(records)
    return MetricsReport(
        acc_at_1=acc_hits / n,
        majority_acc=majority_hits / n,
        disagreement_rate=disagreements / n,
        avg_optimizer_cost_usd=avg_optimizer_cost_usd,
        n_items=n,
        n_errored=n_errored,
        errored_ids=errored_ids,
    )


def _eval_one(
    item: BenchmarkItem,
    optimize: bool,
    pipeline_config: PipelineConfig | None,
    target_backend: Backend,
    k: int,
    base_seed: int,
    temperature: float,
    ledger: UsageLedger,
) -> EvalRunRecord:
    text = item.question
    if optimize:
        if pipeline_config is None:
            raise EvalError("optimize=True requires a pipeline config")
        disambiguated, _ = disambiguate(item.question, pipeline_config, ledger)
        text = disambiguated.final_text
    samples: list[str] = []
    for j in range(k):
        response = chat(
            target_backend,
            ChatRequest(
                model=target_backend.config.model,
                messages=(user(text),),
                temperature=temperature,
                seed=base_seed + j,
            ),
            Role.TARGET,
            ledger,
        )
        samples.append(response.text)
    normalized = tuple(normalize_answer(s) for s in samples)
    return EvalRunRecord(
        item_id=item.id,
        samples=tuple(samples),
        normalized=normalized,
        correct_flags=tuple(is_correct(n, item) for n in normalized),
        seeds_used=tuple(base_seed + j for j in range(k)),
    )


def run_eval(
    items: Sequence[BenchmarkItem],
    optimize: bool,
    pipeline_config: PipelineConfig | None,
    target_backend: Backend,
    ledger: UsageLedger,
    k: int = 5,
    base_seed: int = 2025,
    temperature: float = 0.2,
    parallelism: int = 4,
) -> tuple[list[EvalRunRecord], MetricsReport]:
    """Evaluate every item with k sampled target calls (seeds base..base+k-1).

    When ``optimize`` is set, each question first runs through the
    disambiguation flow and the target sees the final text; optimizer spend is
    averaged over evaluated items.  Per-item backend failures exclude the item
    and are reported, not scored.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not items:
        raise EvalError("no benchmark items supplied")
    cost_before = ledger.subtotal(Role.OPTIMIZER)
    outcomes: dict[str, EvalRunRecord | Exception] = {}

    def work(item: BenchmarkItem) -> tuple[str, EvalRunRecord | Exception]:
        try:
            return item.id, _eval_one(
                item, optimize, pipeline_config, target_backend, k, base_seed, temperature, ledger
            )
        except (ClientError, PipelineError) as exc:
            return item.id, exc

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        for item_id, outcome in pool.map(work, items):
            outcomes[item_id] = outcome

    records = [
        outcomes[item.id] for item in sorted(items, key=lambda i: i.id)
        if isinstance(outcomes[item.id], EvalRunRecord)
    ]
    errored = tuple(
        item.id for item in sorted(items, key=lambda i: i.id)
        if not isinstance(outcomes[item.id], EvalRunRecord)
    )
    if not records:
        raise EvalError(f"every item failed; first error: {outcomes[errored[0]]}")
    avg_cost = (ledger.subtotal(Role.OPTIMIZER) - cost_before) / len(records)
    report = compute_metrics(
        records, items, avg_optimizer_cost_usd=avg_cost, n_errored=len(errored), errored_ids=errored
    )
    return records, report


def write_records(records: Iterable[EvalRunRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")


def augment_item(
    item: BenchmarkItem, rewriter_backend: Backend, ledger: UsageLedger
) -> BenchmarkItem:
    """Rewrite one question into a more ambiguous but still solvable variant.

    The gold answer is carried over unchanged and the id gains an "-amb"
    suffix.

    Raises:
        RewriteEmpty: the rewriter returned nothing usable.
    """
    rendered = render(TemplateId.AUGMENT, {"Q": item.question})
    response = chat(
        rewriter_backend,
        ChatRequest(
            model=rewriter_backend.config.model,
            messages=(user(rendered.text),),
            temperature=0.2,
        ),
        Role.OPTIMIZER,
        ledger,
    )
    rewritten = response.text.strip()
    if not rewritten:
        raise RewriteEmpty(f"rewriter returned empty text for item {item.id!r}")
    return BenchmarkItem(
        id=item.id + "-amb",
        question=rewritten,
        answer=item.answer,
        choices=item.choices,
    )

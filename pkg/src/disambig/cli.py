"""Command-line entry point: disambiguate, eval, augment, and attn subcommands.

Exit codes: 0 on success, 1 on operational errors, 2 when a command completed
but produced partial data (errored eval items, skipped augmentations).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .attention import (
    AttentionError,
    category_reallocation,
    build_focus_spec,
    entropy_focus_rows,
    layerwise_focus_curve,
    load_export,
    write_categories_csv,
    write_layer_curve_csv,
    write_points_csv,
)
from .clients import ClientError, UsageLedger
from .config import AppConfig, ConfigError, load_config
from .evaluation import (
    BenchmarkError,
    EvalError,
    RewriteEmpty,
    augment_item,
    load_benchmark,
    run_eval,
    write_benchmark,
    write_records,
)
from .pipeline import PipelineError, disambiguate
from .prompts import TemplateError

_OPERATIONAL_ERRORS = (
    ClientError,
    PipelineError,
    BenchmarkError,
    EvalError,
    ConfigError,
    TemplateError,
    AttentionError,
    FileNotFoundError,
    ValueError,
)


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {value!r}")


def _parse_span(value: str) -> tuple[int, int]:
    try:
        start_text, end_text = value.split(":", 1)
        return int(start_text), int(end_text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected START:END, got {value!r}") from exc


def _read_prompt(args: argparse.Namespace) -> str:
    if args.prompt is not None:
        return args.prompt
    return Path(args.prompt_file).read_text(encoding="utf-8").rstrip("\n")


def cmd_disambiguate(args: argparse.Namespace) -> int:
    app = load_config(args.config)
    ledger = UsageLedger()
    prompt = _read_prompt(args)
    result, trace = disambiguate(prompt, app.pipeline_config(), ledger)
    if args.trace_out:
        Path(args.trace_out).write_text(
            json.dumps(trace.to_dict(), ensure_ascii=False, indent=2), encoding="utf-8"
        )
    print(result.final_text)
    return 0


def _eval_once(
    app: AppConfig, items, optimize: bool, base_seed: int, out_dir: Path, suffix: str
) -> int:
    ledger = UsageLedger()
    pipeline_config = app.pipeline_config() if optimize else None
    records, report = run_eval(
        items,
        optimize=optimize,
        pipeline_config=pipeline_config,
        target_backend=app.require_target().build(),
        ledger=ledger,
        k=app.eval.k,
        base_seed=base_seed,
        parallelism=app.eval.parallelism,
    )
    write_records(records, out_dir / f"records{suffix}.jsonl")
    (out_dir / f"report{suffix}.json").write_text(
        json.dumps(report.to_dict(), indent=2), encoding="utf-8"
    )
    print(report.table())
    if report.n_errored:
        print(f"warning: {report.n_errored} item(s) errored and were excluded", file=sys.stderr)
    return report.n_errored


def cmd_eval(args: argparse.Namespace) -> int:
    app = load_config(args.config)
    items = load_benchmark(args.bench)
    if args.limit is not None:
        items = items[: args.limit]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    total_errored = 0
    if args.repeat <= 1:
        total_errored = _eval_once(app, items, args.optimize, app.eval.base_seed, out_dir, "")
    else:
        # Repeats shift the seed window by k so the sample draws differ.
        for repeat in range(args.repeat):
            base_seed = app.eval.base_seed + repeat * app.eval.k
            print(f"--- repeat {repeat + 1}/{args.repeat} (base seed {base_seed}) ---")
            total_errored += _eval_once(
                app, items, args.optimize, base_seed, out_dir, f"_r{repeat}"
            )
    return 2 if total_errored else 0


def cmd_augment(args: argparse.Namespace) -> int:
    app = load_config(args.config)
    items = load_benchmark(args.bench)
    if args.limit is not None:
        items = items[: args.limit]
    ledger = UsageLedger()
    rewriter = app.require_rewriter().build()
    augmented = []
    flagged: list[str] = []
    for item in items:
        try:
            augmented.append(augment_item(item, rewriter, ledger))
        except RewriteEmpty:
            flagged.append(item.id)
    write_benchmark(augmented, args.out)
    print(f"augmented {len(augmented)}/{len(items)} items -> {args.out}")
    if flagged:
        print(f"warning: empty rewrites for: {', '.join(flagged)}", file=sys.stderr)
        return 2
    return 0


def cmd_attn_compare(args: argparse.Namespace) -> int:
    base = load_export(args.base)
    optimized = load_export(args.optimized)
    spans = [_parse_span(s) for s in args.targets]
    base_spec = build_focus_spec(base, spans)
    optimized_spec = build_focus_spec(optimized, spans)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_layer_curve_csv(
        out_dir / "layer_focus.csv",
        {
            "base": layerwise_focus_curve(base, base_spec),
            "optimized": layerwise_focus_curve(optimized, optimized_spec),
        },
    )
    realloc = category_reallocation(base, optimized, base_spec, optimized_spec)
    write_categories_csv(out_dir / "categories.csv", realloc)
    write_points_csv(out_dir / "points_base.csv", entropy_focus_rows(base, base_spec))
    write_points_csv(
        out_dir / "points_optimized.csv", entropy_focus_rows(optimized, optimized_spec)
    )
    for category, (_m_base, _m_opt, delta) in realloc.items():
        print(f"{category.value:<8} delta {delta:+.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="disambig",
        description="Resolve semantic ambiguity in a prompt before model inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_dis = sub.add_parser("disambiguate", help="rewrite one prompt and print the result")
    group = p_dis.add_mutually_exclusive_group(required=True)
    group.add_argument("--prompt", help="prompt text")
    group.add_argument("--prompt-file", help="file containing the prompt")
    p_dis.add_argument("--config", required=True, help="TOML config file")
    p_dis.add_argument("--trace-out", help="write the run trace as JSON")
    p_dis.set_defaults(func=cmd_disambiguate)

    p_eval = sub.add_parser("eval", help="run a benchmark against the target model")
    p_eval.add_argument("--bench", required=True, help="JSON-Lines benchmark file")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument(
        "--optimize", type=_parse_bool, default=True, metavar="BOOL",
        help="disambiguate each question first (default true)",
    )
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.add_argument("--limit", type=int, help="evaluate only the first N items")
    p_eval.add_argument("--repeat", type=int, default=1, help="independent repeats")
    p_eval.set_defaults(func=cmd_eval)

    p_aug = sub.add_parser("augment", help="rewrite benchmark questions ambiguously")
    p_aug.add_argument("--bench", required=True)
    p_aug.add_argument("--config", required=True)
    p_aug.add_argument("--out", required=True, help="augmented JSON-Lines file")
    p_aug.add_argument("--limit", type=int, help="augment only the first N items")
    p_aug.set_defaults(func=cmd_augment)

    p_attn = sub.add_parser("attn", help="attention export analysis")
    attn_sub = p_attn.add_subparsers(dest="attn_command", required=True)
    p_cmp = attn_sub.add_parser("compare", help="compare two attention exports")
    p_cmp.add_argument("--base", required=True, help="export for the original prompt")
    p_cmp.add_argument("--optimized", required=True, help="export for the rewritten prompt")
    p_cmp.add_argument(
        "--targets", required=True, nargs="+", metavar="START:END",
        help="target character spans in the original prompt",
    )
    p_cmp.add_argument("--out", required=True, help="output directory for CSV files")
    p_cmp.set_defaults(func=cmd_attn_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _OPERATIONAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

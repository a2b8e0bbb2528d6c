"""Command-line front end: one invocation, one export file."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .extract import ExtractorConfig, ExtractorError, extract_to_file


def _parse_span(value: str) -> tuple[int, int]:
    try:
        start_text, end_text = value.split(":", 1)
        start, end = int(start_text), int(end_text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected START:END, got {value!r}") from exc
    if end <= start:
        raise argparse.ArgumentTypeError(f"empty span {value!r}")
    return start, end


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attn-extract",
        description="Export attention rows of a causal language model to JSON.",
    )
    parser.add_argument("--model", required=True, help="model path or hub identifier")
    parser.add_argument("--prompt-file", required=True, help="file holding the prompt text")
    parser.add_argument(
        "--query-span", required=True, action="append", type=_parse_span,
        metavar="START:END", help="character range of a query token (repeatable)",
    )
    parser.add_argument("--head-mode", choices=("full", "mean"), default="full")
    parser.add_argument("--max-layers", type=int, help="export only the first N layers")
    parser.add_argument("--out", required=True, help="output JSON path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    prompt = Path(args.prompt_file).read_text(encoding="utf-8").rstrip("\n")
    config = ExtractorConfig(
        model_id=args.model,
        prompt=prompt,
        query_spans=tuple(args.query_span),
        head_mode=args.head_mode,
        max_layers=args.max_layers,
    )
    try:
        document = extract_to_file(config, args.out)
    except (ExtractorError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"wrote {args.out}: {document['layers']} layers x {document['heads']} heads, "
        f"{len(document['query_positions'])} query token(s)"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())

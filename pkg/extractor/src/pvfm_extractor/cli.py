"""Command-line driver.

Two subcommands: ``make-bundle`` builds a deterministic model bundle,
``extract`` runs it over images and writes one PVFM feature file each.
Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from .core import ExtractorError
from .extract import ExtractionJob, extract_features
from .model import load_bundle, make_bundle

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


def cmd_make_bundle(args: argparse.Namespace) -> int:
    make_bundle(
        Path(args.out), seed=args.seed, channels=args.channels, descriptor_dim=args.descriptor_dim
    )
    print(f"wrote model bundle (channels={args.channels}, dim={args.descriptor_dim}) to {args.out}")
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    job = ExtractionJob(
        image_paths=tuple(Path(p) for p in args.images),
        out_dir=Path(args.out_dir),
        descriptor_dim=args.descriptor_dim,
        max_features=args.max_features,
        score_threshold=args.score_threshold,
    )
    bundle = load_bundle(Path(args.bundle))
    summary = extract_features(job, bundle)
    for result in summary.results:
        if result.skipped is not None:
            print(f"warning: skipped {result.image_path}: {result.skipped}", file=sys.stderr)
        else:
            print(f"{result.out_path}: {result.feature_count} features")
    print(f"wrote {len(summary.written)} of {len(summary.results)} images to {args.out_dir}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D102 - argparse hook
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="pvfm-extract",
        description="Extract attentive CNN local features from images into PVFM files.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-bundle", help="build a deterministic model bundle")
    p.add_argument("--out", required=True, help="bundle file to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=128, help="backbone output channels")
    p.add_argument("--descriptor-dim", type=int, default=40, help="projected descriptor dim")
    p.set_defaults(func=cmd_make_bundle)

    p = sub.add_parser("extract", help="write one PVFM feature file per image")
    p.add_argument("images", nargs="+", help="input image paths (unique basenames)")
    p.add_argument("--bundle", required=True, help="model bundle from make-bundle")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--descriptor-dim", type=int, default=40)
    p.add_argument("--max-features", type=int, default=200, help="keep at most this many per image")
    p.add_argument("--score-threshold", type=float, default=0.75, help="attention score cutoff")
    p.set_defaults(func=cmd_extract)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExtractorError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())

"""Command-line entry point: export-images and export-text subcommands."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import InvalidData, IoError, TipExportError
from .export import PROMPT_MODES, ExportJob, export_image_features, export_text_classifier


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tipexport",
        description="Export image embeddings and prompt-based text classifiers "
        "as TIPEMB files.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("export-images", help="encode a class-per-folder image split")
    p.add_argument("--root", required=True, help="dataset root directory")
    p.add_argument("--split", required=True, help="split folder name under root")
    p.add_argument("--backbone", required=True, help="backbone identifier from the allow-list")
    p.add_argument("--out", required=True, help="output TIPEMB path")
    p.add_argument("--batch", type=int, default=64, help="encoder batch size")

    p = sub.add_parser("export-text", help="encode per-class prompt ensembles")
    p.add_argument("--classes-file", required=True, help="text file, one class name per line")
    p.add_argument("--prompts", choices=PROMPT_MODES, default="ensemble7")
    p.add_argument("--backbone", required=True)
    p.add_argument("--out", required=True)

    return parser


def read_class_names(path) -> tuple[str, ...]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    names = tuple(line.strip() for line in text.splitlines() if line.strip())
    if not names:
        raise InvalidData(f"no class names in {path}")
    return names


def cmd_export_images(args) -> int:
    if args.batch < 1:
        print("usage error: --batch must be >= 1", file=sys.stderr)
        return 2
    job = ExportJob(root=args.root, split=args.split, backbone=args.backbone, out=args.out)
    path = export_image_features(job, batch_size=args.batch)
    print(f"wrote {path}")
    return 0


def cmd_export_text(args) -> int:
    names = read_class_names(args.classes_file)
    path = export_text_classifier(names, args.prompts, args.backbone, args.out)
    print(f"wrote {path} ({len(names)} classes, prompts={args.prompts})")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    handler = {"export-images": cmd_export_images, "export-text": cmd_export_text}[args.command]
    try:
        return handler(args)
    except TipExportError as exc:
        print(f"code={exc.code} msg={exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

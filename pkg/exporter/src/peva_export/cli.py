"""peva-export: encode rendered view images and category prompts into PEVF
containers plus a manifest the recognition engine consumes directly."""

from __future__ import annotations

import argparse
import sys

from .export import run_export

TEMPLATES = {
    "photo": "A photo of {CLASS}",
    "project": "A project view of {CLASS}",
    "project-cad": "A project view of 3D CAD model of {CLASS}",
    "side-cad": "A side view of 3D CAD model of {CLASS}",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peva-export",
        description="export multi-view image and prompt features to PEVF containers")
    parser.add_argument("--images", required=True,
                        help="image root: <root>/<category>/<shape>/<view images>")
    parser.add_argument("--categories", required=True,
                        help="text file with one category name per line, in label order")
    parser.add_argument("--template", default=TEMPLATES["side-cad"],
                        help="prompt template with a {CLASS} slot, or one of: "
                             + ", ".join(TEMPLATES))
    parser.add_argument("--backbone", default="toy:32",
                        help="toy:<dim>, hf:<model-id> or openclip:<arch>/<pretrained>")
    parser.add_argument("--out-views", required=True)
    parser.add_argument("--out-prompts", required=True)
    parser.add_argument("--manifest", default=None)
    parser.add_argument("--split-name", default="test")
    parser.add_argument("--strict", action="store_true",
                        help="abort on unreadable images instead of skipping")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    template = TEMPLATES.get(args.template, args.template)
    try:
        job = run_export(args.images, args.categories, template, args.backbone,
                         args.out_views, args.out_prompts, args.manifest,
                         strict=args.strict, split_name=args.split_name)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, (ValueError, RuntimeError)) else 3
    print(f"exported with {job.backbone.name} (dim {job.backbone.dim}); "
          f"{len(job.warnings)} warnings")
    return 0


if __name__ == "__main__":
    sys.exit(main())

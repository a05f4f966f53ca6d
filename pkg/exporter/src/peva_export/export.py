"""Walk a rendered-view image tree, encode everything, emit PEVF containers.

Expected layout: one directory per category under the image root, one
directory per shape inside it, view images sorted by filename:

    root/<category>/<shape_id>/<view>.png

Labels follow the category-list order; shapes and views are exported in
sorted order so the output is deterministic for a given tree.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

from .backbones import Backbone, resolve
from .pevf import prompts_container, views_container, write_manifest

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


@dataclass
class ExportJob:
    image_root: Path
    categories: list[str]
    template: str
    backbone: Backbone
    strict: bool = False
    split_name: str = "test"
    warnings: list[str] = field(default_factory=list)

    def prompt_for(self, category: str) -> str:
        if "{CLASS}" not in self.template:
            raise ValueError("template must contain a {CLASS} slot")
        return self.template.replace("{CLASS}", category)


def load_categories(path: str | Path) -> list[str]:
    names = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    if len(names) < 2:
        raise ValueError(f"{path}: need at least two category names")
    if len(set(names)) != len(names):
        raise ValueError(f"{path}: duplicate category names")
    return names


def _shape_dirs(job: ExportJob, category: str) -> list[Path]:
    cat_dir = job.image_root / category
    if not cat_dir.is_dir():
        raise FileNotFoundError(f"missing category directory {cat_dir}")
    return sorted(p for p in cat_dir.iterdir() if p.is_dir())


def _view_files(shape_dir: Path) -> list[Path]:
    return sorted(p for p in shape_dir.iterdir()
                  if p.suffix.lower() in IMAGE_SUFFIXES)


def export_views(job: ExportJob) -> bytes:
    """Encode every shape's views; returns the container bytes."""
    records = []
    for label, category in enumerate(job.categories):
        for shape_dir in _shape_dirs(job, category):
            files = _view_files(shape_dir)
            if not files:
                message = f"{shape_dir}: no view images"
                if job.strict:
                    raise FileNotFoundError(message)
                job.warnings.append(message)
                continue
            try:
                features = job.backbone.encode_images([str(f) for f in files])
            except OSError as exc:
                message = f"{shape_dir}: unreadable view image ({exc})"
                if job.strict:
                    raise
                job.warnings.append(message)
                continue
            records.append((f"{category}/{shape_dir.name}", label, features))
    for message in job.warnings:
        print(f"warning: {message}", file=sys.stderr)
    return views_container(records, job.backbone.dim, job.backbone.name)


def export_prompts(job: ExportJob) -> bytes:
    """Encode one prompt per category, rows in category order."""
    prompts = [job.prompt_for(c) for c in job.categories]
    features = job.backbone.encode_texts(prompts)
    return prompts_container(job.categories, features, job.backbone.name)


def run_export(image_root: str | Path, categories_path: str | Path, template: str,
               backbone_spec: str, out_views: str | Path, out_prompts: str | Path,
               manifest_path: str | Path | None, strict: bool = False,
               split_name: str = "test") -> ExportJob:
    job = ExportJob(
        image_root=Path(image_root),
        categories=load_categories(categories_path),
        template=template,
        backbone=resolve(backbone_spec),
        strict=strict,
        split_name=split_name,
    )
    Path(out_views).write_bytes(export_views(job))
    Path(out_prompts).write_bytes(export_prompts(job))
    if manifest_path is not None:
        manifest_path = Path(manifest_path)
        root = manifest_path.parent
        write_manifest(
            manifest_path,
            categories=job.categories,
            template=template,
            splits={split_name: str(Path(out_views).resolve().relative_to(root.resolve()))
                    if Path(out_views).resolve().is_relative_to(root.resolve())
                    else str(Path(out_views).resolve())},
            prompts=str(Path(out_prompts).resolve().relative_to(root.resolve()))
            if Path(out_prompts).resolve().is_relative_to(root.resolve())
            else str(Path(out_prompts).resolve()),
        )
    return job

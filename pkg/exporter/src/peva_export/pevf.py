"""Writer for the engine's PEVF container format.

Implemented against the documented byte layout (little-endian integers,
binary32 payload), independently of the engine codebase:

    magic "PEVF" | version u32=1 | kind u8 | dim u32 | count u32
    | flags u8 (bit0 = rows L2-normalized) | tag u32+utf8
    kind 1 record: id u32+utf8 | label u32 | views u32 | views*dim f32
    kind 2 record: id u32+utf8 | dim f32
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PEVF"
VERSION = 1
KIND_VIEWS = 1
KIND_PROMPTS = 2


def _put_str(buf: io.BytesIO, text: str) -> None:
    raw = text.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _header(buf: io.BytesIO, kind: int, dim: int, count: int, tag: str) -> None:
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<B", kind))
    buf.write(struct.pack("<II", dim, count))
    buf.write(struct.pack("<B", 1))  # exported rows are always L2-normalized
    _put_str(buf, tag)


def views_container(records: list[tuple[str, int, np.ndarray]], dim: int,
                    tag: str) -> bytes:
    """records: (shape_id, label_index, unit-norm (M, dim) float array)."""
    if not records:
        raise ValueError("cannot write an empty views container")
    buf = io.BytesIO()
    _header(buf, KIND_VIEWS, dim, len(records), tag)
    for shape_id, label, views in records:
        if views.ndim != 2 or views.shape[1] != dim or views.shape[0] < 1:
            raise ValueError(f"shape {shape_id!r}: bad view matrix {views.shape}")
        _put_str(buf, shape_id)
        buf.write(struct.pack("<II", label, views.shape[0]))
        buf.write(np.ascontiguousarray(views, dtype="<f4").tobytes())
    return buf.getvalue()


def prompts_container(categories: list[str], features: np.ndarray, tag: str) -> bytes:
    if len(categories) < 2 or features.shape[0] != len(categories):
        raise ValueError("need >= 2 categories with one feature row each")
    buf = io.BytesIO()
    _header(buf, KIND_PROMPTS, features.shape[1], len(categories), tag)
    for name, row in zip(categories, features):
        _put_str(buf, name)
        buf.write(np.ascontiguousarray(row, dtype="<f4").tobytes())
    return buf.getvalue()


def write_manifest(path: str | Path, categories: list[str], template: str,
                   splits: dict[str, str], prompts: str) -> None:
    doc = {
        "categories": list(categories),
        "template": template,
        "splits": dict(splits),
        "prompts": prompts,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")

"""On-disk containers for view features, prompt features and checkpoints.

PEVF container layout (all integers little-endian, all floats binary32):

    magic   4 bytes  "PEVF"
    version u32      1
    kind    u8       1=views, 2=prompts, 3=named parameter tensors
    dim     u32      feature dimension D (for kind 3: the encoder I/O dim)
    count   u32      number of records, >= 1
    flags   u8       bit 0: payload rows are L2-normalized
    tag     u32 + bytes   UTF-8 free-form backbone tag

    per record, kind 1:  id(u32+bytes) label(u32) M(u32) M*D float32 row-major
    per record, kind 2:  id(u32+bytes, the category name) D float32
    per record, kind 3:  id(u32+bytes, the tensor name) ndim(u32) dims(u32*ndim) data float32

Floats are stored binary32; everything is computed in binary64 in memory, so
write->read->write round-trips are byte-identical. The manifest is a small
JSON file mapping split names to container paths and carrying the category
list, so the binary containers stay free of split-level metadata.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DegenerateInputError, FormatError

MAGIC = b"PEVF"
VERSION = 1
KIND_VIEWS = 1
KIND_PROMPTS = 2
KIND_PARAMS = 3


@dataclass
class ShapeRecord:
    shape_id: str
    label_index: int
    views: np.ndarray  # (M, D) float64 in memory


@dataclass
class FeatureSet:
    shapes: list[ShapeRecord]
    dim: int
    backbone_tag: str = ""
    normalized: bool = False

    def __len__(self) -> int:
        return len(self.shapes)

    def validate(self) -> None:
        if not self.shapes:
            raise DataError("feature set must contain at least one shape")
        for rec in self.shapes:
            if rec.views.ndim != 2 or rec.views.shape[1] != self.dim:
                raise DataError(
                    f"shape {rec.shape_id!r}: view matrix {rec.views.shape} does not match dim {self.dim}")
            if rec.views.shape[0] < 1:
                raise DataError(f"shape {rec.shape_id!r}: needs at least one view")
            if rec.label_index < 0:
                raise DataError(f"shape {rec.shape_id!r}: negative label index")
            if not np.isfinite(rec.views).all():
                raise DataError(f"shape {rec.shape_id!r}: non-finite view values")


@dataclass
class PromptBank:
    categories: list[str]
    features: np.ndarray  # (N, D) float64
    template: str = ""
    backbone_tag: str = ""
    normalized: bool = False

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def validate(self) -> None:
        if len(self.categories) < 2:
            raise DataError("prompt bank needs at least two categories")
        if self.features.ndim != 2 or self.features.shape[0] != len(self.categories):
            raise DataError(
                f"prompt bank: feature rows {self.features.shape} do not match "
                f"{len(self.categories)} categories")
        if not np.isfinite(self.features).all():
            raise DataError("prompt bank: non-finite feature values")


@dataclass
class ParamBundle:
    """Named parameter tensors for a checkpoint, written in name order."""
    tensors: dict[str, np.ndarray]
    dim: int
    backbone_tag: str = ""

    def validate(self) -> None:
        if not self.tensors:
            raise DataError("checkpoint must contain at least one tensor")
        for name, arr in self.tensors.items():
            if not np.isfinite(arr).all():
                raise DataError(f"checkpoint tensor {name!r}: non-finite values")


def l2_normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Rescale every row to unit Euclidean norm."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.sqrt((matrix * matrix).sum(axis=1))
    bad = np.nonzero(norms == 0.0)[0]
    if bad.size:
        raise DegenerateInputError(f"cannot normalize zero row {int(bad[0])}")
    return matrix / norms[:, None]


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------

def _put_str(buf: io.BytesIO, text: str) -> None:
    raw = text.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _put_f32(buf: io.BytesIO, arr: np.ndarray) -> None:
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _header(buf: io.BytesIO, kind: int, dim: int, count: int,
            normalized: bool, tag: str) -> None:
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<B", kind))
    buf.write(struct.pack("<II", dim, count))
    buf.write(struct.pack("<B", 1 if normalized else 0))
    _put_str(buf, tag)


def container_bytes(obj: FeatureSet | PromptBank | ParamBundle) -> bytes:
    """Serialize a container deterministically (same input, same bytes)."""
    obj.validate()
    buf = io.BytesIO()
    if isinstance(obj, FeatureSet):
        _header(buf, KIND_VIEWS, obj.dim, len(obj.shapes), obj.normalized, obj.backbone_tag)
        for rec in obj.shapes:
            _put_str(buf, rec.shape_id)
            buf.write(struct.pack("<II", rec.label_index, rec.views.shape[0]))
            _put_f32(buf, rec.views)
    elif isinstance(obj, PromptBank):
        _header(buf, KIND_PROMPTS, obj.dim, len(obj.categories), obj.normalized, obj.backbone_tag)
        for name, row in zip(obj.categories, obj.features):
            _put_str(buf, name)
            _put_f32(buf, row)
    elif isinstance(obj, ParamBundle):
        names = sorted(obj.tensors)
        _header(buf, KIND_PARAMS, obj.dim, len(names), False, obj.backbone_tag)
        for name in names:
            arr = obj.tensors[name]
            _put_str(buf, name)
            buf.write(struct.pack("<I", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            _put_f32(buf, arr)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    return buf.getvalue()


def write_container(obj: FeatureSet | PromptBank | ParamBundle, path: str | Path) -> None:
    Path(path).write_bytes(container_bytes(obj))


# ---------------------------------------------------------------------------
# reading
# ---------------------------------------------------------------------------

class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(
                f"truncated container: need {n} bytes, {len(self.raw) - self.pos} left",
                offset=self.pos)
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def string(self) -> str:
        n = self.u32()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 string: {exc}", offset=self.pos - n) from exc

    def f32(self, count: int) -> np.ndarray:
        data = self.take(4 * count)
        return np.frombuffer(data, dtype="<f4").astype(np.float64)


def read_container(path: str | Path) -> FeatureSet | PromptBank | ParamBundle:
    """Read back exactly what write_container produced; no normalization."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise FormatError("bad magic, not a PEVF container", offset=0)
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}", offset=4)
    kind = r.u8()
    if kind not in (KIND_VIEWS, KIND_PROMPTS, KIND_PARAMS):
        raise FormatError(f"unknown kind byte {kind}", offset=8)
    dim = r.u32()
    count = r.u32()
    if dim < 1:
        raise FormatError("dimension must be positive", offset=9)
    if count < 1:
        raise FormatError("record count must be positive", offset=13)
    normalized = bool(r.u8() & 1)
    tag = r.string()

    obj: FeatureSet | PromptBank | ParamBundle
    if kind == KIND_VIEWS:
        shapes = []
        for _ in range(count):
            shape_id = r.string()
            label = r.u32()
            m = r.u32()
            if m < 1:
                raise FormatError(f"shape {shape_id!r}: view count must be >= 1",
                                  offset=r.pos - 4)
            views = r.f32(m * dim).reshape(m, dim)
            shapes.append(ShapeRecord(shape_id, label, views))
        obj = FeatureSet(shapes, dim, backbone_tag=tag, normalized=normalized)
    elif kind == KIND_PROMPTS:
        categories = []
        rows = []
        for _ in range(count):
            categories.append(r.string())
            rows.append(r.f32(dim))
        obj = PromptBank(categories, np.array(rows), backbone_tag=tag, normalized=normalized)
    else:
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            name = r.string()
            ndim = r.u32()
            if ndim < 1 or ndim > 8:
                raise FormatError(f"tensor {name!r}: implausible rank {ndim}", offset=r.pos - 4)
            dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
            n = 1
            for d in dims:
                n *= d
            tensors[name] = r.f32(n).reshape(dims)
        obj = ParamBundle(tensors, dim, backbone_tag=tag)
    if r.pos != len(r.raw):
        raise FormatError(f"{len(r.raw) - r.pos} trailing bytes after last record", offset=r.pos)
    return obj


def load_feature_set(path: str | Path) -> FeatureSet:
    """Read a views container and L2-normalize rows unless already normalized."""
    obj = read_container(path)
    if not isinstance(obj, FeatureSet):
        raise DataError(f"{path}: expected a views container, found kind {type(obj).__name__}")
    if not obj.normalized:
        for rec in obj.shapes:
            rec.views = l2_normalize_rows(rec.views)
        obj.normalized = True
    return obj


def load_prompt_bank(path: str | Path, template: str = "") -> PromptBank:
    obj = read_container(path)
    if not isinstance(obj, PromptBank):
        raise DataError(f"{path}: expected a prompts container, found kind {type(obj).__name__}")
    if not obj.normalized:
        obj.features = l2_normalize_rows(obj.features)
        obj.normalized = True
    obj.template = template
    return obj


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class Manifest:
    categories: list[str]
    template: str
    splits: dict[str, Path]
    prompts: Path
    config: dict = field(default_factory=dict)

    def split(self, name: str) -> Path:
        if name not in self.splits:
            raise DataError(f"manifest has no split {name!r}; available: {sorted(self.splits)}")
        return self.splits[name]


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid manifest JSON: {exc}") from exc
    for key in ("categories", "template", "splits", "prompts"):
        if key not in doc:
            raise FormatError(f"{path}: manifest misses required key {key!r}")
    root = path.parent
    return Manifest(
        categories=list(doc["categories"]),
        template=str(doc["template"]),
        splits={name: root / p for name, p in doc["splits"].items()},
        prompts=root / doc["prompts"],
        config=dict(doc.get("config", {})),
    )


def write_manifest(path: str | Path, categories: list[str], template: str,
                   splits: dict[str, str], prompts: str,
                   config: dict | None = None) -> None:
    doc: dict = {
        "categories": list(categories),
        "template": template,
        "splits": dict(splits),
        "prompts": prompts,
    }
    if config:
        doc["config"] = config
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_dataset(manifest: Manifest, split: str) -> tuple[FeatureSet, PromptBank]:
    """Load a split plus the prompt bank and cross-validate them."""
    features = load_feature_set(manifest.split(split))
    bank = load_prompt_bank(manifest.prompts, template=manifest.template)
    if bank.categories != manifest.categories:
        raise DataError("prompt container categories do not match the manifest category order")
    if bank.dim != features.dim:
        raise DataError(
            f"feature dim {features.dim} does not match prompt dim {bank.dim}")
    n = len(bank.categories)
    for rec in features.shapes:
        if rec.label_index >= n:
            raise DataError(
                f"shape {rec.shape_id!r}: label {rec.label_index} out of range for {n} categories")
    return features, bank

"""Encoder backbones behind one tiny interface: images or texts in,
L2-normalized float feature rows out.

Specs are strings:

    toy:<dim>                   deterministic palette encoder for tests/demos
    hf:<model-id>               CLIP checkpoint via transformers
    openclip:<arch>/<pretrained>  open_clip model

The toy backbone maps an image's mean color and a prompt's trailing class
word onto the same direction, so exports of solid-color renders are exactly
classifiable; it needs no weights and no network.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

PALETTE = {
    "red": (220, 40, 40),
    "green": (40, 200, 60),
    "blue": (45, 65, 220),
    "yellow": (230, 220, 50),
    "cyan": (60, 210, 210),
    "magenta": (210, 60, 210),
    "white": (235, 235, 235),
    "black": (25, 25, 25),
    "orange": (235, 140, 40),
    "gray": (128, 128, 128),
}


class Backbone:
    name: str
    dim: int

    def encode_images(self, paths: list[str]) -> np.ndarray:
        raise NotImplementedError

    def encode_texts(self, prompts: list[str]) -> np.ndarray:
        raise NotImplementedError


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.sqrt((rows * rows).sum(axis=1, keepdims=True))
    if (norms == 0).any():
        raise ValueError("zero feature row cannot be normalized")
    return rows / norms


def _hash_direction(token: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    out = np.empty(dim)
    for i in range(dim):
        block = hashlib.sha256(digest + i.to_bytes(4, "little")).digest()
        out[i] = int.from_bytes(block[:8], "little") / 2**63 - 1.0
    return out / np.sqrt((out * out).sum())


class ToyBackbone(Backbone):
    """Palette lookup: mean image color and trailing prompt word meet on the
    same hashed unit direction. Deterministic, dependency-free."""

    def __init__(self, dim: int = 32):
        if dim < 8:
            raise ValueError("toy backbone needs dim >= 8")
        self.dim = dim
        self.name = f"toy:{dim}"
        self._directions = {word: _hash_direction(word, dim) for word in PALETTE}

    def _nearest_word(self, rgb: np.ndarray) -> str:
        best, best_d = None, None
        for word, ref in PALETTE.items():
            d = float(((rgb - np.asarray(ref)) ** 2).sum())
            if best_d is None or d < best_d:
                best, best_d = word, d
        return best

    def encode_images(self, paths: list[str]) -> np.ndarray:
        rows = np.empty((len(paths), self.dim))
        for i, path in enumerate(paths):
            with Image.open(path) as img:
                rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
            word = self._nearest_word(rgb.reshape(-1, 3).mean(axis=0))
            # mix in a small image-statistics component so distinct renders of
            # one class are near, not identical
            spread = _hash_direction(word + "#spread", self.dim)
            scale = float(rgb.std()) / 255.0
            rows[i] = self._directions[word] + 0.05 * scale * spread
        return _unit_rows(rows)

    def encode_texts(self, prompts: list[str]) -> np.ndarray:
        rows = np.empty((len(prompts), self.dim))
        for i, prompt in enumerate(prompts):
            token = prompt.strip().split()[-1].lower()
            base = self._directions.get(token, _hash_direction(token, self.dim))
            # the wording contributes a small component so different templates
            # stay distinguishable without disturbing the class alignment
            rows[i] = base + 0.02 * _hash_direction(prompt, self.dim)
        return _unit_rows(rows)


class HfClipBackbone(Backbone):
    """CLIP checkpoint through transformers; evaluation mode, no gradients."""

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise RuntimeError(
                "hf backbones need torch and transformers installed") from exc
        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_id).to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.device = device
        self.dim = int(self.model.config.projection_dim)
        self.name = f"hf:{model_id}"

    def encode_images(self, paths: list[str]) -> np.ndarray:
        torch = self._torch
        images = [Image.open(p).convert("RGB") for p in paths]
        inputs = self.processor(images=images, return_tensors="pt").to(self.device)
        with torch.no_grad():
            feats = self.model.get_image_features(**inputs)
        return _unit_rows(feats.cpu().double().numpy())

    def encode_texts(self, prompts: list[str]) -> np.ndarray:
        torch = self._torch
        inputs = self.processor(text=prompts, return_tensors="pt", padding=True).to(self.device)
        with torch.no_grad():
            feats = self.model.get_text_features(**inputs)
        return _unit_rows(feats.cpu().double().numpy())


class OpenClipBackbone(Backbone):
    """open_clip model, e.g. openclip:ViT-L-14/laion2b_s32b_b82k."""

    def __init__(self, spec: str, device: str = "cpu"):
        try:
            import open_clip
            import torch
        except ImportError as exc:
            raise RuntimeError(
                "openclip backbones need torch and open_clip_torch installed") from exc
        arch, _, pretrained = spec.partition("/")
        self._torch = torch
        self.model, _, self.preprocess = open_clip.create_model_and_transforms(
            arch, pretrained=pretrained or None, device=device)
        self.model.eval()
        self.tokenizer = open_clip.get_tokenizer(arch)
        self.device = device
        self.dim = int(self.model.text_projection.shape[1]) \
            if hasattr(self.model, "text_projection") else 512
        self.name = f"openclip:{spec}"

    def encode_images(self, paths: list[str]) -> np.ndarray:
        torch = self._torch
        batch = torch.stack([self.preprocess(Image.open(p).convert("RGB"))
                             for p in paths]).to(self.device)
        with torch.no_grad():
            feats = self.model.encode_image(batch)
        return _unit_rows(feats.cpu().double().numpy())

    def encode_texts(self, prompts: list[str]) -> np.ndarray:
        torch = self._torch
        tokens = self.tokenizer(prompts).to(self.device)
        with torch.no_grad():
            feats = self.model.encode_text(tokens)
        return _unit_rows(feats.cpu().double().numpy())


def resolve(spec: str) -> Backbone:
    kind, _, rest = spec.partition(":")
    if kind == "toy":
        return ToyBackbone(int(rest) if rest else 32)
    if kind == "hf":
        return HfClipBackbone(rest)
    if kind == "openclip":
        return OpenClipBackbone(rest)
    raise ValueError(f"unknown backbone spec {spec!r}; use toy:<dim>, "
                     f"hf:<model-id> or openclip:<arch>/<pretrained>")

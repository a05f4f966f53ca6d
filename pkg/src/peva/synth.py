"""Synthetic feature sets with controlled view quality.

Class prototypes are orthonormal directions on the unit sphere. Each prompt
sits at a chosen cosine to its prototype; informative views are noisy copies
of the prototype; degenerate views are pure isotropic noise, so their
similarity columns are flat and they earn low discriminative scores. This
gives a desk-scale dataset where weighting views by score should beat plain
averaging, and where the frozen aggregate is a useful distillation target.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityError, ConfigError
from .rng import Stream
from .store import (FeatureSet, PromptBank, ShapeRecord, write_container,
                    write_manifest)

SYNTH_TEMPLATE = "synthetic prototype of {CLASS}"


@dataclass
class SynthConfig:
    classes: int = 10
    views: int = 8
    dim: int = 64
    shots: int = 16
    test_per_class: int = 20
    prompt_alignment: float = 0.9
    view_noise: float = 0.3
    degenerate_fraction: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.classes < 2 or self.views < 1 or self.dim < 1:
            raise ConfigError("need >= 2 classes, >= 1 view, >= 1 dim")
        if self.shots < 1 or self.test_per_class < 1:
            raise ConfigError("need >= 1 train and test sample per class")
        if not 0.0 <= self.prompt_alignment <= 1.0:
            raise ConfigError("prompt_alignment must be in [0, 1]")
        if self.view_noise < 0.0:
            raise ConfigError("view_noise must be >= 0")
        if not 0.0 <= self.degenerate_fraction < 1.0:
            raise ConfigError("degenerate_fraction must be in [0, 1)")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.sqrt((v * v).sum())


def _orthonormal_prototypes(stream: Stream, n: int, dim: int) -> np.ndarray:
    """Gram-Schmidt over fresh Gaussian draws; redraw on near-dependence."""
    if dim < n:
        raise CapacityError(
            f"cannot place {n} orthogonal prototypes in {dim} dimensions")
    rows = np.empty((n, dim))
    count = 0
    while count < n:
        v = stream.normals(dim)
        for i in range(count):
            v -= np.dot(v, rows[i]) * rows[i]
        norm = float(np.sqrt((v * v).sum()))
        if norm < 1e-8:
            continue
        rows[count] = v / norm
        count += 1
    return rows


def generate(config: SynthConfig) -> tuple[FeatureSet, FeatureSet, PromptBank]:
    """Build (train set, test set, prompt bank), all unit-norm, one seed."""
    config.validate()
    stream = Stream(config.seed)
    protos = _orthonormal_prototypes(stream, config.classes, config.dim)

    rho = config.prompt_alignment
    ortho_part = np.sqrt(max(0.0, 1.0 - rho * rho))
    prompt_rows = np.empty_like(protos)
    for j in range(config.classes):
        while True:
            u = stream.normals(config.dim)
            u -= np.dot(u, protos[j]) * protos[j]
            norm = float(np.sqrt((u * u).sum()))
            if norm >= 1e-8:
                break
        prompt_rows[j] = rho * protos[j] + ortho_part * (u / norm)

    def make_shape(label: int, split: str, index: int) -> ShapeRecord:
        # Each view independently degenerates with the configured probability;
        # one informative view is always kept so a shape never loses all signal.
        views = np.empty((config.views, config.dim))
        degenerate = stream.doubles(config.views) < config.degenerate_fraction
        if degenerate.all():
            degenerate[0] = False
        for v in range(config.views):
            if degenerate[v]:
                views[v] = _unit(stream.normals(config.dim))
            else:
                views[v] = _unit(protos[label] + config.view_noise * stream.normals(config.dim))
        return ShapeRecord(f"{split}/class{label:02d}/{index:04d}", label, views)

    train = [make_shape(label, "train", i)
             for label in range(config.classes) for i in range(config.shots)]
    test = [make_shape(label, "test", i)
            for label in range(config.classes) for i in range(config.test_per_class)]

    categories = [f"class{j:02d}" for j in range(config.classes)]
    bank = PromptBank(categories, prompt_rows, template=SYNTH_TEMPLATE,
                      backbone_tag="synthetic", normalized=True)
    kwargs = dict(backbone_tag="synthetic", normalized=True)
    return (FeatureSet(train, config.dim, **kwargs),
            FeatureSet(test, config.dim, **kwargs),
            bank)


def write_dataset(config: SynthConfig, out_dir: str | Path) -> Path:
    """Generate and write containers plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test, bank = generate(config)
    write_container(train, out_dir / "train.pevf")
    write_container(test, out_dir / "test.pevf")
    write_container(bank, out_dir / "prompts.pevf")
    manifest_path = out_dir / "manifest.json"
    write_manifest(
        manifest_path,
        categories=bank.categories,
        template=bank.template,
        splits={"train": "train.pevf", "test": "test.pevf"},
        prompts="prompts.pevf",
    )
    return manifest_path

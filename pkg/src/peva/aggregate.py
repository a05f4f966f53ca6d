"""Prompt-guided view aggregation and zero-shot inference.

Given unit-norm prompt features (one per candidate category) and unit-norm
view features of one shape, each view gets a discriminative score: the gap
between its best prompt similarity and its mean prompt similarity. Softmax
over those scores yields aggregation weights, and the shape descriptor is
the weighted sum of its view features. Average pooling is kept alongside as
the baseline aggregator.

Everything here is plain numpy on frozen inputs; the gradient-carrying path
lives in the encoder/trainer modules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError

# Bare inner products of unit vectors live in [-1, 1]; a positive scale on the
# logits never changes the argmax but keeps cross-entropy gradients alive in
# the few-shot path. 100 is the usual contrastive-model convention.
DEFAULT_LOGIT_SCALE = 100.0


@dataclass
class AggregationResult:
    weights: np.ndarray      # (M,) simplex
    scores: np.ndarray       # (M,) max-minus-mean per view
    descriptor: np.ndarray   # (D,) weighted sum of views
    similarity: np.ndarray   # (N, M) prompt-view inner products


def _check_dims(prompts: np.ndarray, views: np.ndarray) -> None:
    if prompts.ndim != 2 or views.ndim != 2 or prompts.shape[1] != views.shape[1]:
        raise DimensionError(
            f"prompts {prompts.shape} and views {views.shape} must share the feature dim")


def similarity_matrix(prompts: np.ndarray, views: np.ndarray) -> np.ndarray:
    """S[i, j] = <prompt_i, view_j>."""
    _check_dims(prompts, views)
    return prompts @ views.T


def discriminative_scores(similarity: np.ndarray) -> np.ndarray:
    """Per view (column): best similarity minus mean similarity; always >= 0."""
    return similarity.max(axis=0) - similarity.mean(axis=0)


def aggregation_weights(scores: np.ndarray) -> np.ndarray:
    """Softmax over the per-view scores."""
    z = np.exp(scores - scores.max())
    return z / z.sum()


def aggregate_peva(prompts: np.ndarray, views: np.ndarray) -> AggregationResult:
    """Full prompt-enhanced aggregation of one shape's views."""
    _check_dims(prompts, views)
    s, alpha, w, f = kernels.peva_fused(
        np.ascontiguousarray(prompts, dtype=np.float64),
        np.ascontiguousarray(views, dtype=np.float64))
    return AggregationResult(weights=w, scores=alpha, descriptor=f, similarity=s)


def aggregate_average(views: np.ndarray) -> np.ndarray:
    """Baseline aggregator: arithmetic mean of the view features."""
    views = np.asarray(views, dtype=np.float64)
    if views.ndim != 2 or views.shape[0] < 1:
        raise DimensionError(f"need a nonempty (M, D) view matrix, got {views.shape}")
    return views.mean(axis=0)


def zero_shot_logits(prompts: np.ndarray, descriptor: np.ndarray,
                     scale: float = DEFAULT_LOGIT_SCALE) -> np.ndarray:
    """l[j] = scale * <prompt_j, descriptor>."""
    if prompts.ndim != 2 or descriptor.ndim != 1 or prompts.shape[1] != descriptor.shape[0]:
        raise DimensionError(
            f"prompts {prompts.shape} incompatible with descriptor {descriptor.shape}")
    if scale <= 0:
        raise ValueError("logit scale must be positive")
    return scale * (prompts @ descriptor)


def predict(logits: np.ndarray) -> int:
    """Argmax with lowest-index tie-break."""
    return int(np.argmax(logits))

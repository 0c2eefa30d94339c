"""Probability heads over prototype banks.

All three heads compare an L2-normalized query against L2-normalized
prototypes by cosine similarity and softmax the per-class logits at a
shared temperature:

* visual head    -- logit_i = sum_k cos(x, visual[i, k]) / t
* text-max head  -- logit_i = max_j cos(x, textual[i, j]) / t
* text-avg head  -- logit_i = sum_j cos(x, textual[i, j]) / (t * J)

Cosine is the true cosine in [-1, 1]; ``clamp_cosine`` switches on a
clamped [0, 1] variant for comparison runs. Fusion is the plain weighted
sum of the three heads; the prediction is its argmax with ties broken
toward the lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ValidationError
from .prototypes import PrototypeBank


@dataclass(frozen=True)
class EnsembleWeights:
    """Non-negative fusion weights for the visual, text-max and text-avg heads."""

    visual: float = 0.3
    text_max: float = 0.5
    text_avg: float = 0.5

    def __post_init__(self) -> None:
        if self.visual < 0 or self.text_max < 0 or self.text_avg < 0:
            raise ValidationError("ensemble weights must be non-negative")
        if self.visual + self.text_max + self.text_avg <= 0:
            raise ValidationError("at least one ensemble weight must be positive")


@dataclass(frozen=True)
class ScoringConfig:
    temperature: float = 0.01
    ensemble: EnsembleWeights = field(default_factory=EnsembleWeights)
    clamp_cosine: bool = False

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise ValidationError(f"temperature must be positive, got {self.temperature}")


@dataclass(frozen=True)
class ScoreVector:
    """Per-class probabilities from each head plus their fusion."""

    visual_probs: np.ndarray
    text_max_probs: np.ndarray
    text_avg_probs: np.ndarray
    fused_probs: np.ndarray
    predicted_class: int


def _normalized_query(x: np.ndarray) -> np.ndarray:
    q = np.asarray(x, dtype=np.float64)
    if q.ndim != 1:
        raise ValidationError(f"query must be a vector, got shape {q.shape}")
    norm = np.linalg.norm(q)
    if norm == 0.0:
        raise ValidationError("query vector has zero norm; cosine undefined")
    if not np.isfinite(q).all():
        raise ValidationError("query vector contains non-finite values")
    return q / norm


def _normalized_prototypes(tensor: np.ndarray, modality: str) -> np.ndarray:
    protos = np.asarray(tensor, dtype=np.float64)
    norms = np.linalg.norm(protos, axis=2)
    if (norms == 0.0).any():
        cls, idx = np.argwhere(norms == 0.0)[0]
        raise DataError(f"{modality} prototype {int(idx)} of class {int(cls)} has zero norm")
    return protos / norms[:, :, None]


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _cosines(queries: np.ndarray, protos_hat: np.ndarray, clamp: bool) -> np.ndarray:
    """Cosine tensor (n, M, P) between unit queries and unit prototypes."""
    m, p, d = protos_hat.shape
    cos = queries @ protos_hat.reshape(m * p, d).T
    cos = cos.reshape(queries.shape[0], m, p)
    if clamp:
        cos = np.clip(cos, 0.0, 1.0)
    return cos


def score_visual(
    x: np.ndarray, visual: np.ndarray, temperature: float, *, clamp_cosine: bool = False
) -> np.ndarray:
    """Visual-head probabilities: softmax of summed per-class cosines."""
    cos = _cosines(_normalized_query(x)[None, :], _normalized_prototypes(visual, "visual"), clamp_cosine)
    return _softmax(cos.sum(axis=2) / temperature)[0]


def score_text_max(
    x: np.ndarray, textual: np.ndarray, temperature: float, *, clamp_cosine: bool = False
) -> np.ndarray:
    """Text-max-head probabilities: softmax of each class's best prompt cosine."""
    cos = _cosines(_normalized_query(x)[None, :], _normalized_prototypes(textual, "textual"), clamp_cosine)
    return _softmax(cos.max(axis=2) / temperature)[0]


def score_text_avg(
    x: np.ndarray, textual: np.ndarray, temperature: float, *, clamp_cosine: bool = False
) -> np.ndarray:
    """Text-avg-head probabilities: softmax of per-class cosine sums scaled
    by temperature times the per-class prompt count."""
    cos = _cosines(_normalized_query(x)[None, :], _normalized_prototypes(textual, "textual"), clamp_cosine)
    prompts_per_class = cos.shape[2]
    return _softmax(cos.sum(axis=2) / (temperature * prompts_per_class))[0]


def fuse(
    visual_probs: np.ndarray,
    text_max_probs: np.ndarray,
    text_avg_probs: np.ndarray,
    weights: EnsembleWeights,
) -> tuple[np.ndarray, int]:
    """Weighted sum of the three heads and its argmax (ties: lowest index)."""
    fused = (
        weights.visual * np.asarray(visual_probs, dtype=np.float64)
        + weights.text_max * np.asarray(text_max_probs, dtype=np.float64)
        + weights.text_avg * np.asarray(text_avg_probs, dtype=np.float64)
    )
    return fused, int(fused.argmax())


def score_query(x: np.ndarray, bank: PrototypeBank, config: ScoringConfig) -> ScoreVector:
    """All heads plus fusion for a single query vector."""
    return score_batch(np.asarray(x, dtype=np.float64)[None, :], bank, config)[0]


def score_batch(
    queries: np.ndarray, bank: PrototypeBank, config: ScoringConfig
) -> list[ScoreVector]:
    """Score every row of ``queries`` (n, D); equal to n single-query calls."""
    pv, pm, pa, fused, pred = score_arrays(queries, bank, config)
    return [
        ScoreVector(pv[i], pm[i], pa[i], fused[i], int(pred[i]))
        for i in range(queries.shape[0])
    ]


def score_arrays(
    queries: np.ndarray, bank: PrototypeBank, config: ScoringConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized scoring: head probabilities, fused scores and predictions
    as (n, M) / (n,) arrays. The building block behind :func:`score_batch`
    and the evaluation pipeline."""
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2:
        raise ValidationError(f"queries must be (n, d), got shape {q.shape}")
    if q.shape[1] != bank.dim:
        raise ValidationError(f"query dim {q.shape[1]} != bank dim {bank.dim}")
    if not np.isfinite(q).all():
        raise ValidationError("queries contain non-finite values")
    norms = np.linalg.norm(q, axis=1)
    if (norms == 0.0).any():
        raise ValidationError(f"query row {int(np.argmax(norms == 0.0))} has zero norm")
    q = q / norms[:, None]

    cos_v = _cosines(q, _normalized_prototypes(bank.visual, "visual"), config.clamp_cosine)
    cos_t = _cosines(q, _normalized_prototypes(bank.textual, "textual"), config.clamp_cosine)
    t = config.temperature
    prompts_per_class = cos_t.shape[2]
    pv = _softmax(cos_v.sum(axis=2) / t)
    pm = _softmax(cos_t.max(axis=2) / t)
    pa = _softmax(cos_t.sum(axis=2) / (t * prompts_per_class))
    w = config.ensemble
    fused = w.visual * pv + w.text_max * pm + w.text_avg * pa
    return pv, pm, pa, fused, fused.argmax(axis=1)

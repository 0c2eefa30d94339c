"""Evaluation settings, macro metrics, the KNN baseline, and a synthetic
desk-scale benchmark generator.

Settings:

* ``fully_supervised`` / ``few_shot`` -- trained bank, fused prediction.
* ``training_free_visual`` -- untrained bank, visual head only (labels were
  used to group prototypes, but nothing was gradient-trained).
* ``zero_shot_text`` -- textual prototypes only; prediction is the argmax
  of the renormalized text-max / text-avg blend. Training images are never
  touched.
* ``knn`` -- majority vote over the nearest train features by cosine
  distance; neighbor ties break by row order, vote ties by smallest label.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .prototypes import PrototypeBank
from .rng import stream
from .scoring import ScoringConfig, score_arrays
from .store import EmbeddingSet, PromptSet, Split

MODES = ("fully_supervised", "few_shot", "training_free_visual", "zero_shot_text", "knn")

_CENTER_STREAM = 0
_MODE_PICK_STREAM = 1
_FEATURE_NOISE_STREAM = 2
_PROMPT_NOISE_STREAM = 3


@dataclass(frozen=True)
class ModeSpec:
    """Evaluation setting, with its parameter where one applies."""

    kind: str
    shots: int | None = None
    knn_n: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in MODES:
            raise ValidationError(f"unknown mode {self.kind!r}; expected one of {MODES}")
        if self.kind == "few_shot" and (self.shots is None or self.shots < 1):
            raise ValidationError("few_shot mode needs shots >= 1")
        if self.kind == "knn" and (self.knn_n is None or self.knn_n < 1):
            raise ValidationError("knn mode needs a neighbor count >= 1")

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.shots is not None:
            out["shots"] = self.shots
        if self.knn_n is not None:
            out["knn_n"] = self.knn_n
        return out


@dataclass(frozen=True)
class MetricBundle:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    flags: tuple[str, ...]


def compute_metrics(confusion: np.ndarray) -> MetricBundle:
    """Accuracy and macro precision/recall/F1 from a confusion matrix.

    Rows are true classes, columns predictions. Classes with zero predicted
    positives (or zero true rows) score 0 on the affected metric and are
    flagged rather than dropped; macro F1 is the mean of per-class F1
    scores, not the F1 of the macro precision/recall pair.
    """
    conf = np.asarray(confusion)
    if conf.ndim != 2 or conf.shape[0] != conf.shape[1] or conf.shape[0] == 0:
        raise ValidationError(f"confusion matrix must be square and non-empty, got {conf.shape}")
    if (conf < 0).any() or not np.issubdtype(conf.dtype, np.integer):
        raise ValidationError("confusion matrix must hold non-negative integers")
    total = int(conf.sum())
    if total == 0:
        raise ValidationError("confusion matrix is empty (no samples)")

    tp = np.diag(conf).astype(np.float64)
    predicted = conf.sum(axis=0).astype(np.float64)
    actual = conf.sum(axis=1).astype(np.float64)

    flags: list[str] = []
    precision = np.zeros(conf.shape[0])
    recall = np.zeros(conf.shape[0])
    for i in range(conf.shape[0]):
        if predicted[i] > 0:
            precision[i] = tp[i] / predicted[i]
        else:
            flags.append(f"class {i}: no predicted positives, precision set to 0")
        if actual[i] > 0:
            recall[i] = tp[i] / actual[i]
        else:
            flags.append(f"class {i}: no true samples, recall set to 0")
    denom = precision + recall
    f1 = np.where(denom > 0, 2.0 * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)

    return MetricBundle(
        accuracy=float(tp.sum() / total),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        precision=tuple(precision),
        recall=tuple(recall),
        f1=tuple(f1),
        flags=tuple(flags),
    )


@dataclass
class EvalReport:
    mode: dict
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: list[dict]
    confusion: np.ndarray
    config: dict
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class": self.per_class,
            "confusion": self.confusion.tolist(),
            "config": self.config,
            "flags": self.flags,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    def per_class_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "precision", "recall", "f1", "support"])
        for row in self.per_class:
            writer.writerow(
                [row["class"], row["precision"], row["recall"], row["f1"], row["support"]]
            )
        return buf.getvalue()

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = [row["class"] for row in self.per_class]
        writer.writerow(["true\\pred", *names])
        for name, counts in zip(names, self.confusion):
            writer.writerow([name, *counts.tolist()])
        return buf.getvalue()


def knn_predict(
    train_features: np.ndarray,
    train_labels: np.ndarray,
    queries: np.ndarray,
    neighbors: int,
    class_count: int,
) -> np.ndarray:
    """Majority label among the ``neighbors`` nearest train rows by cosine
    distance. Distance ties keep train row order; vote ties take the
    smallest label."""
    if neighbors < 1:
        raise ValidationError("neighbor count must be >= 1")
    ref = np.asarray(train_features, dtype=np.float64)
    ref = ref / np.linalg.norm(ref, axis=1, keepdims=True)
    q = np.asarray(queries, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    dist = 1.0 - q @ ref.T
    n = min(neighbors, ref.shape[0])
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :n]
    votes = np.asarray(train_labels)[nearest]
    out = np.empty(q.shape[0], dtype=np.int64)
    for i in range(q.shape[0]):
        out[i] = np.bincount(votes[i], minlength=class_count).argmax()
    return out


def evaluate(
    test_set: EmbeddingSet,
    mode: ModeSpec,
    *,
    bank: PrototypeBank | None = None,
    train_set: EmbeddingSet | None = None,
    config: ScoringConfig | None = None,
    eval_split: Split = Split.TEST,
) -> EvalReport:
    """Run one evaluation setting over the ``eval_split`` rows of ``test_set``."""
    if config is None:
        config = ScoringConfig()
    if test_set.class_count < 2:
        raise ValidationError("classification needs at least 2 classes")
    rows = test_set.rows(eval_split)
    if rows.size == 0:
        raise ValidationError(f"no rows tagged {eval_split.name.lower()} to evaluate")
    queries = test_set.features[rows]
    truth = test_set.labels[rows]
    m = test_set.class_count

    if mode.kind == "knn":
        if train_set is None:
            raise ValidationError("knn mode needs labeled train features (train_set)")
        train_rows = train_set.rows(Split.TRAIN)
        if train_rows.size == 0:
            raise ValidationError("knn mode: train set has no train-tagged rows")
        predictions = knn_predict(
            train_set.features[train_rows],
            train_set.labels[train_rows],
            queries,
            mode.knn_n,
            m,
        )
    else:
        if bank is None:
            raise ValidationError(f"{mode.kind} mode needs a prototype bank")
        if bank.class_names != test_set.class_names:
            raise ValidationError("bank classes do not match the test set's classes")
        pv, pm, pa, fused, fused_pred = score_arrays(queries, bank, config)
        if mode.kind in ("fully_supervised", "few_shot"):
            predictions = fused_pred
        elif mode.kind == "training_free_visual":
            predictions = pv.argmax(axis=1)
        else:  # zero_shot_text
            w = config.ensemble
            if w.text_max + w.text_avg <= 0:
                raise ValidationError("zero-shot needs a positive text-head weight")
            blend = (w.text_max * pm + w.text_avg * pa) / (w.text_max + w.text_avg)
            predictions = blend.argmax(axis=1)

    confusion = np.zeros((m, m), dtype=np.int64)
    np.add.at(confusion, (truth, predictions), 1)
    metrics = compute_metrics(confusion)

    support = confusion.sum(axis=1)
    per_class = [
        {
            "class": name,
            "precision": metrics.precision[i],
            "recall": metrics.recall[i],
            "f1": metrics.f1[i],
            "support": int(support[i]),
        }
        for i, name in enumerate(test_set.class_names)
    ]
    snapshot = {
        "temperature": config.temperature,
        "clamp_cosine": config.clamp_cosine,
        "ensemble": {
            "visual": config.ensemble.visual,
            "text_max": config.ensemble.text_max,
            "text_avg": config.ensemble.text_avg,
        },
        "eval_split": eval_split.name.lower(),
        "test_rows": int(rows.size),
        "class_count": m,
    }
    return EvalReport(
        mode=mode.to_dict(),
        accuracy=metrics.accuracy,
        macro_precision=metrics.macro_precision,
        macro_recall=metrics.macro_recall,
        macro_f1=metrics.macro_f1,
        per_class=per_class,
        confusion=confusion,
        config=snapshot,
        flags=list(metrics.flags),
    )


def _separated_unit_vectors(
    rng: np.random.Generator, count: int, dim: int, max_cos: float = 0.2, attempts: int = 500
) -> np.ndarray:
    """Unit vectors with pairwise |cos| at most ``max_cos``, best effort.

    Rejection-sampled; when the cap is geometrically out of reach (count
    large relative to dim) the least-overlapping candidate seen is kept.
    """
    out = np.empty((count, dim))
    for i in range(count):
        best = None
        best_worst = np.inf
        for _ in range(attempts):
            v = rng.normal(size=dim)
            v /= np.linalg.norm(v)
            worst = float(np.abs(out[:i] @ v).max()) if i else 0.0
            if worst <= max_cos:
                best = v
                break
            if worst < best_worst:
                best, best_worst = v, worst
        out[i] = best
    return out


def synth_modes(
    class_count: int,
    modes_per_class: int,
    dim: int,
    seed: int,
    mode_spread: float = 0.6,
) -> np.ndarray:
    """The true mode centers of the synthetic benchmark, (M, modes, D).

    Classes get well-separated unit directions; each mode is that class
    direction plus a random unit offset scaled by ``mode_spread``, then
    renormalized. A small spread makes a class's modes cohere (its
    prototype sums reinforce each other); a large one makes them nearly
    independent, which is the regime where a single prototype per class
    visibly underfits. Exposed so test oracles can compare recovered
    centroids against ground truth.
    """
    if min(class_count, modes_per_class, dim) < 1:
        raise ValidationError("all synthetic-benchmark counts must be >= 1")
    if mode_spread < 0:
        raise ValidationError("mode_spread must be >= 0")
    rng = stream(seed, _CENTER_STREAM)
    class_dirs = _separated_unit_vectors(rng, class_count, dim)
    centers = np.empty((class_count, modes_per_class, dim))
    for m in range(class_count):
        for j in range(modes_per_class):
            offset = rng.normal(size=dim)
            offset /= np.linalg.norm(offset)
            c = class_dirs[m] + mode_spread * offset
            centers[m, j] = c / np.linalg.norm(c)
    return centers


def synth_generate(
    class_count: int,
    modes_per_class: int,
    dim: int,
    n_per_class: int,
    noise_sigma: float,
    seed: int,
    mode_spread: float = 0.6,
) -> tuple[EmbeddingSet, PromptSet]:
    """Synthetic stand-in for encoder features.

    Features are a randomly picked mode center (see :func:`synth_modes`)
    plus isotropic Gaussian noise; prompt embeddings are the centers plus
    independent noise of the same scale, so text separates classes the way
    the image features do. All rows are tagged train; split afterwards.
    Identical bytes for identical arguments.
    """
    if n_per_class < 1:
        raise ValidationError("all synthetic-benchmark counts must be >= 1")
    if noise_sigma < 0:
        raise ValidationError("noise sigma must be >= 0")

    centers = synth_modes(class_count, modes_per_class, dim, seed, mode_spread)

    picks = stream(seed, _MODE_PICK_STREAM).integers(
        modes_per_class, size=class_count * n_per_class
    )
    noise = stream(seed, _FEATURE_NOISE_STREAM).normal(
        scale=noise_sigma if noise_sigma > 0 else 1.0,
        size=(class_count * n_per_class, dim),
    )
    if noise_sigma == 0:
        noise[:] = 0.0

    labels = np.repeat(np.arange(class_count), n_per_class)
    features = centers[labels, picks] + noise

    width = max(2, len(str(class_count - 1)))
    names = tuple(f"class_{i:0{width}d}" for i in range(class_count))
    dataset = EmbeddingSet(
        features.astype(np.float32),
        labels,
        np.zeros(labels.size, dtype=np.uint8),
        names,
    )

    prompt_noise = stream(seed, _PROMPT_NOISE_STREAM).normal(
        scale=noise_sigma if noise_sigma > 0 else 1.0,
        size=(class_count, modes_per_class, dim),
    )
    if noise_sigma == 0:
        prompt_noise[:] = 0.0
    prompt_embeddings = tuple(
        (centers[i] + prompt_noise[i]).astype(np.float32) for i in range(class_count)
    )
    prompt_texts = tuple(
        tuple(f"synthetic description of {names[i]}, facet {j}" for j in range(modes_per_class))
        for i in range(class_count)
    )
    prompts = PromptSet(names, texts=prompt_texts, embeddings=prompt_embeddings)
    return dataset, prompts

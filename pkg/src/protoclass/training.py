"""Prototype optimization over a frozen feature space.

The trainable parameters are the two prototype tensors; input features are
never modified. Each batch contributes three cross-entropy terms, one per
head, combined as

    loss = CE(visual) + w_tmax * CE(text_max) + w_tavg * CE(text_avg)

averaged over the batch. Gradients are derived analytically through the
softmax / cosine chain. With q = x / |x|, p = v / |v| and c = cos(x, v):

    d c / d v = (q - c * p) / |v|

and the per-class logit derivative is the usual softmax-cross-entropy
residual (probability minus one-hot) divided by the temperature (and the
prompt count for the text-avg head). The max in the text-max head is a
subgradient: only each class's argmax prompt receives gradient, ties going
to the lowest prompt index.

Updates use AdamW (decoupled weight decay) with a half-cosine learning-rate
decay over the total step count. Prototypes are not re-projected to the
unit sphere after updates; normalization lives inside the cosine.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TrainingDivergedError, ValidationError
from .prototypes import PrototypeBank
from .rng import stream
from .scoring import ScoringConfig, score_arrays
from .store import EmbeddingSet, Split

_SHUFFLE_STREAM = 0


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer recipe. Defaults: 30 epochs of batch-64 AdamW steps at an
    initial learning rate of 0.003 under cosine decay, with head-loss
    weights of 0.1 for both text heads."""

    epochs: int = 30
    batch_size: int = 64
    base_lr: float = 0.003
    schedule: str = "cosine"  # or "constant"
    optimizer: str = "adamw"
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    text_max_weight: float = 0.1
    text_avg_weight: float = 0.1
    temperature: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.base_lr < 0:
            raise ValidationError(f"base_lr must be >= 0, got {self.base_lr}")
        if self.schedule not in ("cosine", "constant"):
            raise ValidationError(f"unknown schedule {self.schedule!r}")
        if self.optimizer != "adamw":
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("beta1/beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ValidationError("eps must be positive")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be >= 0")
        if self.text_max_weight < 0 or self.text_avg_weight < 0:
            raise ValidationError("head loss weights must be >= 0")
        if not self.temperature > 0:
            raise ValidationError("temperature must be positive")


@dataclass
class TrainReport:
    """Per-epoch logs plus the trained bank's identity."""

    epochs: list[dict] = field(default_factory=list)
    final_bank_hash: str = ""
    total_wall_time_s: float = 0.0

    def to_jsonl(self) -> str:
        lines = [json.dumps(rec, sort_keys=True) for rec in self.epochs]
        lines.append(
            json.dumps(
                {
                    "final_bank_hash": self.final_bank_hash,
                    "total_wall_time_s": self.total_wall_time_s,
                },
                sort_keys=True,
            )
        )
        return "\n".join(lines) + "\n"

    def write_jsonl(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def lr_at(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay from ``base_lr`` at step 0 to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValidationError(f"step {step} outside [0, {total_steps}]")
    return base_lr * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


def loss_and_grads(
    features: np.ndarray,
    labels: np.ndarray,
    visual: np.ndarray,
    textual: np.ndarray,
    temperature: float,
    text_max_weight: float,
    text_avg_weight: float,
) -> tuple[float, np.ndarray, np.ndarray, dict[str, float]]:
    """Batch-mean loss and its exact gradients w.r.t. both prototype tensors.

    Returns ``(loss, grad_visual, grad_textual, components)`` where
    ``components`` holds the unweighted per-head cross-entropies.
    """
    x = np.ascontiguousarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    v = np.ascontiguousarray(visual, dtype=np.float64)
    tx = np.ascontiguousarray(textual, dtype=np.float64)
    n, dim = x.shape
    m, k, _ = v.shape
    j = tx.shape[1]
    if y.shape != (n,):
        raise ValidationError("labels must align with feature rows")
    if y.min() < 0 or y.max() >= m:
        raise ValidationError("labels out of range for the bank")
    if not np.isfinite(x).all():
        raise ValidationError("batch features contain non-finite values")
    if not (np.isfinite(v).all() and np.isfinite(tx).all()):
        raise ValidationError("prototype tensors contain non-finite values")

    q_norms = np.linalg.norm(x, axis=1)
    if (q_norms == 0.0).any():
        raise ValidationError("a batch feature row has zero norm")
    q = x / q_norms[:, None]

    v_norms = np.linalg.norm(v, axis=2)
    t_norms = np.linalg.norm(tx, axis=2)
    if (v_norms == 0.0).any() or (t_norms == 0.0).any():
        raise ValidationError("a prototype has zero norm; cosine undefined")
    v_hat = v / v_norms[:, :, None]
    t_hat = tx / t_norms[:, :, None]

    cos_v = np.einsum("nd,mkd->nmk", q, v_hat)
    cos_t = np.einsum("nd,mjd->nmj", q, t_hat)

    onehot = np.zeros((n, m))
    onehot[np.arange(n), y] = 1.0

    def head(logits: np.ndarray) -> tuple[float, np.ndarray]:
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        ce = float(-log_probs[np.arange(n), y].mean())
        dlogits = (np.exp(log_probs) - onehot) / n  # residual of the batch mean
        return ce, dlogits

    ce_v, dz_v = head(cos_v.sum(axis=2) / temperature)
    ce_tmax, dz_tmax = head(cos_t.max(axis=2) / temperature)
    ce_tavg, dz_tavg = head(cos_t.sum(axis=2) / (temperature * j))

    loss = ce_v + text_max_weight * ce_tmax + text_avg_weight * ce_tavg
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss!r}")

    def chain(coeff: np.ndarray, cos: np.ndarray, hat: np.ndarray, norms: np.ndarray) -> np.ndarray:
        # coeff (n, M, P) is dloss/dcos; cosine derivative is (q - cos*hat)/|proto|
        lead = np.einsum("nmp,nd->mpd", coeff, q)
        pull = (coeff * cos).sum(axis=0)[:, :, None] * hat
        return (lead - pull) / norms[:, :, None]

    grad_v = chain(dz_v[:, :, None] / temperature * np.ones((1, 1, k)), cos_v, v_hat, v_norms)

    coeff_t = (text_avg_weight / (temperature * j)) * np.repeat(
        dz_tavg[:, :, None], j, axis=2
    )
    best = cos_t.argmax(axis=2)  # ties resolve to the lowest prompt index
    rows = np.arange(n)[:, None]
    cols = np.arange(m)[None, :]
    np.add.at(coeff_t, (rows, cols, best), text_max_weight * dz_tmax / temperature)
    grad_t = chain(coeff_t, cos_t, t_hat, t_norms)

    components = {"visual": ce_v, "text_max": ce_tmax, "text_avg": ce_tavg}
    return loss, grad_v, grad_t, components


def train(
    bank: PrototypeBank,
    train_set: EmbeddingSet,
    val_set: EmbeddingSet | None,
    config: TrainConfig,
    scoring: ScoringConfig | None = None,
) -> tuple[PrototypeBank, TrainReport]:
    """Run the full optimization; returns the trained bank and its report.

    Deterministic for a fixed ``config.seed``: epoch shuffles come from a
    dedicated Philox stream and every numpy reduction is order-stable.
    Aborts with TrainingDivergedError if an epoch's mean loss exceeds ten
    times the first epoch's.
    """
    t_start = time.perf_counter()
    rows = train_set.rows(Split.TRAIN)
    if rows.size == 0:
        raise ValidationError("train set has no train-tagged rows")
    x = train_set.features[rows].astype(np.float64)
    y = train_set.labels[rows]
    if int(y.max()) >= bank.class_count:
        raise ValidationError("train labels exceed the bank's class count")

    val_x = val_y = None
    if val_set is not None:
        val_rows = val_set.rows(Split.VAL)
        if val_rows.size:
            val_x = val_set.features[val_rows].astype(np.float64)
            val_y = val_set.labels[val_rows]
    if scoring is None:
        scoring = ScoringConfig(temperature=config.temperature)

    v = bank.visual.astype(np.float64)
    t = bank.textual.astype(np.float64)
    adam_m = [np.zeros_like(v), np.zeros_like(t)]
    adam_v = [np.zeros_like(v), np.zeros_like(t)]

    n = rows.size
    batches_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * batches_per_epoch
    step = 0
    adam_t = 0
    first_epoch_loss = None
    report = TrainReport()

    for epoch in range(config.epochs):
        epoch_start = time.perf_counter()
        order = stream(config.seed, _SHUFFLE_STREAM, epoch).permutation(n)
        epoch_loss = 0.0
        epoch_parts = {"visual": 0.0, "text_max": 0.0, "text_avg": 0.0}
        last_lr = 0.0
        for b in range(batches_per_epoch):
            batch = order[b * config.batch_size : (b + 1) * config.batch_size]
            try:
                loss, grad_v, grad_t, parts = loss_and_grads(
                    x[batch],
                    y[batch],
                    v,
                    t,
                    config.temperature,
                    config.text_max_weight,
                    config.text_avg_weight,
                )
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(f"epoch {epoch} batch {b}: {exc}") from exc

            if config.schedule == "cosine":
                last_lr = lr_at(step, total_steps, config.base_lr)
            else:
                last_lr = config.base_lr
            adam_t += 1
            bias1 = 1.0 - config.beta1**adam_t
            bias2 = 1.0 - config.beta2**adam_t
            for params, grad, mom, sec in ((v, grad_v, 0, 0), (t, grad_t, 1, 1)):
                adam_m[mom] = config.beta1 * adam_m[mom] + (1.0 - config.beta1) * grad
                adam_v[sec] = config.beta2 * adam_v[sec] + (1.0 - config.beta2) * grad * grad
                m_hat = adam_m[mom] / bias1
                v_hat = adam_v[sec] / bias2
                params -= last_lr * (
                    m_hat / (np.sqrt(v_hat) + config.eps) + config.weight_decay * params
                )
            step += 1
            frac = batch.size / n
            epoch_loss += loss * frac
            for key in epoch_parts:
                epoch_parts[key] += parts[key] * frac

        record = {
            "epoch": epoch,
            "loss": epoch_loss,
            "loss_visual": epoch_parts["visual"],
            "loss_text_max": epoch_parts["text_max"],
            "loss_text_avg": epoch_parts["text_avg"],
            "lr": last_lr,
            "wall_time_s": time.perf_counter() - epoch_start,
        }
        if val_x is not None:
            interim = PrototypeBank(
                v.astype(np.float32), t.astype(np.float32), bank.class_names, bank.provenance
            )
            _, _, _, _, pred = score_arrays(val_x, interim, scoring)
            record["val_accuracy"] = float((pred == val_y).mean())
        report.epochs.append(record)

        if first_epoch_loss is None:
            first_epoch_loss = epoch_loss
        elif epoch_loss > 10.0 * first_epoch_loss:
            raise TrainingDivergedError(
                f"epoch {epoch} mean loss {epoch_loss:.4g} exceeds 10x the "
                f"first epoch's {first_epoch_loss:.4g}"
            )

    provenance = dict(bank.provenance)
    provenance["trained"] = True
    provenance["train"] = {
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "base_lr": config.base_lr,
        "schedule": config.schedule,
        "weight_decay": config.weight_decay,
        "text_max_weight": config.text_max_weight,
        "text_avg_weight": config.text_avg_weight,
        "temperature": config.temperature,
        "seed": config.seed,
    }
    trained = PrototypeBank(
        v.astype(np.float32), t.astype(np.float32), bank.class_names, provenance
    )
    report.final_bank_hash = trained.content_hash()
    report.total_wall_time_s = time.perf_counter() - t_start
    return trained, report


def feature_fingerprint(dataset: EmbeddingSet) -> str:
    """SHA-256 of the raw feature bytes; training must never change it."""
    return hashlib.sha256(dataset.features.tobytes()).hexdigest()

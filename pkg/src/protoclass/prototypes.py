"""Multimodal prototype banks: per-class visual centroids plus textual
prompt embeddings, with lossless directory persistence.

A bank directory holds ``bank_manifest.json`` plus ``visual.bin`` and
``textual.bin`` in the shared feature-payload layout; each payload's CRC-32
is recorded in the manifest so truncation or bit rot is detected on load.
"""

from __future__ import annotations

import hashlib
import json
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import binio
from .clustering import KMeansConfig, kmeans
from .errors import DataError, DataWarning, ValidationError
from .rng import stream
from .store import EmbeddingSet, PromptSet, Split

BANK_MANIFEST_NAME = "bank_manifest.json"


@dataclass(frozen=True)
class PrototypeBank:
    """The learnable parameters: visual (M, K, D) and textual (M, J, D)."""

    visual: np.ndarray
    textual: np.ndarray
    class_names: tuple[str, ...]
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        visual = np.ascontiguousarray(self.visual, dtype=np.float32)
        textual = np.ascontiguousarray(self.textual, dtype=np.float32)
        object.__setattr__(self, "visual", visual)
        object.__setattr__(self, "textual", textual)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if visual.ndim != 3 or textual.ndim != 3:
            raise DataError("prototype tensors must be (classes, prototypes, dim)")
        m = len(self.class_names)
        if visual.shape[0] != m or textual.shape[0] != m:
            raise DataError(
                f"bank has {m} classes but tensors are {visual.shape[0]} / {textual.shape[0]}"
            )
        if visual.shape[1] < 1 or textual.shape[1] < 1:
            raise DataError("each class needs at least one prototype per modality")
        if visual.shape[2] != textual.shape[2]:
            raise DataError(
                f"visual dim {visual.shape[2]} != textual dim {textual.shape[2]}"
            )
        if not np.isfinite(visual).all() or not np.isfinite(textual).all():
            raise DataError("prototype tensors contain non-finite values")

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    @property
    def visual_per_class(self) -> int:
        return int(self.visual.shape[1])

    @property
    def textual_per_class(self) -> int:
        return int(self.textual.shape[1])

    @property
    def dim(self) -> int:
        return int(self.visual.shape[2])

    def content_hash(self) -> str:
        """SHA-256 over both payloads; the identity used in reports."""
        h = hashlib.sha256()
        h.update(self.visual.tobytes())
        h.update(self.textual.tobytes())
        return h.hexdigest()


def build_visual_prototypes(train: EmbeddingSet, config: KMeansConfig) -> np.ndarray:
    """Cluster each class's train rows; centroids become that class's
    prototypes.

    Each class uses an independent stream derived from (seed, class id), so
    classes can be clustered in any order. Classes with fewer rows than
    ``config.k`` are clustered at their row count and padded by cycling the
    centroids so the tensor stays rectangular.
    """
    dim = train.dim
    out = np.empty((train.class_count, config.k, dim), dtype=np.float32)
    train_mask = train.splits == int(Split.TRAIN)
    padded: list[str] = []
    for label, name in enumerate(train.class_names):
        rows = np.flatnonzero(train_mask & (train.labels == label))
        if rows.size == 0:
            raise DataError(f"class {name!r} has no train rows to build prototypes from")
        k_eff = min(config.k, rows.size)
        result = kmeans(
            train.features[rows],
            KMeansConfig(
                k=k_eff,
                max_iters=config.max_iters,
                tol=config.tol,
                init=config.init,
                seed=config.seed,
            ),
            rng=stream(config.seed, label),
        )
        centroids = result.centroids.astype(np.float32)
        if k_eff < config.k:
            padded.append(f"{name} ({rows.size} rows)")
            reps = np.arange(config.k) % k_eff
            centroids = centroids[reps]
        out[label] = centroids
    if padded:
        warnings.warn(
            f"classes with fewer rows than k={config.k} had centroids duplicated: "
            f"{', '.join(padded)}",
            DataWarning,
            stacklevel=2,
        )
    return out


def build_textual_prototypes(prompts: PromptSet) -> np.ndarray:
    """Stack prompt embeddings verbatim into an (M, J, D) tensor.

    No transformation is applied. Ragged prompt counts are padded to the
    maximum by repeating each class's last prompt embedding (reported).
    """
    if prompts.embeddings is None:
        raise ValidationError("prompt set has no embeddings; textual prototypes need them")
    counts = prompts.prompt_counts
    j = max(counts)
    ragged = [
        f"{name} ({c} -> {j})"
        for name, c in zip(prompts.class_names, counts)
        if c < j
    ]
    if ragged:
        warnings.warn(
            f"ragged prompt counts padded by repeating the last embedding: {', '.join(ragged)}",
            DataWarning,
            stacklevel=2,
        )
    dim = prompts.dim
    out = np.empty((len(prompts.class_names), j, dim), dtype=np.float32)
    for m, emb in enumerate(prompts.embeddings):
        out[m, : emb.shape[0]] = emb
        if emb.shape[0] < j:
            out[m, emb.shape[0] :] = emb[-1]
    return out


def build_bank(
    train: EmbeddingSet,
    prompts: PromptSet,
    config: KMeansConfig,
) -> PrototypeBank:
    """Construct both modalities and record provenance (seeds, k, hashes)."""
    visual = build_visual_prototypes(train, config)
    textual = build_textual_prototypes(prompts)
    if textual.shape[2] != visual.shape[2]:
        raise DataError(
            f"prompt embedding dim {textual.shape[2]} != feature dim {visual.shape[2]}"
        )
    provenance = {
        "seed": config.seed,
        "kmeans": {
            "k": config.k,
            "max_iters": config.max_iters,
            "tol": config.tol,
            "init": config.init,
        },
        "source_hashes": {
            "train_features": hashlib.sha256(train.features.tobytes()).hexdigest(),
            "prompt_embeddings": hashlib.sha256(
                np.concatenate(prompts.embeddings, axis=0).tobytes()
            ).hexdigest(),
        },
        "trained": False,
    }
    return PrototypeBank(visual, textual, train.class_names, provenance)


# ---------------------------------------------------------------------------
# persistence


def save_bank(bank: PrototypeBank, path: str | Path) -> None:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    m, k, d = bank.visual.shape
    j = bank.textual.shape[1]
    binio.write_features(directory / "visual.bin", bank.visual.reshape(m * k, d))
    binio.write_features(directory / "textual.bin", bank.textual.reshape(m * j, d))
    manifest = {
        "format_version": binio.FORMAT_VERSION,
        "classes": list(bank.class_names),
        "m": m,
        "k": k,
        "j": j,
        "d": d,
        "visual_file": "visual.bin",
        "textual_file": "textual.bin",
        "visual_crc32": zlib.crc32((directory / "visual.bin").read_bytes()),
        "textual_crc32": zlib.crc32((directory / "textual.bin").read_bytes()),
        "dtype": "f32le",
        "provenance": bank.provenance,
    }
    (directory / BANK_MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_bank(path: str | Path) -> PrototypeBank:
    directory = Path(path)
    manifest_path = directory / BANK_MANIFEST_NAME
    if not manifest_path.is_file():
        raise DataError(f"missing bank manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if manifest.get("format_version") != binio.FORMAT_VERSION:
        raise DataError(f"{manifest_path}: unsupported format_version")

    m, k, j, d = (int(manifest[key]) for key in ("m", "k", "j", "d"))
    if min(m, k, j, d) < 1:
        raise DataError(f"{manifest_path}: bank dimensions must all be >= 1")
    tensors: dict[str, np.ndarray] = {}
    for kind, rows in (("visual", m * k), ("textual", m * j)):
        payload_path = directory / manifest[f"{kind}_file"]
        if not payload_path.is_file():
            raise DataError(f"missing bank payload: {payload_path}")
        crc = zlib.crc32(payload_path.read_bytes())
        if crc != manifest[f"{kind}_crc32"]:
            raise DataError(
                f"{payload_path}: checksum mismatch (payload corrupt or truncated)"
            )
        flat = binio.read_features(payload_path)
        if flat.shape != (rows, d):
            raise DataError(
                f"{payload_path}: expected {(rows, d)} rows from manifest, got {flat.shape}"
            )
        tensors[kind] = flat.reshape(m, rows // m, d)
    return PrototypeBank(
        tensors["visual"],
        tensors["textual"],
        tuple(manifest["classes"]),
        manifest.get("provenance", {}),
    )

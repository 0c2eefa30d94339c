"""Embedding data model and its bit-exact on-disk layout.

An *embedding directory* holds precomputed feature vectors plus labels:

* ``manifest.json`` -- ``format_version`` (=1), ``n``, ``d``, ``classes``,
  ``features_file``, ``labels_file``, optional ``splits_file``, ``dtype``
  (``"f32le"``).
* ``features.bin`` / ``labels.bin`` / ``splits.bin`` -- binary payloads,
  see :mod:`protoclass.binio`.

A *prompt embedding directory* reuses the feature payload with a per-class
row index (``prompt_rows``: ``[start, count]`` per class) in its manifest.

Everything here is immutable after load; any number of readers may share
one instance.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import binio
from .errors import DataError, DataWarning, ValidationError
from .rng import stream

MANIFEST_NAME = "manifest.json"

# stream namespaces under a user seed, so split/subsample never share draws
_SPLIT_STREAM = 0
_FEWSHOT_STREAM = 1


class Split(enum.IntEnum):
    TRAIN = 0
    VAL = 1
    TEST = 2


@dataclass(frozen=True)
class ClassManifest:
    """Class names in label order plus per-class row counts."""

    class_names: tuple[str, ...]
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(not name for name in self.class_names):
            raise ValidationError("class names must be non-empty")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValidationError("class names must be unique")
        if len(self.counts) != len(self.class_names):
            raise ValidationError("counts and class_names length mismatch")

    @property
    def class_count(self) -> int:
        return len(self.class_names)


@dataclass(frozen=True)
class EmbeddingSet:
    """N feature rows with integer class labels and train/val/test tags.

    ``features`` is (n, d) float32, ``labels`` (n,) int64 in [0, M),
    ``splits`` (n,) uint8 of :class:`Split` values. Rows are never the
    all-zero vector, so L2 normalization is always defined.
    """

    features: np.ndarray
    labels: np.ndarray
    splits: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        feats = np.ascontiguousarray(self.features, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        splits = np.ascontiguousarray(self.splits, dtype=np.uint8)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "splits", splits)
        object.__setattr__(self, "class_names", tuple(self.class_names))

        if feats.ndim != 2 or feats.shape[1] < 1:
            raise DataError(f"features must be (n, d) with d >= 1, got {feats.shape}")
        n = feats.shape[0]
        if labels.shape != (n,) or splits.shape != (n,):
            raise DataError("labels/splits length does not match feature rows")
        if not np.isfinite(feats).all():
            raise DataError("features contain non-finite values")
        if n and not feats.any(axis=1).all():
            row = int(np.argmin(feats.any(axis=1)))
            raise DataError(f"row {row} is the all-zero vector")
        m = len(self.class_names)
        if labels.size and (labels.min() < 0 or labels.max() >= m):
            bad = int(np.argmax((labels < 0) | (labels >= m)))
            raise DataError(f"label {labels[bad]} at row {bad} out of range [0, {m})")
        if splits.size and splits.max() > 2:
            raise DataError("split tags must be 0 (train), 1 (val) or 2 (test)")
        # guards against duplicate names slipping in through the constructor
        ClassManifest(self.class_names, tuple(int(c) for c in np.bincount(labels, minlength=m)))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    def manifest(self) -> ClassManifest:
        counts = np.bincount(self.labels, minlength=self.class_count)
        return ClassManifest(self.class_names, tuple(int(c) for c in counts))

    def rows(self, split: Split) -> np.ndarray:
        """Row indices carrying the given split tag, in dataset order."""
        return np.flatnonzero(self.splits == int(split))

    def subset(self, split: Split) -> "EmbeddingSet":
        """The rows of one split, as their own set (tags preserved)."""
        idx = self.rows(split)
        return EmbeddingSet(
            self.features[idx], self.labels[idx], self.splits[idx], self.class_names
        )


@dataclass(frozen=True)
class PromptSet:
    """Per-class descriptive prompts: text strings and/or embedding rows.

    ``embeddings[m]`` is a (J_m, d) float32 array; classes may have ragged
    prompt counts here, uniformity is the prototype builder's concern.
    """

    class_names: tuple[str, ...]
    texts: tuple[tuple[str, ...], ...] | None = None
    embeddings: tuple[np.ndarray, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if self.texts is not None:
            object.__setattr__(
                self, "texts", tuple(tuple(t) for t in self.texts)
            )
            if len(self.texts) != len(self.class_names):
                raise ValidationError("texts must align with class_names")
        if self.embeddings is not None:
            embs = tuple(np.ascontiguousarray(e, dtype=np.float32) for e in self.embeddings)
            object.__setattr__(self, "embeddings", embs)
            if len(embs) != len(self.class_names):
                raise ValidationError("embeddings must align with class_names")
            dims = {e.shape[1] for e in embs if e.ndim == 2}
            if any(e.ndim != 2 for e in embs) or len(dims) > 1:
                raise DataError("prompt embeddings must share one dimension")
            for name, e in zip(self.class_names, embs):
                if e.shape[0] < 1:
                    raise DataError(f"class {name!r} has no prompt embeddings")
                if not np.isfinite(e).all():
                    raise DataError(f"class {name!r} has non-finite prompt embeddings")

    @property
    def dim(self) -> int | None:
        if self.embeddings is None:
            return None
        return int(self.embeddings[0].shape[1])

    @property
    def prompt_counts(self) -> tuple[int, ...]:
        if self.embeddings is not None:
            return tuple(int(e.shape[0]) for e in self.embeddings)
        if self.texts is not None:
            return tuple(len(t) for t in self.texts)
        return tuple(0 for _ in self.class_names)


# ---------------------------------------------------------------------------
# embedding directory IO


def _load_manifest(directory: Path) -> dict:
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DataError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if manifest.get("format_version") != binio.FORMAT_VERSION:
        raise DataError(
            f"{manifest_path}: unsupported format_version {manifest.get('format_version')!r}"
        )
    if manifest.get("dtype") != "f32le":
        raise DataError(f"{manifest_path}: unsupported dtype {manifest.get('dtype')!r}")
    return manifest


def load_embedding_set(path: str | Path) -> EmbeddingSet:
    """Load an embedding directory, validating payloads against the manifest."""
    directory = Path(path)
    manifest = _load_manifest(directory)
    for key in ("n", "d", "classes", "features_file", "labels_file"):
        if key not in manifest:
            raise DataError(f"{directory / MANIFEST_NAME}: missing key {key!r}")

    features = binio.read_features(directory / manifest["features_file"])
    labels = binio.read_labels(directory / manifest["labels_file"])
    if features.shape[0] != manifest["n"] or features.shape[1] != manifest["d"]:
        raise DataError(
            f"{directory}: manifest declares n={manifest['n']}, d={manifest['d']} "
            f"but feature payload is {features.shape}"
        )
    if labels.shape[0] != manifest["n"]:
        raise DataError(f"{directory}: label payload has {labels.shape[0]} rows, manifest says {manifest['n']}")

    splits_file = manifest.get("splits_file")
    if splits_file is None and (directory / "splits.bin").is_file():
        splits_file = "splits.bin"
    if splits_file is not None and (directory / splits_file).is_file():
        splits = binio.read_splits(directory / splits_file)
        if splits.shape[0] != manifest["n"]:
            raise DataError(f"{directory}: split payload length mismatch")
    else:
        splits = np.zeros(manifest["n"], dtype=np.uint8)

    return EmbeddingSet(features, labels, splits, tuple(manifest["classes"]))


def save_embedding_set(dataset: EmbeddingSet, path: str | Path) -> None:
    """Write an embedding directory; byte-stable for identical inputs."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    binio.write_features(directory / "features.bin", dataset.features)
    binio.write_labels(directory / "labels.bin", dataset.labels)
    binio.write_splits(directory / "splits.bin", dataset.splits)
    manifest = {
        "format_version": binio.FORMAT_VERSION,
        "n": dataset.n,
        "d": dataset.dim,
        "classes": list(dataset.class_names),
        "features_file": "features.bin",
        "labels_file": "labels.bin",
        "splits_file": "splits.bin",
        "dtype": "f32le",
    }
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# prompt IO


def load_prompt_texts(path: str | Path, class_names: tuple[str, ...] | None = None) -> PromptSet:
    """Load a prompt text file: JSON mapping class name -> list of strings.

    With ``class_names`` the mapping is reordered to match and must cover
    every class; otherwise the file's own key order is kept.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing prompt file: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict) or not all(
        isinstance(v, list) and all(isinstance(s, str) for s in v) for v in raw.values()
    ):
        raise DataError(f"{path}: expected an object mapping class name to a list of strings")
    names = class_names if class_names is not None else tuple(raw.keys())
    missing = [name for name in names if name not in raw]
    if missing:
        raise DataError(f"{path}: no prompts for classes {missing}")
    for name in names:
        if not raw[name]:
            raise DataError(f"{path}: class {name!r} has an empty prompt list")
        if any(not s.strip() for s in raw[name]):
            raise DataError(f"{path}: class {name!r} contains an empty prompt string")
    return PromptSet(names, texts=tuple(tuple(raw[name]) for name in names))


def load_prompt_embeddings(path: str | Path) -> PromptSet:
    """Load a prompt embedding directory (feature payload + per-class index)."""
    directory = Path(path)
    manifest = _load_manifest(directory)
    for key in ("n", "d", "classes", "features_file", "prompt_rows"):
        if key not in manifest:
            raise DataError(f"{directory / MANIFEST_NAME}: missing key {key!r}")
    features = binio.read_features(directory / manifest["features_file"])
    if features.shape != (manifest["n"], manifest["d"]):
        raise DataError(f"{directory}: prompt payload shape {features.shape} does not match manifest")

    classes = tuple(manifest["classes"])
    rows = manifest["prompt_rows"]
    if len(rows) != len(classes):
        raise DataError(f"{directory}: prompt_rows must have one [start, count] per class")
    cursor = 0
    per_class: list[np.ndarray] = []
    for name, entry in zip(classes, rows):
        start, count = int(entry[0]), int(entry[1])
        if start != cursor or count < 1:
            raise DataError(
                f"{directory}: prompt rows for class {name!r} must be contiguous "
                f"(expected start {cursor}, got [{start}, {count}])"
            )
        per_class.append(features[start : start + count])
        cursor = start + count
    if cursor != manifest["n"]:
        raise DataError(f"{directory}: prompt_rows cover {cursor} rows of {manifest['n']}")

    texts = None
    if manifest.get("texts_file") and (directory / manifest["texts_file"]).is_file():
        texts = load_prompt_texts(directory / manifest["texts_file"], classes).texts
    return PromptSet(classes, texts=texts, embeddings=tuple(per_class))


def save_prompt_embeddings(prompts: PromptSet, path: str | Path) -> None:
    if prompts.embeddings is None:
        raise ValidationError("prompt set has no embeddings to save")
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    stacked = np.concatenate(prompts.embeddings, axis=0)
    binio.write_features(directory / "features.bin", stacked)
    rows = []
    cursor = 0
    for emb in prompts.embeddings:
        rows.append([cursor, int(emb.shape[0])])
        cursor += int(emb.shape[0])
    manifest = {
        "format_version": binio.FORMAT_VERSION,
        "n": int(stacked.shape[0]),
        "d": int(stacked.shape[1]),
        "classes": list(prompts.class_names),
        "features_file": "features.bin",
        "prompt_rows": rows,
        "dtype": "f32le",
    }
    if prompts.texts is not None:
        (directory / "prompts.json").write_text(
            json.dumps(
                {name: list(t) for name, t in zip(prompts.class_names, prompts.texts)},
                indent=2,
                sort_keys=True,
                ensure_ascii=False,
            )
            + "\n",
            encoding="utf-8",
        )
        manifest["texts_file"] = "prompts.json"
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# splitting and subsampling


def split_dataset(
    dataset: EmbeddingSet,
    ratios: tuple[float, float, float],
    seed: int,
) -> EmbeddingSet:
    """Assign train/val/test tags, stratified per class.

    Within each class, rows are shuffled by a class-keyed stream and counts
    are allocated by largest remainder, so every per-class count deviates
    from ``ratio * class_size`` by less than one row. Deterministic for a
    fixed seed.
    """
    if len(ratios) != 3:
        raise ValidationError("ratios must be (train, val, test)")
    if any(r <= 0 for r in ratios):
        raise ValidationError(f"all split ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"split ratios must sum to 1, got sum {sum(ratios)!r}")

    too_small = [
        name
        for label, name in enumerate(dataset.class_names)
        if 0 < int((dataset.labels == label).sum()) < 3
    ]
    if too_small:
        raise DataError(
            f"classes with fewer than 3 samples cannot receive all three splits: {too_small}"
        )

    tags = np.empty(dataset.n, dtype=np.uint8)
    for label in range(dataset.class_count):
        rows = np.flatnonzero(dataset.labels == label)
        if rows.size == 0:
            continue
        order = stream(seed, _SPLIT_STREAM, label).permutation(rows.size)
        shuffled = rows[order]
        counts = _largest_remainder(rows.size, ratios)
        offsets = np.cumsum(counts)
        tags[shuffled[: offsets[0]]] = Split.TRAIN
        tags[shuffled[offsets[0] : offsets[1]]] = Split.VAL
        tags[shuffled[offsets[1] :]] = Split.TEST
    return replace(dataset, splits=tags)


def _largest_remainder(total: int, ratios: tuple[float, float, float]) -> list[int]:
    exact = [r * total for r in ratios]
    counts = [math.floor(e) for e in exact]
    leftover = total - sum(counts)
    by_frac = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in by_frac[:leftover]:
        counts[i] += 1
    return counts


def sample_few_shot(dataset: EmbeddingSet, shots: int, seed: int) -> EmbeddingSet:
    """Keep at most ``shots`` train rows per class; val/test rows untouched.

    Selected rows stay in dataset order, so requesting at least the full
    class size returns the set unchanged, and a smaller ``shots`` with the
    same seed always selects a subset of a larger one.
    """
    if shots < 1:
        raise ValidationError(f"shots must be >= 1, got {shots}")
    keep = np.ones(dataset.n, dtype=bool)
    short: list[str] = []
    train_mask = dataset.splits == int(Split.TRAIN)
    for label, name in enumerate(dataset.class_names):
        rows = np.flatnonzero(train_mask & (dataset.labels == label))
        if rows.size <= shots:
            if rows.size < shots:
                short.append(f"{name} ({rows.size} < {shots})")
            continue
        order = stream(seed, _FEWSHOT_STREAM, label).permutation(rows.size)
        keep[rows] = False
        keep[rows[order[:shots]]] = True
    if short:
        warnings.warn(
            f"classes with fewer than {shots} train rows kept in full: {', '.join(short)}",
            DataWarning,
            stacklevel=2,
        )
    idx = np.flatnonzero(keep)
    return EmbeddingSet(
        dataset.features[idx], dataset.labels[idx], dataset.splits[idx], dataset.class_names
    )

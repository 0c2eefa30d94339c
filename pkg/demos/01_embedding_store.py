"""Walkthrough: the embedding directory format, splitting, and few-shot
subsampling.

Creates a tiny labeled embedding set, writes it to disk in the binary
directory layout, reads it back bit-exactly, then shows stratified
splitting and few-shot selection.

Run: python demos/01_embedding_store.py
"""

import tempfile
from pathlib import Path

import numpy as np

from protoclass.store import (
    EmbeddingSet,
    Split,
    load_embedding_set,
    sample_few_shot,
    save_embedding_set,
    split_dataset,
)

rng = np.random.default_rng(0)

# three classes, 40/25/60 rows, 8-dimensional features
counts = {"apple_scab": 40, "bean_rust": 25, "corn_smut": 60}
features, labels = [], []
for cls, (name, count) in enumerate(counts.items()):
    features.append(rng.normal(loc=cls, size=(count, 8)))
    labels.extend([cls] * count)

dataset = EmbeddingSet(
    np.concatenate(features).astype(np.float32),
    np.array(labels),
    np.zeros(len(labels), dtype=np.uint8),  # everything starts as train
    tuple(counts),
)
print(f"dataset: n={dataset.n}, d={dataset.dim}, classes={dataset.class_names}")

with tempfile.TemporaryDirectory() as tmp:
    directory = Path(tmp) / "embeddings"
    save_embedding_set(dataset, directory)
    print("\nfiles written:")
    for path in sorted(directory.iterdir()):
        print(f"  {path.name:14s} {path.stat().st_size:6d} bytes")

    reloaded = load_embedding_set(directory)
    identical = reloaded.features.tobytes() == dataset.features.tobytes()
    print(f"round-trip bit-exact: {identical}")

# stratified 70/10/20 split; per-class counts deviate by at most one row
tagged = split_dataset(dataset, (0.7, 0.1, 0.2), seed=42)
print("\nper-class split counts (train/val/test):")
for cls, name in enumerate(tagged.class_names):
    mask = tagged.labels == cls
    row = [int(((tagged.splits == int(s)) & mask).sum()) for s in Split]
    print(f"  {name:12s} {row[0]:3d} / {row[1]:2d} / {row[2]:2d}   (of {mask.sum()})")

# the same seed always produces the same assignment
again = split_dataset(dataset, (0.7, 0.1, 0.2), seed=42)
print(f"\nsame seed reproduces the split: {np.array_equal(tagged.splits, again.splits)}")

# few-shot keeps at most `shots` train rows per class, val/test untouched
few = sample_few_shot(tagged, shots=8, seed=42)
train_counts = np.bincount(few.labels[few.splits == int(Split.TRAIN)])
print(f"few-shot(8) train rows per class: {train_counts.tolist()}")

# smaller shot counts select subsets of larger ones (same seed)
smaller = sample_few_shot(tagged, shots=3, seed=42)
big_rows = {row.tobytes() for row in few.features}
nested = all(row.tobytes() in big_rows for row in smaller.features)
print(f"few-shot(3) is a subset of few-shot(8): {nested}")

"""Walkthrough: per-class k-means and the multimodal prototype bank.

Shows Lloyd iterations converging (inertia trace), per-class centroids
becoming visual prototypes, prompt embeddings becoming textual prototypes
verbatim, and the bank surviving a disk round-trip.

Run: python demos/02_prototype_construction.py
"""

import tempfile

import numpy as np

from protoclass.clustering import KMeansConfig, kmeans
from protoclass.evaluation import synth_generate
from protoclass.prototypes import build_bank, load_bank, save_bank
from protoclass.store import split_dataset

# --- plain k-means on two obvious blobs -----------------------------------
rng = np.random.default_rng(1)
blob_a = rng.normal(size=(80, 2)) * 0.3 + [4.0, 0.0]
blob_b = rng.normal(size=(80, 2)) * 0.3 + [-4.0, 0.0]
points = np.concatenate([blob_a, blob_b])

result = kmeans(points, KMeansConfig(k=2, seed=1))
print("inertia per assignment pass:", [f"{v:.1f}" for v in result.inertia_history])
print("centroids:")
for centroid, count in zip(result.centroids, result.counts):
    print(f"  ({centroid[0]: .3f}, {centroid[1]: .3f})  <- {count} points")

# --- a full bank over synthetic encoder features --------------------------
data, prompts = synth_generate(
    class_count=6, modes_per_class=3, dim=32, n_per_class=90, noise_sigma=0.1, seed=5
)
data = split_dataset(data, (0.7, 0.1, 0.2), seed=5)

bank = build_bank(data, prompts, KMeansConfig(k=3, seed=5))
print(f"\nbank: visual {bank.visual.shape}, textual {bank.textual.shape}")
print(f"provenance seed={bank.provenance['seed']}, k={bank.provenance['kmeans']['k']}")

# textual prototypes are the prompt embeddings, untouched
copied = all(
    np.array_equal(bank.textual[m, : emb.shape[0]], emb)
    for m, emb in enumerate(prompts.embeddings)
)
print(f"textual prototypes copied verbatim: {copied}")

with tempfile.TemporaryDirectory() as tmp:
    save_bank(bank, tmp)
    reloaded = load_bank(tmp)
    same = (
        reloaded.visual.tobytes() == bank.visual.tobytes()
        and reloaded.textual.tobytes() == bank.textual.tobytes()
    )
    print(f"bank disk round-trip bit-exact: {same}")
    print(f"bank content hash: {bank.content_hash()[:24]}...")

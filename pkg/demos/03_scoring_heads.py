"""Walkthrough: the three probability heads and the fused prediction.

A hand-sized bank makes the arithmetic visible: the visual head sums
per-class cosines, the text-max head takes each class's best prompt, the
text-avg head averages them, and the ensemble weights blend the three.

Run: python demos/03_scoring_heads.py
"""

import numpy as np

from protoclass.prototypes import PrototypeBank
from protoclass.scoring import (
    EnsembleWeights,
    ScoringConfig,
    score_query,
    score_text_avg,
    score_text_max,
    score_visual,
)

# two classes in 3-D; class 0 has two visual prototypes near e1, class 1
# near e2; each class carries two prompt embeddings
visual = np.array(
    [
        [[1.0, 0.1, 0.0], [0.9, -0.1, 0.1]],
        [[0.0, 1.0, 0.1], [0.1, 0.9, -0.1]],
    ],
    dtype=np.float32,
)
textual = np.array(
    [
        [[0.8, 0.0, 0.2], [1.0, 0.2, 0.0]],
        [[0.2, 0.8, 0.0], [0.0, 1.0, 0.2]],
    ],
    dtype=np.float32,
)
bank = PrototypeBank(visual, textual, ("leaf_spot", "leaf_rust"))

query = np.array([0.95, 0.3, 0.05])
temperature = 0.25

pv = score_visual(query, visual, temperature)
pm = score_text_max(query, textual, temperature)
pa = score_text_avg(query, textual, temperature)
print(f"query {query.tolist()} at temperature {temperature}")
print(f"  visual head    p = {np.round(pv, 4).tolist()}   (sums cosines per class)")
print(f"  text-max head  p = {np.round(pm, 4).tolist()}   (best prompt per class)")
print(f"  text-avg head  p = {np.round(pa, 4).tolist()}   (mean prompt per class)")

config = ScoringConfig(temperature=temperature, ensemble=EnsembleWeights(0.3, 0.5, 0.5))
scores = score_query(query, bank, config)
print(f"  fused (0.3/0.5/0.5) = {np.round(scores.fused_probs, 4).tolist()}")
print(f"  prediction: {bank.class_names[scores.predicted_class]}")

# temperature controls how peaked each head is: higher temperature flattens
# every head toward uniform
print("\ntemperature sweep (visual head, max probability):")
for t in (0.05, 0.1, 0.25, 1.0, 4.0):
    peak = score_visual(query, visual, t).max()
    bar = "#" * int(40 * peak)
    print(f"  t={t:5.2f}  max p = {peak:.4f}  {bar}")

# the prediction is invariant to uniformly scaling the ensemble weights
big = ScoringConfig(temperature=temperature, ensemble=EnsembleWeights(3.0, 5.0, 5.0))
assert score_query(query, bank, big).predicted_class == scores.predicted_class
print("\nscaling all ensemble weights x10 leaves the argmax unchanged: True")

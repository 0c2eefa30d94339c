"""Walkthrough: the four evaluation settings plus the KNN baseline.

One synthetic benchmark, five ways to classify it:

  fully supervised      build -> train on all train rows -> fused heads
  few-shot              same, but only 16 train rows per class
  training-free visual  untrained visual prototypes only
  zero-shot text        textual prototypes only (no training images)
  knn                   majority vote over nearest train features

Macro precision/recall/F1 come from the same confusion matrix each time.

Run: python demos/05_evaluation_settings.py
"""

from protoclass.clustering import KMeansConfig
from protoclass.evaluation import ModeSpec, evaluate, synth_generate
from protoclass.prototypes import build_bank
from protoclass.scoring import EnsembleWeights, ScoringConfig
from protoclass.store import sample_few_shot, split_dataset
from protoclass.training import TrainConfig, train

SEED = 21
data, prompts = synth_generate(
    class_count=10, modes_per_class=3, dim=32, n_per_class=120, noise_sigma=0.3, seed=SEED
)
data = split_dataset(data, (0.7, 0.1, 0.2), seed=SEED)
scoring = ScoringConfig(temperature=0.01, ensemble=EnsembleWeights(0.3, 0.5, 0.5))
kmeans_cfg = KMeansConfig(k=3, seed=SEED)
train_cfg = TrainConfig(epochs=30, batch_size=64, temperature=0.01, seed=SEED)

reports = {}

bank = build_bank(data, prompts, kmeans_cfg)
trained, _ = train(bank, data, data, train_cfg, scoring)
reports["fully_supervised"] = evaluate(
    data, ModeSpec("fully_supervised"), bank=trained, config=scoring
)

few = sample_few_shot(data, shots=16, seed=SEED)
few_bank = build_bank(few, prompts, kmeans_cfg)
few_trained, _ = train(few_bank, few, data, train_cfg, scoring)
reports["few_shot (16)"] = evaluate(
    data, ModeSpec("few_shot", shots=16), bank=few_trained, config=scoring
)

reports["training_free_visual"] = evaluate(
    data, ModeSpec("training_free_visual"), bank=bank, config=scoring
)
reports["zero_shot_text"] = evaluate(
    data, ModeSpec("zero_shot_text"), bank=bank, config=scoring
)
for n in (1, 5, 10):
    reports[f"knn (n={n})"] = evaluate(
        data, ModeSpec("knn", knn_n=n), train_set=data, config=scoring
    )

print(f"{'setting':22s} {'Acc':>7s} {'M-P':>7s} {'M-R':>7s} {'M-F1':>7s}")
for name, report in reports.items():
    print(
        f"{name:22s} {report.accuracy:7.4f} {report.macro_precision:7.4f}"
        f" {report.macro_recall:7.4f} {report.macro_f1:7.4f}"
    )

worst = min(reports["fully_supervised"].per_class, key=lambda row: row["f1"])
print(
    f"\nhardest class under full supervision: {worst['class']}"
    f" (P {worst['precision']:.3f}, R {worst['recall']:.3f}, F1 {worst['f1']:.3f})"
)

print("\nconfusion matrix (fully supervised), first 6 classes:")
for row in reports["fully_supervised"].confusion[:6]:
    print("  " + " ".join(f"{v:3d}" for v in row[:6]))

# Kernel coverage and in-model truncation
# -----------------------------------------
# The learnable decay window tells us how much of each kernel a block
# actually uses: threshold the window at 0.05 and measure the surviving
# diameter relative to the feature-map extent (kernels span 2F-1, so
# coverage can reach 2).  Truncation then zeroes kernels outside a chosen
# relative diameter at inference, without retraining.
#
# Trains a micro model first (about a minute).

import numpy as np

from fftmix import (
    DatasetSpec,
    TrainConfig,
    build_model,
    coverage_report,
    micro_config,
    train,
    truncate_kernels,
)
from fftmix.training import evaluate_accuracy, load_dataset

model = build_model(micro_config("global2d"), seed=0)
data = DatasetSpec(train_size=2048, val_size=256, seed=1)
train(model, data, TrainConfig(lr_peak=2e-3, total_epochs=8, warmup_epochs=1, seed=0))

print("coverage after training (threshold 0.05):")
for row in coverage_report(model).rows:
    print(f"  stage {row.stage} block {row.block}: "
          f"diameter {row.diameter:5.1f}  coverage {row.coverage:.2f}")

_, _, val_x, val_y = load_dataset(data)
print("\ntruncation sweep on stage 3:")
for rel in (2.0, 1.0, 0.5, 0.1):
    acc = evaluate_accuracy(truncate_kernels(model, 3, rel), val_x, val_y)
    print(f"  relative size {rel:3.1f}: val_acc {acc:.3f}")

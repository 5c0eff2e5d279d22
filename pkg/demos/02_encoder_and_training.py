#!/usr/bin/env python3
"""Build the miniature text classifier and fine-tune it on synthetic data.

Run:  python demos/02_encoder_and_training.py   (about half a minute)
"""

import numpy as np

from selfdistill.data import SyntheticSpec, make_batch, make_synthetic, prepare_task
from selfdistill.distill import DistillConfig, TrainConfig, fine_tune
from selfdistill.encoder import ModelConfig, init_params, predict_proba

model = ModelConfig(vocab_size=300, max_len=16, dim=32, n_layers=2, n_heads=2,
                    ffn_dim=64, n_classes=4, dropout_p=0.1)
print("model:", model)

spec = SyntheticSpec(n_classes=4, vocab_span=150, tokens_per_example=10,
                     signal=0.8, label_noise=0.0, n_train=800, n_test=400)
task = prepare_task(make_synthetic(spec, seed=7), vocab_size=model.vocab_size)
print(f"task: {len(task.train)} train / {len(task.test)} test examples, "
      f"vocab {len(task.vocab)}")

params = init_params(model, seed=0)
batch = make_batch(task.test.examples[:4], task.vocab, model.max_len)
probs = predict_proba(params, batch, model)
print("\nfresh model probabilities (rows ~ uniform):")
print(np.round(probs, 3))

print("\nfine-tuning (plain cross-entropy)...")
result = fine_tune(model, DistillConfig(mode="baseline"),
                   TrainConfig(epochs=3, micro_batch=8, accum_steps=2),
                   task, seed=0)
for point in result.report.epoch_curve:
    print(f"  epoch {point.epoch}: test error {point.test_error:.3f}, "
          f"mean CE {point.mean_ce:.3f}, lr {point.lr:.2e}")

probs = predict_proba(result.student, batch, model)
print("\ntrained model probabilities on the same examples:")
print(np.round(probs, 3))
print("gold labels:", batch.labels)

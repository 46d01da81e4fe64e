"""
Training the toy counter on synthetic crowds
============================================

A three-layer convolutional network, written with plain numpy, learns to
turn noisy blob images into density maps. The run here is short and uses a
subset of the synth-v1 benchmark so it finishes in well under a minute.
"""

import os
from dataclasses import replace

from bayescount import LossConfig
from bayescount.synth import SYNTH_V1, evaluate, generate_dataset
from bayescount.toy import TrainConfig, forward, save_checkpoint, train
from bayescount.scene import write_pgm

OUT = os.environ.get("DEMO_OUT", "demo_output")
os.makedirs(OUT, exist_ok=True)

spec = replace(SYNTH_V1, n_train=40, n_test=20)
train_set, test_set = generate_dataset(spec)
print("train counts:", [s.n for _, s in train_set[:10]], "...")

###############################################################################
# Plain Bayesian loss with a tight likelihood. The trace holds the mean
# per-image loss of each epoch.

cfg = TrainConfig(loss="bayes", epochs=8, lr=1e-2, loss_cfg=LossConfig(sigma=1.0), seed=0)
model, trace = train(train_set, cfg, on_epoch=lambda e, m, v: print(f"epoch {e}: {v:.3f}"))
report = evaluate(model, test_set)
print(f"held-out MAE {report.mae:.3f}, MSE {report.mse:.3f} over {report.k} images")

###############################################################################
# Save the weights and the estimated map of the first held-out image.

save_checkpoint(model, os.path.join(OUT, "toy.ckpt"))
x, scene = test_set[0]
density = forward(model, x)
print(f"image 0: {scene.n} heads, estimated {density.sum():.2f}")
write_pgm(os.path.join(OUT, "input0.pgm"), x)
write_pgm(os.path.join(OUT, "density0.pgm"), density)

"""
Posterior label maps and entropy
================================

Each annotated head claims nearby cells through a Gaussian likelihood. With
background modelling on, cells far from every head go to an extra label.
This script builds a small scene, looks at the label posteriors and writes
the entropy map as a PGM image.
"""

import math
import os

import numpy as np

from bayescount import LossConfig, Point2, Scene
from bayescount.posterior import entropy_map, posterior, posterior_at
from bayescount.scene import write_pgm

OUT = os.environ.get("DEMO_OUT", "demo_output")
os.makedirs(OUT, exist_ok=True)

###############################################################################
# Two heads eight cells apart. A point sitting on the first head is shared
# in the ratio exp(0) : exp(-1/2).

scene = Scene(32, 32, (Point2(0, 0), Point2(0, 8)))
print(posterior_at([0.0], [0.0], scene, LossConfig(sigma=8))[:, 0])

###############################################################################
# A busier scene with the background label. Rows of the posterior block are
# the heads in order, then the background.

rng = np.random.default_rng(3)
crowd = Scene(48, 64, tuple(Point2(*rng.uniform((8, 8), (40, 56))) for _ in range(12)))
cfg = LossConfig(sigma=4.0, background=True)  # margin = 0.15 * 48 cells
block = posterior(crowd, cfg)
print("labels x cells:", block.probs.shape)
print("column sums within", np.abs(block.probs.sum(axis=0) - 1).max(), "of one")
bg = block.probs[-1].reshape(crowd.shape)
print("background share at the corner cell:", round(float(bg[0, 0]), 4))

###############################################################################
# Entropy is zero where one label wins outright and peaks along the borders
# between heads. It never exceeds the log of the label count.

ent = entropy_map(crowd, cfg)
print("entropy range:", ent.min(), ent.max(), "cap:", math.log(crowd.n + 1))
lo, hi = write_pgm(os.path.join(OUT, "entropy.pgm"), ent)
print("wrote", os.path.join(OUT, "entropy.pgm"), "with bounds", (lo, hi))

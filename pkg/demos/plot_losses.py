"""
Expected counts versus pixel-wise density targets
=================================================

Compares the two ways of supervising a density map from point labels. The
Gaussian target route builds a smooth "ground-truth" map and regresses onto
it cell by cell. The Bayesian route only asks that each head's posterior
weighted mass comes out close to one.
"""

import numpy as np

from bayescount import LossConfig, Point2, Scene
from bayescount.losses import (
    AdaptiveKernel,
    FixedKernel,
    baseline_density,
    baseline_loss,
    bayes_loss,
    expected_counts,
    total_count,
)

scene = Scene(24, 24, (Point2(6, 6), Point2(6, 10), Point2(18, 17)))

###############################################################################
# Gaussian targets: every head contributes unit mass, whatever the kernel.

for kernel in (FixedKernel(1.0), FixedKernel(8.0), AdaptiveKernel(beta=0.3)):
    g = baseline_density(scene, kernel)
    print(f"{kernel}: total mass {total_count(g):.12f}, peak {g.values.max():.4f}")

###############################################################################
# Put exactly one unit of mass on each head's cell. The isolated head gets
# an expected count of exactly one. The two close heads claim part of each
# other's unit, which is all the Bayesian loss sees. The pixel loss against a
# wide Gaussian target is far larger because the mass is not spread out.

est = np.zeros(scene.shape)
for p in scene.points:
    est[int(p.row), int(p.col)] += 1.0

cfg = LossConfig(sigma=2.0)
print("expected counts:", expected_counts(scene, est, cfg).per_head)
print("bayes loss:", bayes_loss(scene, est, cfg).value)
print("pixel loss vs sigma=8 target:", baseline_loss(baseline_density(scene, FixedKernel(8.0)), est).value)

###############################################################################
# The counts always add up to the map total, background included. Spread
# mass uniformly and see where it lands.

flat = np.full(scene.shape, 3.0 / scene.height / scene.width)
ec = expected_counts(scene, flat, LossConfig(sigma=2.0, background=True, margin_d=4.0))
print("per head", np.round(ec.per_head, 4), "background", round(ec.background, 4), "total", ec.total)

###############################################################################
# An image with no heads is penalised by its total mass directly.

lv = bayes_loss(Scene(24, 24), flat, LossConfig())
print("empty scene loss:", lv.value, "gradient entries:", np.unique(lv.gradient))

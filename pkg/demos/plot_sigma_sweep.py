"""
A miniature sigma sweep
=======================

Trains one model per (sigma, loss) pair on a reduced benchmark and reports
held-out MAE. The full-size version of this experiment lives in the
acceptance suite and the ``bayescount sweep`` command.
"""

from dataclasses import replace

from bayescount.synth import SYNTH_V1, SweepConfig, mean_mae, relative_spread, rows_to_csv, run_sweep
from bayescount.toy import TrainConfig

sigmas = (1.0, 4.0, 16.0)
cfg = SweepConfig(
    kind="sigma",
    settings=sigmas,
    losses=("bayes", "baseline"),
    seeds=(0,),
    spec=replace(SYNTH_V1, n_train=40, n_test=20),
    train=TrainConfig(epochs=20, lr=3e-3),
)
rows = run_sweep(cfg)
print(rows_to_csv(rows))

###############################################################################
# How much does each loss care about the kernel width? With one seed and
# 40 training images the numbers are noisy; treat them as a smoke run.

mm = mean_mae(rows)
for loss in cfg.losses:
    curve = [mm[(s, loss)] for s in sigmas]
    print(loss, [round(v, 2) for v in curve], "relative spread", round(relative_spread(curve), 3))

"""Synthetic crowd scenes, annotation noise, count metrics, and sweeps."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .scene import LossConfig, Point2, Scene, ValidationError
from .toy import LOSSES, TrainConfig, predict_counts, train

MAX_REJECTIONS = 10_000
CSV_HEADER = ("setting", "loss", "seed", "mae", "mse")
THREADS_ENV = "BAYESCOUNT_THREADS"


class SamplingError(RuntimeError):
    """Head positions could not be placed at the requested separation."""


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic benchmark.

    Scene ``k`` is drawn from its own stream seeded by ``(seed, k)``, so any
    single scene can be regenerated without the others.  Scenes
    ``0..n_train-1`` form the training split and the next ``n_test`` the
    held-out split.
    """

    height: int = 64
    width: int = 64
    count_range: tuple = (1, 30)
    min_separation: float = 3.0
    blob_radius: tuple = (0.8, 1.2)
    noise: float = 0.05
    seed: int = 7
    n_train: int = 200
    n_test: int = 50
    name: str = "custom"

    def __post_init__(self):
        lo, hi = self.count_range
        if lo < 0 or hi < lo:
            raise ValidationError(f"bad count range {self.count_range}")
        rlo, rhi = self.blob_radius
        if not 0 < rlo <= rhi:
            raise ValidationError(f"bad blob radius range {self.blob_radius}")
        if self.height < 1 or self.width < 1 or self.min_separation < 0 or self.noise < 0:
            raise ValidationError("grid size, separation and noise must be nonnegative")


SYNTH_V1 = SynthSpec(name="synth-v1")
SPECS = {"synth-v1": SYNTH_V1}


def generate_scene(spec, index=0):
    """Draw one ``(input grid, Scene)`` pair.

    The input is a sum of unit-peak Gaussian blobs of random radius, one per
    head, plus uniform noise in ``[0, spec.noise]``, clipped to ``[0, 1]``.
    """
    rng = np.random.default_rng([spec.seed, index])
    n = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
    heads = []
    rejections = 0
    while len(heads) < n:
        cand = (rng.uniform(0.5, spec.height - 0.5), rng.uniform(0.5, spec.width - 0.5))
        if all((cand[0] - r) ** 2 + (cand[1] - c) ** 2 >= spec.min_separation ** 2
               for r, c in heads):
            heads.append(cand)
            continue
        rejections += 1
        if rejections > MAX_REJECTIONS:
            raise SamplingError(
                f"placed {len(heads)} of {n} heads at separation {spec.min_separation}")
    radii = rng.uniform(spec.blob_radius[0], spec.blob_radius[1], size=n)
    rows = np.arange(spec.height)[:, None] + 0.5
    cols = np.arange(spec.width)[None, :] + 0.5
    img = np.zeros((spec.height, spec.width))
    for (r, c), rad in zip(heads, radii):
        img += np.exp(-((rows - r) ** 2 + (cols - c) ** 2) / (2.0 * rad * rad))
    img += rng.uniform(0.0, spec.noise, size=img.shape)
    np.clip(img, 0.0, 1.0, out=img)
    scene = Scene(spec.height, spec.width, tuple(Point2(r, c) for r, c in heads))
    return img, scene


def generate_dataset(spec):
    """``(train, test)`` lists of ``(input, Scene)`` pairs."""
    pairs = [generate_scene(spec, k) for k in range(spec.n_train + spec.n_test)]
    return pairs[:spec.n_train], pairs[spec.n_train:]


def perturb_annotations(scene, deviation, seed=0):
    """Shift each head by i.i.d. uniform offsets in ``+-deviation * height``
    per axis, clamped to the grid."""
    if deviation < 0:
        raise ValidationError("deviation must be nonnegative")
    if deviation == 0 or scene.n == 0:
        return scene
    rng = np.random.default_rng(seed)
    span = deviation * scene.height
    pts = scene.points_array() + rng.uniform(-span, span, size=(scene.n, 2))
    pts[:, 0] = np.clip(pts[:, 0], 0.0, scene.height)
    pts[:, 1] = np.clip(pts[:, 1], 0.0, scene.width)
    return scene.with_points(Point2(float(r), float(c)) for r, c in pts)


@dataclass(frozen=True)
class MetricsReport:
    per_image: tuple
    mae: float
    mse: float

    @property
    def k(self):
        return len(self.per_image)


def metrics(per_image):
    """MAE and root-mean-square error of ``(true count, estimated count)`` pairs."""
    pairs = tuple((float(n), float(c)) for n, c in per_image)
    if not pairs:
        raise ValidationError("metrics need at least one image")
    errs = [abs(n - c) for n, c in pairs]
    mae = math.fsum(errs) / len(errs)
    mse = math.sqrt(math.fsum(e * e for e in errs) / len(errs))
    # rounding can put a constant-error mse one ulp below mae
    return MetricsReport(pairs, mae, max(mse, mae))


def evaluate(model, dataset):
    counts = predict_counts(model, [x for x, _ in dataset])
    return metrics([(scene.n, c) for (_, scene), c in zip(dataset, counts)])


# -- sweeps ----------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    """One sweep: every ``(setting, loss, seed)`` triple is a training run.

    ``kind`` is ``"sigma"`` (settings are kernel widths), ``"noise"``
    (settings are annotation deviations as fractions of grid height) or
    ``"loss-compare"`` (one unnamed setting).
    """

    kind: str = "loss-compare"
    settings: tuple = ()
    losses: tuple = LOSSES
    seeds: tuple = (0, 1, 2)
    spec: SynthSpec = SYNTH_V1
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.kind not in ("sigma", "noise", "loss-compare"):
            raise ValidationError(f"unknown sweep kind {self.kind!r}")
        if self.kind != "loss-compare" and not self.settings:
            raise ValidationError(f"{self.kind} sweep needs at least one setting")
        for loss in self.losses:
            if loss not in LOSSES:
                raise ValidationError(f"unknown loss {loss!r}")

    def grid(self):
        settings = self.settings if self.kind != "loss-compare" else ("default",)
        return [(s, loss, seed) for s in settings for loss in self.losses for seed in self.seeds]


@dataclass(frozen=True)
class SweepRow:
    setting: object
    loss: str
    seed: int
    mae: float
    mse: float


def _fmt6(x):
    return "%.6g" % x


def _run_point(cfg, setting, loss, seed, data=None):
    train_set, test_set = generate_dataset(cfg.spec) if data is None else data
    tcfg = replace(cfg.train, loss=loss, seed=seed)
    if cfg.kind == "sigma":
        tcfg = replace(tcfg, loss_cfg=replace(tcfg.loss_cfg, sigma=float(setting)))
    elif cfg.kind == "noise":
        train_set = [(x, perturb_annotations(s, float(setting), seed=(seed, k)))
                     for k, (x, s) in enumerate(train_set)]
    model, _ = train(train_set, tcfg)
    report = evaluate(model, test_set)
    return SweepRow(setting, loss, seed, report.mae, report.mse)


def _run_point_star(args):
    return _run_point(*args)


def worker_count(default=None):
    """Worker processes for sweeps: the core count, capped by ``BAYESCOUNT_THREADS``."""
    cores = default if default is not None else (os.cpu_count() or 1)
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return max(1, cores)
    try:
        return max(1, min(cores, int(raw)))
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def run_sweep(cfg, workers=None):
    """Train and evaluate every grid point; rows come back in grid order."""
    workers = worker_count() if workers is None else workers
    points = cfg.grid()
    if workers <= 1 or len(points) <= 1:
        data = generate_dataset(cfg.spec)
        return [_run_point(cfg, *p, data=data) for p in points]
    with ProcessPoolExecutor(max_workers=min(workers, len(points))) as ex:
        return list(ex.map(_run_point_star, [(cfg, *p) for p in points]))


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        setting = _fmt6(r.setting) if isinstance(r.setting, (int, float)) else r.setting
        w.writerow([setting, r.loss, r.seed, _fmt6(r.mae), _fmt6(r.mse)])
    return buf.getvalue()


def rows_from_csv(text):
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != CSV_HEADER:
        raise ValidationError(f"unexpected sweep CSV header {header}")
    out = []
    for rec in reader:
        setting, loss, seed, mae, mse = rec
        try:
            setting = float(setting)
        except ValueError:
            pass
        out.append(SweepRow(setting, loss, int(seed), float(mae), float(mse)))
    return out


def mean_mae(rows):
    """Mean MAE over seeds, keyed by ``(setting, loss)``."""
    groups = {}
    for r in rows:
        groups.setdefault((r.setting, r.loss), []).append(r.mae)
    return {k: math.fsum(v) / len(v) for k, v in groups.items()}


def relative_spread(values):
    values = list(values)
    return (max(values) - min(values)) / min(values)

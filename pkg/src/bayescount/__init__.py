"""Bayesian expected-count loss for point-supervised density estimation."""

from .losses import (
    AdaptiveKernel,
    ExpectedCounts,
    FixedKernel,
    LossValue,
    baseline_density,
    baseline_loss,
    bayes_loss,
    expected_counts,
    total_count,
)
from .posterior import (
    DegenerateDirectionError,
    PosteriorBlock,
    dummy_background_point,
    entropy_map,
    label_logits,
    posterior,
)
from .scene import (
    DensityGrid,
    FormatError,
    LossConfig,
    Point2,
    Scene,
    ShapeMismatchError,
    ValidationError,
    read_density,
    read_scene,
    write_density,
    write_scene,
)
from .synth import (
    SYNTH_V1,
    MetricsReport,
    SynthSpec,
    generate_dataset,
    generate_scene,
    metrics,
    perturb_annotations,
    run_sweep,
)
from .toy import ToyModel, TrainConfig, backward, forward, init_model, train

__version__ = "0.1.0"

from .clipping import clip, clip_scales, microbatch
from .config import DpConfig
from .noise import aggregate_noise, noise_streams, noisy_mean
from .step import StepReport, clipped_sum, dpsgd_step
from .training import Trainer, TrainResult, accuracy, mean_loss, predict

__all__ = [
    "DpConfig",
    "StepReport",
    "TrainResult",
    "Trainer",
    "accuracy",
    "aggregate_noise",
    "clip",
    "clip_scales",
    "clipped_sum",
    "dpsgd_step",
    "mean_loss",
    "microbatch",
    "noise_streams",
    "noisy_mean",
    "predict",
]

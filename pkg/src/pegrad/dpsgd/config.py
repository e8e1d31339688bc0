import math
from dataclasses import dataclass

from pegrad.errors import ConfigError


@dataclass(frozen=True)
class DpConfig:
    """Hyperparameters of one DPSGD run.

    :param clip_norm: l2 threshold ``C`` applied to each per-example (or
        per-microbatch) gradient.
    :param noise_multiplier: Noise standard deviation in units of ``clip_norm``.
    :param learning_rate: Step size applied to the noisy mean gradient.
    :param microbatch_size: Examples averaged before clipping; 1 clips every example.
    :param seed: Seeds the noise streams.
    """

    clip_norm: float = 1.0
    noise_multiplier: float = 1.0
    learning_rate: float = 0.1
    microbatch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")
        if not (self.noise_multiplier >= 0 and math.isfinite(self.noise_multiplier)):
            raise ConfigError(f"noise_multiplier must be finite and non-negative, got {self.noise_multiplier}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if int(self.microbatch_size) != self.microbatch_size or self.microbatch_size < 1:
            raise ConfigError(f"microbatch_size must be a positive integer, got {self.microbatch_size}")

    @property
    def noise_std(self) -> float:
        """Per-coordinate standard deviation of the noise added to the clipped sum."""
        return self.noise_multiplier * self.clip_norm

    def check_batch(self, batch_size: int) -> None:
        if batch_size % self.microbatch_size:
            raise ConfigError(
                f"batch size {batch_size} is not divisible by microbatch size {self.microbatch_size}"
            )

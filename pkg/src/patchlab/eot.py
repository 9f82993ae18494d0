"""Expectation-over-transformation sampling and expected-loss estimation.

Viewing-condition robustness is modeled with three transform components:
spatial jitter of the placement rectangle, brightness scaling of the patch,
and an additive contrast shift of the patch. Brightness/contrast act on the
patch region only; the scenario background is shared by all candidates and
transforming it would perturb every candidate identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError, OracleError
from .imaging import Frame, Patch, Placement, composite


@dataclass(frozen=True)
class EotConfig:
    """Sampling ranges for the transform distribution.

    contrast_range is expressed as a fraction of the 255 channel range (the
    physically plausible reading of a unitless +/-0.05 shift); it is
    converted to channel units when transforms are drawn. k_samples is the
    number of transformed copies averaged per loss estimate.
    """

    k_samples: int = 5
    jitter: int = 5
    brightness_range: tuple[float, float] = (0.9, 1.1)
    contrast_range: tuple[float, float] = (-0.05, 0.05)
    seed: int = 0

    def __post_init__(self):
        if self.k_samples < 1:
            raise InvalidInputError(f"k_samples must be >= 1, got {self.k_samples}")
        if self.jitter < 0:
            raise InvalidInputError(f"jitter must be >= 0, got {self.jitter}")
        if self.brightness_range[0] > self.brightness_range[1]:
            raise InvalidInputError(f"brightness_range low > high: {self.brightness_range}")
        if self.contrast_range[0] > self.contrast_range[1]:
            raise InvalidInputError(f"contrast_range low > high: {self.contrast_range}")


@dataclass(frozen=True)
class Transform:
    """One sampled viewing condition.

    dx/dy shift the placement in pixels; brightness multiplies patch
    channels; contrast is an additive offset already in channel units.
    """

    dx: int = 0
    dy: int = 0
    brightness: float = 1.0
    contrast: float = 0.0


IDENTITY = Transform()


def sample_transforms(config: EotConfig) -> list[Transform]:
    """Draw k_samples transforms, each component independent uniform, seeded.

    Jitter offsets are integers (placements live on the pixel grid), drawn
    uniformly over [-jitter, +jitter] inclusive.
    """
    rng = np.random.default_rng(config.seed)
    out = []
    for _ in range(config.k_samples):
        dx = int(rng.integers(-config.jitter, config.jitter + 1))
        dy = int(rng.integers(-config.jitter, config.jitter + 1))
        brightness = float(rng.uniform(config.brightness_range[0], config.brightness_range[1]))
        contrast = float(rng.uniform(config.contrast_range[0], config.contrast_range[1])) * 255.0
        out.append(Transform(dx=dx, dy=dy, brightness=brightness, contrast=contrast))
    return out


def apply_transform(frame: Frame, placement: Placement, patch: Patch, t: Transform) -> Frame:
    """Composite the patch under one viewing condition.

    The placement shifts by (dx, dy); patch channels map v -> brightness*v +
    contrast and clamp to [0, 255] before compositing.
    """
    mapped = np.clip(patch.pixels * t.brightness + t.contrast, 0.0, 255.0)
    return composite(frame, Patch(mapped), placement.shifted(t.dx, t.dy))


def expected_loss(
    loss_of_frame: Callable[[Frame], float],
    frame: Frame,
    placement: Placement,
    patch: Patch,
    config: EotConfig,
    transforms: Sequence[Transform] | None = None,
) -> float:
    """Mean loss over the K sampled transforms; exactly K loss evaluations.

    A pre-drawn transform list may be supplied (the NES optimizer shares one
    list across an antithetic pair); otherwise transforms are drawn from the
    config seed. The mean is an index-ordered sum, so concurrent evaluation
    of the K samples cannot change the value.
    """
    if transforms is None:
        transforms = sample_transforms(config)
    losses = np.empty(len(transforms), dtype=np.float64)
    for k, t in enumerate(transforms):
        try:
            losses[k] = loss_of_frame(apply_transform(frame, placement, patch, t))
        except Exception as exc:
            raise OracleError(f"loss evaluation failed at eot sample {k}: {exc}") from exc
    return float(np.mean(losses))

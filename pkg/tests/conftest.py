from __future__ import annotations

import numpy as np
import pytest

from patchlab.eot import EotConfig
from patchlab.imaging import Frame, Patch, Placement


@pytest.fixture
def gray_frame():
    return Frame(np.full((16, 16, 3), 120, dtype=np.uint8))


@pytest.fixture
def collapsed_eot():
    """Degenerate transform ranges: EoT becomes the plain composite."""
    return EotConfig(k_samples=1, jitter=0, brightness_range=(1.0, 1.0), contrast_range=(0.0, 0.0), seed=0)


def solid_patch(h, w, rgb):
    pix = np.zeros((h, w, 3), dtype=np.float64)
    pix[:] = np.asarray(rgb, dtype=np.float64)
    return Patch(pix)


def red_patch(h=8, w=8):
    return solid_patch(h, w, (255.0, 0.0, 0.0))

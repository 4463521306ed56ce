import numpy as np
import pytest

from a2net.geometry import Segment
from a2net.network import ModelConfig


def tiny_config(**kw) -> ModelConfig:
    """D=8, T=16, L=3, C=2 with a handful of channels per layer."""
    base = dict(
        input_dim=8,
        num_classes=2,
        input_length=16,
        levels=3,
        base_channels=4,
        level_channels=(4, 5, 6),
        head_channels=4,
        base_reduction=2,
    )
    base.update(kw)
    return ModelConfig(**base)


def tiny_gts():
    # one action per level of the 8-4-2 pyramid (base stride 2)
    return [
        [Segment(1.0, 3.5, 1), Segment(5.0, 10.0, 2)],
        [Segment(0.5, 15.0, 2)],
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

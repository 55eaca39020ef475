import numpy as np
import pytest

from growreg.netcore import LayerSpec, Network


def mlp_specs(hidden, classes=2):
    """Dense stack with a non-prunable linear classifier on top."""
    specs = [LayerSpec("dense", u) for u in hidden]
    specs.append(LayerSpec("dense", classes, activation="none", prunable=False))
    return tuple(specs)


def small_conv_net(seed=0, classes=3):
    return Network.initialize(
        (
            LayerSpec("conv2d", 6, kernel=(3, 3)),
            LayerSpec("conv2d", 5, kernel=(2, 2)),
            LayerSpec("dense", 8),
            LayerSpec("dense", classes, activation="none", prunable=False),
        ),
        (2, 9, 9),
        classes,
        seed=seed,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

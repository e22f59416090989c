"""Shared toy fixtures for the test suite."""

import numpy as np

from qcaps.capsnet import (CapsModel, LayerKind, LayerSpec,
                           randomize_weights)
from qcaps.model_io import LabeledDataset


def toy_model(num_classes=10, seed=None, init_scale=0.05):
    """Small 3-layer capsule model (12x12 input) for fast tests."""
    layers = [
        LayerSpec(LayerKind.CONV, "conv", kernel=3, stride=1, out_channels=4),
        LayerSpec(LayerKind.PRIMARY_CAPS, "primary", kernel=3, stride=2,
                  caps_types=2, d_out=4),
        LayerSpec(LayerKind.FC_CAPS, "classes", num_caps_out=num_classes,
                  d_out=4, uses_dynamic_routing=True, has_bias=False),
    ]
    model = CapsModel(layers, (1, 12, 12), num_classes, name="toy")
    if seed is not None:
        model = randomize_weights(model, seed, init_scale)
    return model


def toy_dataset(n, num_classes=10, seed=0, labels=None):
    gen = np.random.default_rng(seed)
    images = gen.random((n, 1, 12, 12))
    if labels is None:
        labels = gen.integers(0, num_classes, size=n)
    return LabeledDataset(images, np.asarray(labels, dtype=np.int64))

"""Gradient-check suite over every layer kind and every model variant."""
from __future__ import annotations

import numpy as np

from .models import VARIANTS, build_variant
from .nn.gradcheck import grad_check, grad_check_layer
from .nn.layers import Conv1DGrouped, Conv2D, Dense, Flatten, MaxPool, ReLU, Tanh
from .silhouette import TemporalScaleConfig


def _layer_cases(rng):
    # (name, layer, input shape without batch axis)
    return [
        ("conv2d", Conv2D(3, 4, 3, stride=2, pad=1, rng=rng), (3, 7, 9)),
        ("conv2d_valid", Conv2D(2, 3, 5, stride=2, pad=0, rng=rng), (2, 11, 9)),
        ("conv1d_grouped", Conv1DGrouped(6, 12, 5, stride=2, groups=6, rng=rng), (6, 21)),
        ("relu", ReLU(), (3, 5, 6)),
        ("tanh", Tanh(), (3, 5, 6)),
        ("maxpool2d", MaxPool(2, 2, dims=2), (2, 6, 8)),
        ("maxpool1d", MaxPool(2, 2, dims=1), (3, 12)),
        ("flatten", Flatten(), (2, 3, 4)),
        ("dense", Dense(10, 4, rng=rng), (10,)),
    ]


def grad_check_suite(seeds=range(10), image_shape=(24, 32), accel_len=100, n_scales=4,
                     eps=1e-5, variants=VARIANTS, layers=True):
    """Worst relative error per check, over all seeds.

    Returns ``(worst, kinks)``; ``worst`` maps ``"layer:<kind>"`` and
    ``"variant:<name>"`` to the maximum error seen.
    """
    worst, kinks = {}, 0
    scales = TemporalScaleConfig(max(3 ** n_scales, 100), n_scales)
    for seed in seeds:
        if layers:
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), 5]))
            for name, layer, shape in _layer_cases(rng):
                errs, k = grad_check_layer(layer, shape, eps=eps, seed=int(seed))
                kinks += k
                key = f"layer:{name}"
                worst[key] = max(worst.get(key, 0.0), max(errs.values()))
        for v in variants:
            variant = build_variant(v, image_shape, scales, accel_len, seed=int(seed))
            errs, k = grad_check(variant.model, eps=eps, seed=int(seed))
            kinks += k
            key = f"variant:{v}"
            worst[key] = max(worst.get(key, 0.0), max(errs.values()))
    return worst, kinks

"""Named configurations."""

from __future__ import annotations

import copy

DESK_MODEL = {
    "layers": [
        {"type": "linear", "out": 16},
        {"type": "batchnorm"},
        {"type": "activation"},
        {"type": "oac-linear", "out": 16},
        {"type": "batchnorm"},
        {"type": "activation"},
        {"type": "dense-head", "out": 4},
    ],
    "splits": [],
}

# Small blob task over an 8x8 link with 4 streams.
DESK_BLOBS = {
    "model": DESK_MODEL,
    "data": {"blobs": {"class_count": 4, "feature_dim": 16, "separation": 4.0, "variance": 1.0}},
    "mimo": {"n_t": 8, "n_r": 8, "r": 4, "n_paths": 8},
    "snr_db": 20.0,
    "activation": {"kind": "crelu"},
    "optimizer": {"epochs": 30},
}


def _block():
    conv = {"type": "conv", "out": 16, "kernel": 3, "padding": 1}
    return {
        "type": "residual-block",
        "layers": [dict(conv), {"type": "batchnorm"}, {"type": "activation"}, dict(conv), {"type": "batchnorm"}],
    }


# Complex ResNet on CIFAR-10: input conv, six residual blocks of two convs,
# linear output; weight layers 5 and 13 run over independent 64x64 links.
RESNET_CIFAR10 = {
    "model": {
        "layers": [
            {"type": "conv", "out": 16, "kernel": 3, "padding": 1},
            {"type": "batchnorm"},
            {"type": "activation"},
            *[x for _ in range(6) for x in (_block(), {"type": "activation"})],
            {"type": "avgpool"},
            {"type": "dense-head", "out": 10},
        ],
        "splits": [5, 13],
    },
    "data": {"cifar10": "cifar-10-batches-bin"},
    "mimo": {"n_t": 64, "n_r": 64, "r": 8, "n_paths": 8},
    "snr_db": 20.0,
    "activation": {"kind": "qam", "levels": 4, "delta": 1.0},
    "optimizer": {"lr": 0.005, "batch_size": 64, "epochs": 50},
    "mobility": {"rho": 0.0, "update_interval": 50},
}

# 16x16 noiseless link, small enough for finite differences.
GRADCHECK_16 = {
    "model": DESK_MODEL,
    "data": {"blobs": {"class_count": 4, "feature_dim": 16}},
    "mimo": {"n_t": 16, "n_r": 16, "r": 4, "n_paths": 8},
    "snr_db": None,
}

PRESETS = {"desk-blobs": DESK_BLOBS, "resnet-cifar10": RESNET_CIFAR10, "gradcheck-16": GRADCHECK_16}


def preset(name: str) -> dict:
    return copy.deepcopy(PRESETS[name])

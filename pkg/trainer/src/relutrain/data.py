"""Dataset loading for the trainer.

Images are flattened to float64 vectors in [0, 1]; labels become float class
indices (the networks have a scalar regression head).  ``mnist`` and
``cifar10`` use torchvision and need its download mirrors reachable;
``digits`` is the offline stand-in — scikit-learn's 8x8 digit images resized
to 28x28 by nearest neighbour, so it shares MNIST's 784-dimensional input.
"""

from __future__ import annotations

import numpy as np

INPUT_DIMS = {"mnist": 784, "cifar10": 3072, "digits": 784}


class DatasetUnavailable(RuntimeError):
    pass


def _torchvision_pair(name, root):
    from torchvision import datasets

    cls = {"mnist": datasets.MNIST, "cifar10": datasets.CIFAR10}[name]
    try:
        train = cls(root, train=True, download=True)
        test = cls(root, train=False, download=True)
    except Exception as exc:  # torchvision raises bare RuntimeError on failure
        raise DatasetUnavailable(f"cannot obtain {name}: {exc}") from exc

    def flat(ds):
        xs = np.asarray(ds.data, dtype=np.float64) / 255.0
        ys = np.asarray(ds.targets, dtype=np.float64)
        return xs.reshape(xs.shape[0], -1), ys

    return flat(train), flat(test)


def _digits_pair():
    from sklearn.datasets import load_digits

    bunch = load_digits()
    idx = np.arange(28) * 8 // 28  # nearest-neighbour 8x8 -> 28x28
    imgs = bunch.images[:, idx][:, :, idx] / 16.0
    xs = imgs.reshape(imgs.shape[0], -1).astype(np.float64)
    ys = bunch.target.astype(np.float64)
    cut = int(0.9 * xs.shape[0])
    return (xs[:cut], ys[:cut]), (xs[cut:], ys[cut:])


def load_dataset(name, root="~/.cache/relutrain"):
    """(train_xs, train_ys), (test_xs, test_ys) for a known dataset name."""
    name = name.lower()
    if name not in INPUT_DIMS:
        raise ValueError(f"unknown dataset {name!r}; choose from {sorted(INPUT_DIMS)}")
    if name == "digits":
        return _digits_pair()
    import os

    return _torchvision_pair(name, os.path.expanduser(root))

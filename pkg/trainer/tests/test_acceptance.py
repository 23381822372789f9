"""End-to-end acceptance: train, export, and extract the trained network.

Needs the extraction package (`reluxtract`, developed alongside in the parent
directory) installed; the hand-off between the two implementations is the
RELUXT1 model file.
"""

import time

import numpy as np
import pytest
import torch

pytest.importorskip("reluxtract")

from relutrain.data import load_dataset
from relutrain.modelio import read_model
from relutrain.train import TrainSpec, train_and_export


def _torch_forward64(ws, bs, xs):
    h = torch.tensor(xs, dtype=torch.float64)
    for w, b in zip(ws[:-1], bs[:-1]):
        h = torch.relu(h @ torch.tensor(w).T + torch.tensor(b))
    return (h @ torch.tensor(ws[-1]).T + torch.tensor(bs[-1])).numpy()


@pytest.mark.slow
def test_s1_trained_target_extraction(tmp_path):
    """Train a 784-wide eight-hidden-layer scalar-head network, export it,
    re-load it with the extraction package, and attack layers 1-4 with 3000
    critical points each: weight recovery >= 95% per layer and the two
    implementations' forward passes agree within 1e-6 relative."""
    from reluxtract.attack import attack_layer
    from reluxtract.config import AttackConfig
    from reluxtract.evaluation import recovery_rate
    from reluxtract.network import forward_batch, load_model
    from reluxtract.oracle import Oracle
    from reluxtract.prefix import ExtractedPrefix

    start = time.monotonic()
    out = tmp_path / "target.reluxt"
    spec = TrainSpec(
        dataset="digits",
        architecture="784-8-8-8-8-8-8-8-8-1",
        seed=7,
        output=str(out),
    )
    data = load_dataset("digits")
    train_and_export(spec, data=data)

    ws, bs = read_model(out)
    model = load_model(out)
    (_, _), (test_xs, _) = data
    xs = test_xs[:100]
    own = _torch_forward64(ws, bs, xs)
    theirs = forward_batch(model, xs)
    rel = np.max(np.abs(theirs - own) / np.maximum(np.abs(own), 1e-3))
    assert rel <= 1e-6, f"cross-implementation forward disagrees: {rel:.2e}"

    config = AttackConfig(
        critical_points_count=3000,
        critical_points_count_layer1=3000,
        signs_mode="ground-truth",
    )
    rates = {}
    for layer in range(1, 5):
        oracle = Oracle(model)
        prefix = ExtractedPrefix.from_truth(model, layer)
        res = attack_layer(oracle, prefix, config, layer_width=8, truth=model)
        rates[layer] = recovery_rate(res.recovered.masks)
        assert rates[layer] >= 0.95, f"layer {layer} recovery {rates[layer]:.2%}"

    elapsed = time.monotonic() - start
    rate_txt = " ".join(f"{l}:{r:.1%}" for l, r in sorted(rates.items()))
    print(
        f"\nS1 PASS trained-target extraction: forward agreement {rel:.2e}, "
        f"recovery per layer [{rate_txt}], {elapsed:.0f}s"
    )

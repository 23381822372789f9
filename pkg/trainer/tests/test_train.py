import numpy as np
import pytest
import torch

from relutrain.data import load_dataset
from relutrain.modelio import forward, read_model
from relutrain.train import TrainSpec, train, train_and_export


def test_spec_validation():
    with pytest.raises(ValueError):
        TrainSpec(dataset="digits", architecture="100-8-1")  # wrong input width
    with pytest.raises(ValueError):
        TrainSpec(dataset="digits", architecture="784-8-2")  # non-scalar head
    with pytest.raises(ValueError):
        TrainSpec(dataset="nope", architecture="784-8-1")
    with pytest.raises(ValueError):
        TrainSpec(dataset="digits", architecture="784-x-1")
    with pytest.raises(ValueError):
        TrainSpec(dataset="digits", architecture="784-8-1", epochs=0)
    spec = TrainSpec(dataset="DIGITS", architecture="784-8-8-1")
    assert spec.widths == (784, 8, 8, 1)


def test_bad_schedule_rejected():
    spec = TrainSpec(
        dataset="digits", architecture="784-4-1", epochs=1, schedule="warmup:1"
    )
    with pytest.raises(ValueError):
        train(spec, data=load_dataset("digits"))


@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("m") / "model.reluxt"
    spec = TrainSpec(
        dataset="digits",
        architecture="784-8-8-1",
        epochs=3,
        seed=5,
        output=str(out),
        liveness_weight=0.1,
    )
    data = load_dataset("digits")
    metrics = train_and_export(spec, data=data)
    return spec, data, metrics, out


def test_export_shapes_and_sidecar(short_run):
    spec, _, metrics, out = short_run
    ws, bs = read_model(out)
    assert [w.shape for w in ws] == [(8, 784), (8, 8), (1, 8)]
    assert [b.shape for b in bs] == [(8,), (8,), (1,)]
    sidecar = (str(out) + ".metrics",)
    lines = open(sidecar[0]).read().splitlines()
    keys = {ln.split("\t")[0] for ln in lines}
    assert {"train_mse", "test_mse"} <= keys
    assert metrics["test_mse"] >= 0.0


def test_cross_implementation_forward_agreement(short_run):
    """Export -> load -> numpy forward matches the trainer's own torch
    forward of the cast checkpoint within 1e-6 relative on 100 held-out
    images (the cast from float32 training precision is one-way; both sides
    evaluate the same 64-bit weights)."""
    spec, data, _, out = short_run
    (_, _), (test_xs, _) = data
    xs = test_xs[:100]
    ws, bs = read_model(out)
    got = forward(ws, bs, xs)[:, 0]
    tws = [torch.tensor(w, dtype=torch.float64) for w in ws]
    tbs = [torch.tensor(b, dtype=torch.float64) for b in bs]
    h = torch.tensor(xs, dtype=torch.float64)
    for w, b in zip(tws[:-1], tbs[:-1]):
        h = torch.relu(h @ w.T + b)
    own = (h @ tws[-1].T + tbs[-1])[:, 0].numpy()
    denom = np.maximum(np.abs(own), 1e-3)
    assert np.max(np.abs(got - own) / denom) <= 1e-6


def test_deterministic_export(short_run, tmp_path):
    spec, data, _, out = short_run
    spec2 = TrainSpec(
        dataset=spec.dataset,
        architecture=spec.architecture,
        epochs=spec.epochs,
        seed=spec.seed,
        output=str(tmp_path / "again.reluxt"),
        liveness_weight=spec.liveness_weight,
    )
    train_and_export(spec2, data=data)
    first = open(out).read()
    again = open(spec2.output).read()
    assert first == again

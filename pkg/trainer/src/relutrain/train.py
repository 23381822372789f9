"""Training and bit-exact export of small ReLU regression networks.

The head is scalar: labels are regressed as class_index / (n_classes - 1).
Inputs are mean-centered during training and the centering is folded into the
first-layer bias at export, so the exported network consumes raw [0, 1]
pixels.  A liveness regularizer on uniform-noise batches keeps each hidden
neuron's activation fraction away from 0 and 1 over the input hypercube —
without it, narrow deep ReLU stacks saturate there and carry no recoverable
boundary structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .data import INPUT_DIMS, load_dataset
from .modelio import write_model


@dataclass
class TrainSpec:
    dataset: str
    architecture: str  # e.g. "784-8-8-8-8-8-8-8-8-1"
    epochs: int = 240
    schedule: str = "step:0.003:0.5:60"  # constant:LR or step:LR:GAMMA:EVERY
    seed: int = 0
    output: str = "model.reluxt"
    batch_size: int = 64
    liveness_weight: float = 0.3

    widths: tuple = field(init=False)

    def __post_init__(self):
        self.dataset = self.dataset.lower()
        try:
            self.widths = tuple(int(t) for t in self.architecture.split("-"))
        except ValueError as exc:
            raise ValueError(f"bad architecture {self.architecture!r}") from exc
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ValueError(f"bad architecture {self.architecture!r}")
        expect = INPUT_DIMS.get(self.dataset)
        if expect is None:
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.widths[0] != expect:
            raise ValueError(
                f"architecture input width {self.widths[0]} does not match "
                f"{self.dataset} ({expect} flattened pixels)"
            )
        if self.widths[-1] != 1:
            raise ValueError("the regression head must have a single output")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")


def _build(widths, generator):
    lins = []
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        lin = torch.nn.Linear(d_in, d_out)
        with torch.no_grad():
            bound = (2.0 / d_in) ** 0.5 * 1.6
            lin.weight.uniform_(-bound, bound, generator=generator)
            lin.bias.uniform_(-0.05, 0.05, generator=generator)
        lins.append(lin)
    return lins


def _forward(lins, h):
    for i, lin in enumerate(lins):
        h = lin(h)
        if i < len(lins) - 1:
            h = torch.relu(h)
    return h


def _liveness_penalty(lins, noise):
    """Push every hidden neuron's activation fraction on noise toward 1/2.

    The sigmoid term measures the fraction directly but its gradient dies for
    saturated neurons; the normalized-mean term keeps pulling those back."""
    h = noise
    pen = 0.0
    for lin in lins[:-1]:
        z = lin(h)
        frac = torch.sigmoid(z / 0.05).mean(dim=0)
        scale = z.std(dim=0) + 1e-3
        pen = pen + ((frac - 0.5) ** 2).mean() + 0.2 * ((z.mean(dim=0) / scale) ** 2).mean()
        h = torch.relu(z)
    return pen


def _make_scheduler(optimizer, schedule, epochs):
    parts = schedule.split(":")
    kind = parts[0]
    if kind == "constant" and len(parts) == 2:
        return float(parts[1]), torch.optim.lr_scheduler.ConstantLR(
            optimizer, factor=1.0, total_iters=epochs
        )
    if kind == "step" and len(parts) == 4:
        return float(parts[1]), torch.optim.lr_scheduler.StepLR(
            optimizer, step_size=int(parts[3]), gamma=float(parts[2])
        )
    raise ValueError(f"bad schedule {schedule!r}; use constant:LR or step:LR:GAMMA:EVERY")


def train(spec, data=None):
    """Train per the spec; returns (float64 weights, float64 biases, metrics).

    Training runs in float32; the cast to float64 at the end is explicit and
    one-way (the exported file is the 64-bit image of the 32-bit checkpoint).
    """
    if data is None:
        data = load_dataset(spec.dataset)
    (train_xs, train_ys), (test_xs, test_ys) = data
    y_scale = max(float(train_ys.max()), 1.0)
    mu = train_xs.mean(axis=0)
    torch.manual_seed(spec.seed)
    generator = torch.Generator().manual_seed(spec.seed)
    lins = _build(spec.widths, generator)
    xs = torch.tensor(train_xs - mu, dtype=torch.float32)
    ys = torch.tensor(train_ys / y_scale, dtype=torch.float32)[:, None]
    mu_t = torch.tensor(mu, dtype=torch.float32)
    params = [p for lin in lins for p in lin.parameters()]
    optimizer = torch.optim.Adam(params)
    lr, scheduler = _make_scheduler(optimizer, spec.schedule, spec.epochs)
    for group in optimizer.param_groups:
        group["lr"] = lr
    loss_fn = torch.nn.MSELoss()
    n = xs.shape[0]
    final_loss = float("nan")
    for _epoch in range(spec.epochs):
        order = torch.randperm(n, generator=generator)
        total = 0.0
        for start in range(0, n, spec.batch_size):
            batch = order[start : start + spec.batch_size]
            optimizer.zero_grad()
            task = loss_fn(_forward(lins, xs[batch]), ys[batch])
            loss = task
            if spec.liveness_weight > 0.0:
                noise = torch.rand(256, spec.widths[0], generator=generator) - mu_t
                loss = loss + spec.liveness_weight * _liveness_penalty(lins, noise)
            loss.backward()
            optimizer.step()
            total += float(task.detach()) * batch.shape[0]
        scheduler.step()
        final_loss = total / n
    weights = [lin.weight.detach().numpy().astype(np.float64) for lin in lins]
    biases = [lin.bias.detach().numpy().astype(np.float64) for lin in lins]
    biases[0] = biases[0] - weights[0] @ mu  # exported net takes raw inputs
    with torch.no_grad():
        pred = _forward(lins, torch.tensor(test_xs - mu, dtype=torch.float32))
    err = pred[:, 0].numpy().astype(np.float64) * y_scale - test_ys
    metrics = {
        "train_mse": final_loss * y_scale**2,
        "test_mse": float((err**2).mean()),
        "label_scale": y_scale,
    }
    return weights, biases, metrics


def train_and_export(spec, data=None):
    """Train, export to `spec.output`, and write the sidecar metrics file."""
    weights, biases, metrics = train(spec, data=data)
    write_model(spec.output, weights, biases)
    with open(spec.output + ".metrics", "w") as fh:
        for key in sorted(metrics):
            fh.write(f"{key}\t{metrics[key]!r}\n")
    return metrics

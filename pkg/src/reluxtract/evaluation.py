"""Extraction-quality metrics.

White-box by design: the true model is consulted to measure weight recovery,
coverage of the input space, functional agreement on the recovered space, and
to classify every unrecovered weight into one of four causes (its previous
neuron never fires; the pair never fires together; the pair never disagrees
the informative way; or it simply needed more queries).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import forward_batch


def _hidden_widths(model):
    return list(model.widths[1:-1])


def _all_hidden(model, xs):
    """Post-activation values of every hidden layer for a batch of inputs."""
    h = xs
    out = []
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ w.T + b, 0.0)
        out.append(h)
    return out

ALWAYS_OFF = "always-off"
UNREACHABLE_INACTIVE = "unreachable-inactive"
UNREACHABLE_ACTIVE = "unreachable-active"
QUERY_INTENSIVE = "query-intensive"
CLASSES = (ALWAYS_OFF, UNREACHABLE_INACTIVE, UNREACHABLE_ACTIVE, QUERY_INTENSIVE)

_CHUNK = 20000


@dataclass
class TaxonomyEntry:
    layer: int
    neuron: int  # target neuron j of weight a_{j,k}^{(i)}
    prev: int  # source neuron k in layer i-1
    input_activation: float
    plus_plus: float
    plus_minus: float
    klass: str = ""

    def __post_init__(self):
        if not self.klass:
            self.klass = _classify(
                self.input_activation, self.plus_plus, self.plus_minus
            )
        expected = _classify(self.input_activation, self.plus_plus, self.plus_minus)
        if self.klass != expected:
            raise ValueError(
                f"class {self.klass!r} does not match fractions "
                f"({self.input_activation}, {self.plus_plus}, {self.plus_minus})"
            )


def _classify(inp, pp, pm, threshold=0.0):
    if inp <= threshold:
        return ALWAYS_OFF
    if pp <= threshold:
        return UNREACHABLE_INACTIVE
    if pm <= threshold:
        return UNREACHABLE_ACTIVE
    return QUERY_INTENSIVE


@dataclass
class ActivationFractions:
    """Per-neuron and per-weight activation statistics over uniform samples."""

    samples: int
    neuron: list  # neuron[i-1][k]: fraction activating hidden neuron k of layer i
    plus_plus: list  # plus_plus[i-1][j, k]: both ends of a_{j,k}^{(i)} active
    plus_minus: list  # plus_minus[i-1][j, k]: source active, target inactive

    def input_activation(self, layer, prev):
        """Activation of the source end of a layer-`layer` weight."""
        if layer == 1:
            return 1.0  # raw input coordinates are always passed through
        return float(self.neuron[layer - 2][prev])


def _uniform_chunks(d0, samples, seed, low, high):
    rng = np.random.default_rng(seed)
    remaining = samples
    while remaining > 0:
        n = min(_CHUNK, remaining)
        yield rng.uniform(low, high, size=(n, d0))
        remaining -= n


def activation_tests(truth, samples=200000, seed=0, low=0.0, high=1.0):
    """Neuron activation, both-active and source-active/target-inactive
    fractions for every weight, from uniform input samples."""
    widths = _hidden_widths(truth)
    neuron_counts = [np.zeros(w) for w in widths]
    pp_counts = [
        np.zeros((w, truth.input_dim if i == 0 else widths[i - 1]))
        for i, w in enumerate(widths)
    ]
    pm_counts = [np.zeros_like(c) for c in pp_counts]
    for xs in _uniform_chunks(truth.input_dim, samples, seed, low, high):
        acts = _all_hidden(truth, xs)  # list of (n, d_i) post-activation values
        prev = np.ones_like(xs, dtype=np.float64)  # inputs count as active
        for i, h in enumerate(acts):
            on = (h > 0.0).astype(np.float64)
            neuron_counts[i] += on.sum(axis=0)
            pp_counts[i] += on.T @ prev
            pm_counts[i] += (1.0 - on).T @ prev
            prev = on
    return ActivationFractions(
        samples=samples,
        neuron=[c / samples for c in neuron_counts],
        plus_plus=[c / samples for c in pp_counts],
        plus_minus=[c / samples for c in pm_counts],
    )


def classify_unrecovered(missing, fractions, threshold=0.0):
    """TaxonomyEntry per missing weight (layer, target neuron, source neuron).

    `threshold` > 0 treats tiny fractions as zero (near-always-off mode).
    """
    entries = []
    for layer, j, k in missing:
        inp = fractions.input_activation(layer, k)
        pp = float(fractions.plus_plus[layer - 1][j, k])
        pm = float(fractions.plus_minus[layer - 1][j, k])
        entries.append(
            TaxonomyEntry(
                layer=layer,
                neuron=j,
                prev=k,
                input_activation=inp,
                plus_plus=pp,
                plus_minus=pm,
                klass=_classify(inp, pp, pm, threshold),
            )
        )
    return entries


def _unrecovered_mask(truth, xs, missing_weights, missing_components, layers):
    """Boolean per sample: does it activate anything that was not recovered?"""
    acts = _all_hidden(truth, xs)
    on = [h > 0.0 for h in acts]
    bad = np.zeros(xs.shape[0], dtype=bool)
    for layer, j in missing_components:
        if layer in layers:
            bad |= on[layer - 1][:, j]
    for layer, j, k in missing_weights:
        if layer not in layers:
            continue
        target_on = on[layer - 1][:, j]
        source_on = (
            np.ones(xs.shape[0], dtype=bool) if layer == 1 else on[layer - 2][:, k]
        )
        bad |= target_on & source_on
    return bad


def coverage(
    truth,
    missing_weights,
    missing_components,
    samples=1000000,
    scope="model",
    seed=0,
    low=0.0,
    high=1.0,
):
    """Fraction of uniform samples touching nothing unrecovered.

    `scope` is either "model" or a target layer index; layer scope only counts
    that layer's missing weights and components.
    """
    layers = (
        set(range(1, truth.depth + 1)) if scope == "model" else {int(scope)}
    )
    bad = 0
    for xs in _uniform_chunks(truth.input_dim, samples, seed, low, high):
        bad += int(
            _unrecovered_mask(truth, xs, missing_weights, missing_components, layers).sum()
        )
    return 1.0 - bad / samples


def epsilon_delta(
    truth,
    extracted,
    missing_weights=(),
    missing_components=(),
    samples=1000000,
    epsilon=0.05,
    seed=0,
    low=0.0,
    high=1.0,
):
    """Measured disagreement rate on the recovered part of the input space.

    Returns (delta, n_recovered, n_excluded): delta is the fraction of
    recovered-space samples with relative output error above epsilon;
    near-zero true outputs (|f| < 1e-12) are excluded and counted separately.
    """
    layers = set(range(1, truth.depth + 1))
    exceed = kept = excluded = 0
    for xs in _uniform_chunks(truth.input_dim, samples, seed, low, high):
        bad = _unrecovered_mask(truth, xs, missing_weights, missing_components, layers)
        xs = xs[~bad]
        if xs.shape[0] == 0:
            continue
        y = forward_batch(truth, xs)
        yhat = forward_batch(extracted, xs)
        denom = np.max(np.abs(y), axis=1)
        tiny = denom < 1e-12
        excluded += int(tiny.sum())
        err = np.max(np.abs(yhat - y), axis=1)[~tiny] / denom[~tiny]
        exceed += int((err > epsilon).sum())
        kept += int((~tiny).sum())
    delta = exceed / kept if kept else 0.0
    return delta, kept, excluded


def correlation_report(truth, critical_points, fractions=None, **activation_kw):
    """Per-layer Pearson correlation between a neuron's distance from
    always-on/always-off (min of activation and its complement) and its share
    of the harvested critical points.  None where fewer than 3 neurons of the
    layer have a nonzero share, or where either side is constant.
    """
    if fractions is None:
        fractions = activation_tests(truth, **activation_kw)
    counts = [np.zeros(w) for w in _hidden_widths(truth)]
    for layer, neuron in critical_points:
        if 1 <= layer <= truth.depth:
            counts[layer - 1][neuron] += 1
    out = {}
    for i, c in enumerate(counts):
        layer = i + 1
        total = c.sum()
        if total == 0 or int(np.count_nonzero(c)) < 3:
            out[layer] = None
            continue
        share = c / total
        closeness = np.minimum(fractions.neuron[i], 1.0 - fractions.neuron[i])
        if np.ptp(share) == 0 or np.ptp(closeness) == 0:
            out[layer] = None
            continue
        out[layer] = float(np.corrcoef(closeness, share)[0, 1])
    return out


@dataclass
class ExtractionReport:
    per_layer: dict  # layer -> dict(recovery_rate, coverage, queries_log2, wall_time)
    model_coverage: float
    epsilon: float
    delta: float
    taxonomy_counts: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for layer, row in self.per_layer.items():
            for key in ("recovery_rate", "coverage"):
                if key in row and not 0.0 <= row[key] <= 1.0:
                    raise ValueError(f"layer {layer} {key} outside [0, 1]")
            if row.get("queries_log2", 0.0) < 0.0:
                raise ValueError(f"layer {layer} has negative query count")
        if not 0.0 <= self.model_coverage <= 1.0:
            raise ValueError("model coverage outside [0, 1]")

    def summary(self):
        lines = ["layer  recovery  coverage  queries(log2)  seconds"]
        for layer in sorted(self.per_layer):
            row = self.per_layer[layer]
            lines.append(
                f"{layer:>5}  {row.get('recovery_rate', float('nan')):8.2%}"
                f"  {row.get('coverage', float('nan')):8.2%}"
                f"  {row.get('queries_log2', 0.0):13.1f}"
                f"  {row.get('wall_time', 0.0):7.1f}"
            )
        lines.append(f"model coverage: {self.model_coverage:.2%}")
        lines.append(f"delta at epsilon={self.epsilon}: {self.delta:.2e}")
        if self.taxonomy_counts:
            parts = ", ".join(f"{k}: {v}" for k, v in sorted(self.taxonomy_counts.items()))
            lines.append(f"unrecovered weights: {parts}")
        return "\n".join(lines)

    def metrics_rows(self):
        """Flat (key, value) rows for the delimiter-separated metrics file."""
        rows = []
        for layer in sorted(self.per_layer):
            for key, value in sorted(self.per_layer[layer].items()):
                rows.append((f"layer{layer}.{key}", value))
        rows.append(("model.coverage", self.model_coverage))
        rows.append(("model.epsilon", self.epsilon))
        rows.append(("model.delta", self.delta))
        for k, v in sorted(self.taxonomy_counts.items()):
            rows.append((f"taxonomy.{k}", v))
        for k, v in sorted(self.config.items()):
            rows.append((f"config.{k}", v))
        return rows


def write_metrics(path, report, sep="\t"):
    with open(path, "w") as fh:
        for key, value in report.metrics_rows():
            fh.write(f"{key}{sep}{value}\n")


def write_heatmap(path, fractions, sep="\t"):
    """Per-neuron activation fractions, one row per hidden layer."""
    with open(path, "w") as fh:
        for i, row in enumerate(fractions.neuron):
            vals = sep.join(f"{v:.6f}" for v in row)
            fh.write(f"layer{i + 1}{sep}{vals}\n")


def queries_log2(count):
    return math.log2(count) if count > 0 else 0.0


def recovery_rate(masks):
    """Fraction of weight entries recovered, from per-neuron boolean masks."""
    masks = np.asarray(masks, dtype=bool)
    return float(masks.sum() / masks.size) if masks.size else 1.0


def missing_weights_of(masks, layer):
    """(layer, neuron, source) triples for every False entry of the masks."""
    masks = np.asarray(masks, dtype=bool)
    return [(layer, int(j), int(k)) for j, k in zip(*np.nonzero(~masks))]

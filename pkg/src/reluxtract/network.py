"""Exact float64 representation and evaluation of fully connected ReLU networks.

The model file format (magic ``RELUXT1``) stores every weight as the
16-hex-digit big-endian IEEE-754 bit pattern so that save/load round trips
are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = "RELUXT1"


class ModelFormatError(ValueError):
    """Raised when a model file is malformed or internally inconsistent."""


@dataclass(frozen=True)
class ActivationPattern:
    """Per hidden layer, a boolean vector marking strictly-positive pre-activations."""

    layers: tuple  # tuple of np.ndarray[bool], one per hidden layer
    boundary: bool = False  # True if some pre-activation was exactly zero

    def __eq__(self, other):
        if not isinstance(other, ActivationPattern):
            return NotImplemented
        return len(self.layers) == len(other.layers) and all(
            np.array_equal(a, b) for a, b in zip(self.layers, other.layers)
        )

    def __hash__(self):
        return hash(tuple(tuple(layer.tolist()) for layer in self.layers))


@dataclass(frozen=True)
class LocalAffineMap:
    """Affine map Gamma @ x + gamma matching a partial evaluation around one input."""

    layer: int
    gamma_matrix: np.ndarray  # (d_layer, d_0)
    gamma_offset: np.ndarray  # (d_layer,)
    boundary_ambiguous: bool = False

    def __call__(self, x):
        return self.gamma_matrix @ np.asarray(x, dtype=np.float64) + self.gamma_offset


@dataclass(frozen=True)
class NetworkModel:
    """An r-deep fully connected ReLU network held entirely in float64.

    weights[i] has shape (d_{i+1}, d_i) and biases[i] has shape (d_{i+1},),
    for i in 0..r (layer r+1 is the final linear layer, no ReLU after it).
    """

    weights: tuple
    biases: tuple
    widths: tuple = field(init=False)

    def __post_init__(self):
        weights = tuple(np.ascontiguousarray(w, dtype=np.float64) for w in self.weights)
        biases = tuple(np.ascontiguousarray(b, dtype=np.float64) for b in self.biases)
        if len(weights) != len(biases) or not weights:
            raise ModelFormatError("need matching, nonempty weight and bias lists")
        widths = [weights[0].shape[1]]
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.ndim != 1:
                raise ModelFormatError(f"layer {i + 1}: bad array rank")
            if w.shape[1] != widths[-1]:
                raise ModelFormatError(
                    f"layer {i + 1}: expected {widths[-1]} input columns, got {w.shape[1]}"
                )
            if w.shape[0] != b.shape[0]:
                raise ModelFormatError(f"layer {i + 1}: weight/bias row mismatch")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ModelFormatError(f"layer {i + 1}: non-finite value")
            widths.append(w.shape[0])
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "widths", tuple(widths))

    @property
    def depth(self):
        """Number of hidden layers r."""
        return len(self.weights) - 1

    @property
    def input_dim(self):
        return self.widths[0]

    @property
    def output_dim(self):
        return self.widths[-1]

    def __eq__(self, other):
        if not isinstance(other, NetworkModel):
            return NotImplemented
        return (
            self.widths == other.widths
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


def _check_input(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"input has dimension {x.shape[-1]}, expected {model.input_dim}")
    if not np.isfinite(x).all():
        raise ValueError("non-finite input")
    return x


def forward(model, x):
    """Full evaluation; returns (output, ActivationPattern).

    Deterministic and reproducible: the same input always yields the same
    bits.  Batched evaluation may differ in the last bit or two because BLAS
    reduction order depends on the operand shapes.
    """
    x = _check_input(model, x)
    h = x
    layers = []
    boundary = False
    for i in range(model.depth):
        pre = model.weights[i] @ h + model.biases[i]
        active = pre > 0.0
        if np.any(pre == 0.0):
            boundary = True
        layers.append(active)
        h = np.where(active, pre, 0.0)
    out = model.weights[-1] @ h + model.biases[-1]
    return out, ActivationPattern(tuple(layers), boundary)


def forward_batch(model, xs):
    """Batched outputs for an (n, d_0) array; agrees with forward() to ~1e-13."""
    xs = _check_input(model, np.atleast_2d(xs))
    h = xs
    for i in range(model.depth):
        pre = h @ model.weights[i].T + model.biases[i]
        h = np.maximum(pre, 0.0)
    return h @ model.weights[-1].T + model.biases[-1]


def hidden_batch(model, xs, layer):
    """Batched post-activation sigma(F^(layer)) for 1 <= layer <= depth; layer 0 is the input."""
    xs = _check_input(model, np.atleast_2d(xs))
    if not 0 <= layer <= model.depth:
        raise ValueError(f"hidden layer index {layer} out of range")
    h = xs
    for i in range(layer):
        h = np.maximum(h @ model.weights[i].T + model.biases[i], 0.0)
    return h


def partial_forward(model, x, layer):
    """Pre-activation F^(layer)(x) for 1 <= layer <= depth+1 (no trailing ReLU)."""
    x = _check_input(model, x)
    if not 1 <= layer <= model.depth + 1:
        raise ValueError(f"layer index {layer} out of range 1..{model.depth + 1}")
    h = x
    for i in range(layer - 1):
        h = np.maximum(model.weights[i] @ h + model.biases[i], 0.0)
    return model.weights[layer - 1] @ h + model.biases[layer - 1]


def activation_patterns_batch(model, xs):
    """List (per hidden layer) of (n, d_i) boolean activity arrays."""
    xs = _check_input(model, np.atleast_2d(xs))
    h = xs
    out = []
    for i in range(model.depth):
        pre = h @ model.weights[i].T + model.biases[i]
        out.append(pre > 0.0)
        h = np.maximum(pre, 0.0)
    return out


def local_affine(model, x, layer):
    """Affine map of F^(layer) on the polytope of x: Gamma = I A ... I A, gamma = F(x) - Gamma x."""
    x = _check_input(model, x)
    if not 1 <= layer <= model.depth + 1:
        raise ValueError(f"layer index {layer} out of range 1..{model.depth + 1}")
    h = x
    gamma = None
    boundary = False
    for i in range(layer):
        pre = model.weights[i] @ h + model.biases[i]
        gamma = model.weights[i] if gamma is None else model.weights[i] @ gamma
        if i == layer - 1:
            break
        if np.any(pre == 0.0):
            boundary = True
        # exactly-zero pre-activations count as inactive (same convention as
        # forward); the resulting map is the one-sided gradient on that side
        mask = pre > 0.0
        gamma = gamma * mask[:, None]
        h = np.where(mask, pre, 0.0)
    offset = pre - gamma @ x
    return LocalAffineMap(layer, gamma, offset, boundary)


def generate_random(widths, seed, weight_scale=1.0, bias_scale=0.5):
    """Deterministic random model: weights U[-1,1], biases U[-0.5,0.5], each layer
    rescaled by 1/sqrt(fan_in/3) so pre-activation magnitudes stay O(1) and roughly
    half of the hidden neurons are active at random inputs.
    """
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError(f"invalid architecture {widths}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        scale = weight_scale / np.sqrt(d_in / 3.0)
        weights.append(rng.uniform(-1.0, 1.0, size=(d_out, d_in)) * scale)
        biases.append(rng.uniform(-1.0, 1.0, size=d_out) * bias_scale)
    return NetworkModel(tuple(weights), tuple(biases))


def _float_to_hex(v):
    return struct.pack(">d", float(v)).hex()


def _hex_to_float(tok):
    if len(tok) != 16:
        raise ModelFormatError(f"bad float token {tok!r}")
    try:
        return struct.unpack(">d", bytes.fromhex(tok))[0]
    except ValueError as exc:
        raise ModelFormatError(f"bad float token {tok!r}") from exc


def _row_to_line(row):
    hexes = " ".join(_float_to_hex(v) for v in row)
    decimals = " ".join(repr(float(v)) for v in row)
    return f"{hexes}  # {decimals}"


def save_model(model, path):
    """Write the RELUXT1 text format; hex tokens are authoritative, comments are not."""
    lines = [MAGIC, "-".join(str(w) for w in model.widths)]
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        lines.append(f"layer {i + 1}")
        for row in w:
            lines.append(_row_to_line(row))
        lines.append("bias " + _row_to_line(b))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_floats(body, path, lineno):
    toks = body.split("#", 1)[0].split()
    try:
        return np.array([_hex_to_float(t) for t in toks], dtype=np.float64)
    except ModelFormatError as exc:
        raise ModelFormatError(f"{path}:{lineno}: {exc}") from exc


def load_model(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if not lines or lines[0].strip() != MAGIC:
        raise ModelFormatError(f"{path}: missing {MAGIC} header")
    try:
        widths = [int(t) for t in lines[1].strip().split("-")]
    except (IndexError, ValueError) as exc:
        raise ModelFormatError(f"{path}: bad architecture line") from exc
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ModelFormatError(f"{path}: bad architecture {widths}")
    pos = 2
    weights, biases = [], []
    for layer in range(1, len(widths)):
        d_out, d_in = widths[layer], widths[layer - 1]
        if pos >= len(lines) or lines[pos].strip() != f"layer {layer}":
            raise ModelFormatError(f"{path}: expected 'layer {layer}' marker")
        pos += 1
        rows = []
        for _ in range(d_out):
            if pos >= len(lines):
                raise ModelFormatError(f"{path}: truncated layer {layer}")
            row = _parse_floats(lines[pos], path, pos + 1)
            if row.shape[0] != d_in:
                raise ModelFormatError(
                    f"{path}:{pos + 1}: row has {row.shape[0]} entries, expected {d_in}"
                )
            rows.append(row)
            pos += 1
        if pos >= len(lines) or not lines[pos].startswith("bias"):
            raise ModelFormatError(f"{path}: missing bias line for layer {layer}")
        bias = _parse_floats(lines[pos][len("bias"):], path, pos + 1)
        if bias.shape[0] != d_out:
            raise ModelFormatError(
                f"{path}:{pos + 1}: bias has {bias.shape[0]} entries, expected {d_out}"
            )
        pos += 1
        weights.append(np.array(rows))
        biases.append(bias)
    if pos != len(lines):
        raise ModelFormatError(f"{path}: trailing content after last layer")
    return NetworkModel(tuple(weights), tuple(biases))

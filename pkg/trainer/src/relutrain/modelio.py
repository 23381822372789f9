"""Bit-exact text serialization of fully connected ReLU networks (RELUXT1).

Independent implementation of the format: a magic line, an architecture line
``d_0-d_1-...-d_r``, then per layer a ``layer i`` marker, one line per weight
row, and a ``bias`` line.  Every float is the 16-hex-digit big-endian
IEEE-754 bit pattern of its 64-bit value; a trailing ``#`` comment carries
the human-readable decimals and is ignored on load.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = "RELUXT1"


class FormatError(ValueError):
    pass


def _to_hex(v):
    return struct.pack(">d", float(v)).hex()


def _from_hex(tok):
    if len(tok) != 16:
        raise FormatError(f"bad float token {tok!r}")
    try:
        return struct.unpack(">d", bytes.fromhex(tok))[0]
    except ValueError as exc:
        raise FormatError(f"bad float token {tok!r}") from exc


def _row_line(row):
    hexes = " ".join(_to_hex(v) for v in row)
    decimals = " ".join(repr(float(v)) for v in row)
    return f"{hexes}  # {decimals}"


def write_model(path, weights, biases):
    """Write float64 layer matrices and bias vectors; hex is authoritative."""
    weights = [np.asarray(w, dtype=np.float64) for w in weights]
    biases = [np.asarray(b, dtype=np.float64) for b in biases]
    if len(weights) != len(biases) or not weights:
        raise FormatError("need one bias vector per weight matrix")
    widths = [weights[0].shape[1]] + [w.shape[0] for w in weights]
    lines = [MAGIC, "-".join(str(w) for w in widths)]
    for i, (w, b) in enumerate(zip(weights, biases), start=1):
        if w.shape != (b.shape[0], widths[i - 1]):
            raise FormatError(f"layer {i} shape mismatch: {w.shape} vs {b.shape}")
        lines.append(f"layer {i}")
        lines.extend(_row_line(row) for row in w)
        lines.append("bias " + _row_line(b))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_row(line, expect):
    toks = line.split("#", 1)[0].split()
    row = np.array([_from_hex(t) for t in toks], dtype=np.float64)
    if row.shape[0] != expect:
        raise FormatError(f"row has {row.shape[0]} entries, expected {expect}")
    return row


def read_model(path):
    """Load a model file back into (weights, biases) lists of float64 arrays."""
    with open(path) as fh:
        lines = [ln for ln in (raw.rstrip("\n") for raw in fh) if ln.strip()]
    if not lines or lines[0].strip() != MAGIC:
        raise FormatError(f"{path}: missing {MAGIC} header")
    try:
        widths = [int(t) for t in lines[1].strip().split("-")]
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: bad architecture line") from exc
    pos = 2
    weights, biases = [], []
    for layer in range(1, len(widths)):
        if pos >= len(lines) or lines[pos].strip() != f"layer {layer}":
            raise FormatError(f"{path}: expected 'layer {layer}' marker")
        pos += 1
        rows = []
        for _ in range(widths[layer]):
            if pos >= len(lines):
                raise FormatError(f"{path}: truncated layer {layer}")
            rows.append(_parse_row(lines[pos], widths[layer - 1]))
            pos += 1
        if pos >= len(lines) or not lines[pos].startswith("bias"):
            raise FormatError(f"{path}: missing bias line for layer {layer}")
        biases.append(_parse_row(lines[pos][len("bias"):], widths[layer]))
        pos += 1
        weights.append(np.array(rows))
    if pos != len(lines):
        raise FormatError(f"{path}: trailing content after last layer")
    return weights, biases


def forward(weights, biases, xs):
    """Float64 reference forward pass (ReLU on all but the last layer)."""
    h = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(h @ w.T + b, 0.0)
    return h @ weights[-1].T + biases[-1]

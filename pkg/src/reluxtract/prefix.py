"""Extracted-prefix view: layers 1..i-1 as an affine-with-ReLU pipeline.

The attack on layer i only ever sees the target through the oracle; the
prefix holds the (previously extracted, or in per-layer evaluation mode the
true) parameters of the earlier layers and provides hidden states, local
affine maps, and activation patterns computed without oracle queries.
"""

from __future__ import annotations

import numpy as np


class ExtractedPrefix:
    def __init__(self, weights, biases, input_dim):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.input_dim = int(input_dim)
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise ValueError("weight/bias shape mismatch in prefix")

    @classmethod
    def from_truth(cls, model, layer):
        """Prefix for attacking `layer` of a known model (per-layer evaluation mode)."""
        if not 1 <= layer <= model.depth + 1:
            raise ValueError(f"layer {layer} out of range")
        return cls(model.weights[: layer - 1], model.biases[: layer - 1], model.input_dim)

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def is_input(self):
        """True when attacking layer 1: the layer's input is the network input."""
        return not self.weights

    @property
    def hidden_dim(self):
        return self.input_dim if self.is_input else self.weights[-1].shape[0]

    def hidden(self, z):
        """Post-activation input to the target layer: sigma(F^(i-1)(z)), or z itself for layer 1."""
        h = np.asarray(z, dtype=np.float64)
        for w, b in zip(self.weights, self.biases):
            h = np.maximum(w @ h + b, 0.0)
        return h

    def hidden_batch(self, zs):
        h = np.atleast_2d(np.asarray(zs, dtype=np.float64))
        for w, b in zip(self.weights, self.biases):
            h = np.maximum(h @ w.T + b, 0.0)
        return h

    def pre_final(self, z):
        """Pre-activation of the last prefix layer (F^(i-1)); z itself for layer 1."""
        h = np.asarray(z, dtype=np.float64)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(w @ h + b, 0.0)
        if self.is_input:
            return h
        return self.weights[-1] @ h + self.biases[-1]

    def active_mask(self, z):
        """Boolean activity of the target layer's input coordinates at z."""
        if self.is_input:
            return np.ones(self.input_dim, dtype=bool)
        return self.pre_final(z) > 0.0

    def active_mask_batch(self, zs):
        zs = np.atleast_2d(zs)
        if self.is_input:
            return np.ones(zs.shape, dtype=bool)
        h = zs
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w.T + b, 0.0)
        return (h @ self.weights[-1].T + self.biases[-1]) > 0.0

    def pattern(self, z):
        """Activity signs of every prefix layer (including the last) at z."""
        h = np.asarray(z, dtype=np.float64)
        pat = []
        for w, b in zip(self.weights, self.biases):
            pre = w @ h + b
            pat.append(pre > 0.0)
            h = np.maximum(pre, 0.0)
        return pat

    def gamma(self, z):
        """Jacobian of hidden(): masked product I A ... I A, shape (hidden_dim, input_dim)."""
        if self.is_input:
            return np.eye(self.input_dim)
        h = np.asarray(z, dtype=np.float64)
        g = None
        for w, b in zip(self.weights, self.biases):
            pre = w @ h + b
            g = w if g is None else w @ g
            mask = pre > 0.0
            g = g * mask[:, None]
            h = np.where(mask, pre, 0.0)
        return g

    def grad_pre_final(self, z):
        """Jacobian of the last prefix layer's pre-activation, shape (hidden_dim, input_dim)."""
        if self.is_input:
            return np.eye(self.input_dim)
        h = np.asarray(z, dtype=np.float64)
        g = None
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            pre = w @ h + b
            g = w if g is None else w @ g
            mask = pre > 0.0
            g = g * mask[:, None]
            h = np.where(mask, pre, 0.0)
        return self.weights[-1] if g is None else self.weights[-1] @ g

    def min_abs_pre(self, z):
        """Distance proxy: smallest |pre-activation| over all prefix neurons at z."""
        if self.is_input:
            return np.inf
        h = np.asarray(z, dtype=np.float64)
        best = np.inf
        for w, b in zip(self.weights, self.biases):
            pre = w @ h + b
            best = min(best, float(np.min(np.abs(pre))))
            h = np.maximum(pre, 0.0)
        return best

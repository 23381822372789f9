"""Query-counting black-box oracle.

Attack code must touch the target network only through this wrapper; the
wrapped model is held in a private attribute and never exposed.
"""

from __future__ import annotations

import threading
from collections import defaultdict

import numpy as np

from .network import forward_batch

PHASES = ("critical-search", "signature", "filtering", "targeted", "evaluation", "other")


class Oracle:
    """In-process raw-output oracle with atomic per-phase query counters."""

    def __init__(self, model):
        self._model = model
        self.input_dim = model.input_dim
        self.output_dim = model.output_dim
        self._lock = threading.Lock()
        self._counts = defaultdict(int)
        self._phase = "other"

    @property
    def total_queries(self):
        with self._lock:
            return sum(self._counts.values())

    def phase_counts(self):
        with self._lock:
            return dict(self._counts)

    def set_phase(self, phase):
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        self._phase = phase

    def query(self, x, phase=None):
        """f(x) for a single input or an (n, d_0) batch; counts one query per row."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xs = np.atleast_2d(x)
        if xs.shape[1] != self.input_dim:
            raise ValueError(f"input dimension {xs.shape[1]}, expected {self.input_dim}")
        out = forward_batch(self._model, xs)
        with self._lock:
            self._counts[phase or self._phase] += xs.shape[0]
        return out[0] if single else out

    def directional_slope(self, x, direction, step, phase=None):
        """(f(x + step*direction) - f(x)) / step using two queries."""
        if step <= 0:
            raise ValueError("step must be positive")
        x = np.asarray(x, dtype=np.float64)
        d = np.asarray(direction, dtype=np.float64)
        pair = self.query(np.stack([x, x + step * d]), phase=phase)
        return (pair[1] - pair[0]) / step

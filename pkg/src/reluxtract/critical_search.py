"""Critical-point search along random lines.

Detection uses derivative disagreement between the two segment endpoints and
the predicted-crossing shortcut: if the two one-sided affine pieces intersect
inside the segment and the oracle value there matches the prediction, the
crossing is the unique critical point; otherwise the segment is bisected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PATHOLOGICAL_RESIDUAL = np.inf


@dataclass
class CriticalPoint:
    x: np.ndarray
    line: tuple  # (a, b) endpoints of the search line
    t: float  # position on the line, x = a + t (b - a)
    residual: float
    depth_status: str = "unknown"  # unknown -> deeper | candidate
    point_id: int = -1
    component_id: int = field(default=None)

    def mark(self, status):
        if self.depth_status != "unknown" or status not in ("deeper", "candidate"):
            raise ValueError(f"bad depth transition {self.depth_status} -> {status}")
        self.depth_status = status


@dataclass
class HarvestResult:
    points: list
    lines_used: int
    budget_exhausted: bool = False

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)


class _LineScan:
    """Stateful scan of one segment; caches oracle values along the line."""

    def __init__(self, oracle, a, b, tol, min_seg, phase):
        self.oracle = oracle
        self.a = np.asarray(a, dtype=np.float64)
        self.u = np.asarray(b, dtype=np.float64) - self.a
        if not np.any(self.u):
            raise ValueError("scan_line needs two distinct endpoints")
        self.tol = tol
        self.min_seg = min_seg
        self.phase = phase
        self.cache = {}
        self.found = []
        self.max_queries = None
        self.aborted = False

    def f(self, t):
        if t not in self.cache:
            self.cache[t] = self.oracle.query(self.a + t * self.u, phase=self.phase)
        return self.cache[t]

    def slope(self, t, h):
        """One-sided slope in t-units over [t, t+h] (h may be negative)."""
        return (self.f(t + h) - self.f(t)) / h

    def _scale(self, *vals):
        return max(1.0, *(float(np.max(np.abs(v))) for v in vals))

    def emit(self, t, residual):
        for prev in self.found:
            if abs(prev.t - t) < max(4 * self.min_seg, 1e-9):
                return
        self.found.append(
            CriticalPoint(x=self.a + t * self.u, line=(self.a, self.a + self.u), t=t, residual=residual)
        )

    def scan(self, t0, t1, depth=0):
        if self.aborted:
            return
        if self.max_queries is not None and len(self.cache) > self.max_queries:
            self.aborted = True
            return
        if t1 - t0 < self.min_seg or depth > 60:
            # recursion floor: pathological cluster, emit flagged midpoint
            self.emit(0.5 * (t0 + t1), PATHOLOGICAL_RESIDUAL)
            return
        h = 0.2 * (t1 - t0)
        f0, f1 = self.f(t0), self.f(t1)
        s0 = self.slope(t0, h)
        s1 = self.slope(t1, -h)
        diff = s0 - s1
        scale = self._scale(s0, s1)
        if np.max(np.abs(diff)) <= self.tol * scale:
            return
        c = int(np.argmax(np.abs(diff)))
        tstar = (float(f1[c]) - float(f0[c]) + float(s0[c]) * t0 - float(s1[c]) * t1) / float(diff[c])
        # a probe interval straddling a kink yields a chord whose intersection
        # with the far piece sits exactly on the probe point, where the value
        # check passes vacuously -- refuse predictions landing there
        near_probe = min(abs(tstar - (t0 + h)), abs(tstar - (t1 - h))) < 0.1 * h
        if t0 + 0.05 * h < tstar < t1 - 0.05 * h and not near_probe:
            predicted = f0 + s0 * (tstar - t0)
            actual = self.f(tstar)
            vscale = self._scale(f0, f1)
            residual = float(np.max(np.abs(actual - predicted)))
            if residual <= 10 * self.tol * vscale:
                refined = self._refine(tstar, t0, t1)
                if refined is not None:
                    self.emit(refined, residual)
                    # the matched crossing rules out kinks between the two
                    # probed pieces, but not further out; sweep the flanks
                    pad = 0.05 * (t1 - t0)
                    if tstar - pad - t0 > 10 * self.min_seg:
                        self.scan(t0, tstar - pad, depth + 1)
                    if t1 - (tstar + pad) > 10 * self.min_seg:
                        self.scan(tstar + pad, t1, depth + 1)
                    return
        # split off-center so a kink exactly at a previous probe point cannot
        # keep landing on segment boundaries where both sides look affine
        tm = t0 + 0.5139 * (t1 - t0)
        self.scan(t0, tm, depth + 1)
        self.scan(tm, t1, depth + 1)

    def _refine(self, t, t0, t1):
        """Local re-prediction with tight brackets around the crossing.

        Returns None when the one-sided slopes agree at t: a wide probe that
        straddled a kink can fabricate a crossing at the probe point itself
        (where the value trivially matches), so a real kink must still show a
        slope break under a tight bracket.
        """
        rho = max(8 * self.min_seg, 1e-5 * (t1 - t0))
        for iteration in range(6):
            ta, tb = t - rho, t + rho
            h = 0.25 * rho
            fa, fb = self.f(ta), self.f(tb)
            sa = self.slope(ta, h)
            sb = self.slope(tb, -h)
            diff = sa - sb
            c = int(np.argmax(np.abs(diff)))
            # below the cancellation floor of (f(t+h)-f(t))/h the measured
            # slope break is indistinguishable from rounding noise
            noise = 1e-13 * self._scale(fa, fb) / h
            if abs(float(diff[c])) <= max(self.tol * self._scale(sa, sb), noise):
                # no slope break under a tight bracket: the crossing was an
                # artifact of a straddling probe, unless already recentered
                return None if iteration == 0 else t
            t2 = (float(fb[c]) - float(fa[c]) + float(sa[c]) * ta - float(sb[c]) * tb) / float(diff[c])
            if not ta < t2 < tb:
                return t
            t = t2
            if rho <= 8 * self.min_seg:
                break
            rho = max(8 * self.min_seg, 1e-2 * rho)
        return t


def scan_line(oracle, a, b, tol=1e-8, min_seg_fraction=1e-10, phase="critical-search"):
    """All critical points strictly between a and b, sorted by position."""
    scan = _LineScan(oracle, a, b, tol, min_seg_fraction, phase)
    scan.scan(0.0, 1.0)
    return sorted(scan.found, key=lambda p: p.t)


def scan_line_budgeted(
    oracle, a, b, tol=1e-8, max_queries=600, min_seg_fraction=1e-10, phase="critical-search"
):
    """scan_line with a query cap; None when the segment cannot be resolved.

    A segment dense with kinks (trained networks produce near-coincident
    boundaries) would otherwise subdivide into hundreds of thousands of
    queries; as filtering evidence such a window is useless anyway.
    """
    scan = _LineScan(oracle, a, b, tol, min_seg_fraction, phase)
    scan.max_queries = max_queries
    scan.scan(0.0, 1.0)
    if scan.aborted:
        return None
    return sorted(scan.found, key=lambda p: p.t)


def harvest(oracle, config, count=None, seed=None, phase="critical-search"):
    """Scan random lines in the domain until `count` critical points are found
    or the line budget runs out."""
    count = config.critical_points_count if count is None else count
    rng = np.random.default_rng(config.seed_lines if seed is None else seed)
    low, high = config.domain(oracle.input_dim)
    points = []
    lines = 0
    while len(points) < count and lines < config.critical_points_line_budget:
        a = rng.uniform(low, high)
        b = rng.uniform(low, high)
        if not np.any(b - a):
            continue
        lines += 1
        points.extend(scan_line(oracle, a, b, tol=config.search_tolerance, phase=phase))
    exhausted = len(points) < count
    points = points[:count]
    for i, p in enumerate(points):
        p.point_id = i
    return HarvestResult(points=points, lines_used=lines, budget_exhausted=exhausted)

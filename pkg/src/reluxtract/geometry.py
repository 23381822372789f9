"""Two-dimensional cell enumeration for documentation and debugging.

The hidden neurons' sign patterns partition the input plane into convex
cells.  A coarse grid finds candidate patterns; adaptive refinement between
disagreeing neighbours finds thin cells; every discovered pattern's exact
polygon is then recovered by clipping the domain box against the pattern's
half-plane constraints.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .network import NetworkModel


@dataclass
class PolytopeCell:
    pattern: tuple  # concatenated hidden-layer activation bits
    interior: np.ndarray  # a point reproducing the pattern
    vertices: np.ndarray  # (m, 2) boundary polygon, counter-clockwise

    @property
    def area(self):
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


class GeometryError(ValueError):
    pass


def _slice_model(model, origin, basis):
    """Restrict a model to the 2-D affine slice origin + basis @ u."""
    basis = np.asarray(basis, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    if basis.shape != (model.input_dim, 2):
        raise GeometryError("slice basis must be (d0, 2)")
    w1 = model.weights[0] @ basis
    b1 = model.weights[0] @ origin + model.biases[0]
    return NetworkModel((w1, *model.weights[1:]), (b1, *model.biases[1:]))


def _patterns(model, xs):
    """(n, total_hidden) boolean sign pattern for a batch of 2-D points."""
    h = np.atleast_2d(xs)
    bits = []
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        pre = h @ w.T + b
        bits.append(pre > 0.0)
        h = np.maximum(pre, 0.0)
    return np.concatenate(bits, axis=1)


def _pattern_key(row):
    return tuple(bool(v) for v in row)


def _cell_halfplanes(model, pattern):
    """(a, b, sign) triples: the cell is {x : sign * (a.x + b) >= 0 for all}."""
    bits = list(pattern)
    a_mat = np.eye(2)
    c_vec = np.zeros(2)
    out = []
    pos = 0
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        rows = w @ a_mat
        offs = w @ c_vec + b
        layer_bits = np.array(bits[pos : pos + w.shape[0]], dtype=bool)
        pos += w.shape[0]
        for k in range(w.shape[0]):
            out.append((rows[k], float(offs[k]), 1.0 if layer_bits[k] else -1.0))
        a_mat = rows * layer_bits[:, None]
        c_vec = np.where(layer_bits, offs, 0.0)
    return out


def _clip(poly, a, b, sign, tol):
    """Sutherland-Hodgman clip of a convex polygon by sign*(a.x + b) >= 0."""
    if len(poly) == 0:
        return poly
    vals = sign * (poly @ a + b)
    out = []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        vi, vj = vals[i], vals[j]
        if vi >= -tol:
            out.append(poly[i])
        if (vi > tol and vj < -tol) or (vi < -tol and vj > tol):
            t = vi / (vi - vj)
            out.append(poly[i] + t * (poly[j] - poly[i]))
    return np.array(out) if out else np.zeros((0, 2))


def _polygon(model, pattern, low, high):
    box = np.array(
        [[low, low], [high, low], [high, high], [low, high]], dtype=np.float64
    )
    scale = max(abs(low), abs(high), 1.0)
    poly = box
    for a, b, sign in _cell_halfplanes(model, pattern):
        norm = float(np.linalg.norm(a))
        if norm == 0.0:
            if sign * b < 0:
                return np.zeros((0, 2))
            continue
        poly = _clip(poly, a, b, sign, tol=1e-12 * scale * norm)
        if len(poly) < 3:
            return np.zeros((0, 2))
    return poly


def _dedupe_polygon(poly, eps):
    if len(poly) == 0:
        return poly
    kept = [poly[0]]
    for v in poly[1:]:
        if np.linalg.norm(v - kept[-1]) > eps:
            kept.append(v)
    if len(kept) > 1 and np.linalg.norm(kept[0] - kept[-1]) <= eps:
        kept.pop()
    return np.array(kept)


def enumerate_cells_2d(
    model, domain=(-10.0, 10.0), resolution=64, origin=None, basis=None, max_refine=8
):
    """All activation-pattern cells of a 2-input model over a square domain.

    Grid sampling seeds the pattern set; segments between disagreeing
    neighbours are bisected (up to `max_refine` levels) to catch thin cells;
    each pattern's exact convex polygon comes from half-plane clipping.
    """
    if origin is not None or basis is not None:
        model = _slice_model(model, origin, basis)
    if model.input_dim != 2:
        raise GeometryError("cell enumeration needs a 2-input model or a slice")
    low, high = float(domain[0]), float(domain[1])
    if not high > low:
        raise GeometryError("empty domain")
    ticks = np.linspace(low, high, resolution + 1)
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    pats = _patterns(model, pts)
    seen = {}
    for p, row in zip(pts, pats):
        seen.setdefault(_pattern_key(row), p)

    # refine between horizontally/vertically adjacent disagreeing samples
    n = resolution + 1
    grid_keys = np.array([hash(_pattern_key(r)) for r in pats]).reshape(n, n)
    segments = []
    for i in range(n):
        for j in range(n):
            if i + 1 < n and grid_keys[i, j] != grid_keys[i + 1, j]:
                segments.append((pts[i * n + j], pts[(i + 1) * n + j]))
            if j + 1 < n and grid_keys[i, j] != grid_keys[i, j + 1]:
                segments.append((pts[i * n + j], pts[i * n + j + 1]))
    for a, b in segments:
        stack = [(a, b, 0)]
        while stack:
            pa, pb, depth = stack.pop()
            if depth >= max_refine:
                ka = _pattern_key(_patterns(model, pa)[0])
                kb = _pattern_key(_patterns(model, pb)[0])
                flips = sum(x != y for x, y in zip(ka, kb))
                if flips > 1:
                    warnings.warn(
                        f"refinement exhausted between {pa} and {pb}: "
                        f"{flips} neurons flip across one unresolved step"
                    )
                continue
            mid = 0.5 * (pa + pb)
            key = _pattern_key(_patterns(model, mid)[0])
            is_new = key not in seen
            if is_new:
                seen[key] = mid
            ka = _pattern_key(_patterns(model, pa)[0])
            kb = _pattern_key(_patterns(model, pb)[0])
            if key != ka:
                stack.append((pa, mid, depth + 1))
            if key != kb:
                stack.append((mid, pb, depth + 1))

    # exact completion: every cell shares a facet with a neighbour whose
    # pattern differs in one bit, so breadth-first single-bit flips (validated
    # by exact half-plane clipping) find cells the sampling stage missed
    eps = 1e-9 * max(abs(low), abs(high), 1.0)
    queue = list(seen.keys())
    visited = set(seen.keys())
    while queue:
        key = queue.pop()
        for i in range(len(key)):
            flipped = key[:i] + (not key[i],) + key[i + 1 :]
            if flipped in visited:
                continue
            visited.add(flipped)
            poly = _dedupe_polygon(_polygon(model, flipped, low, high), eps)
            if len(poly) < 3:
                continue
            centroid = poly.mean(axis=0)
            if _pattern_key(_patterns(model, centroid)[0]) != flipped:
                continue
            seen[flipped] = centroid
            queue.append(flipped)

    cells = []
    for key, sample in sorted(seen.items()):
        poly = _dedupe_polygon(_polygon(model, key, low, high), eps)
        if len(poly) < 3:
            continue  # pattern only touched on a boundary, zero-area sliver
        centroid = poly.mean(axis=0)
        interior = (
            centroid
            if _pattern_key(_patterns(model, centroid)[0]) == key
            else np.asarray(sample, dtype=np.float64)
        )
        if _pattern_key(_patterns(model, interior)[0]) != key:
            continue
        cells.append(PolytopeCell(pattern=key, interior=interior, vertices=poly))
    return cells


def write_cells_csv(path, cells, sep="\t"):
    """Plot data: one `cell` row per cell, then its `vertex` rows in order."""
    with open(path, "w") as fh:
        fh.write(sep.join(["kind", "cell", "pattern", "x", "y"]) + "\n")
        for idx, cell in enumerate(cells):
            bits = "".join("1" if b else "0" for b in cell.pattern)
            fh.write(
                sep.join(
                    ["cell", str(idx), bits, f"{cell.interior[0]:.9g}", f"{cell.interior[1]:.9g}"]
                )
                + "\n"
            )
            for v in cell.vertices:
                fh.write(
                    sep.join(["vertex", str(idx), bits, f"{v[0]:.9g}", f"{v[1]:.9g}"]) + "\n"
                )

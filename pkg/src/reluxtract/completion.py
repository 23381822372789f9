"""Finishing a layer: targeted critical-point search for missing entries,
scaled biases, the final linear layer, and sign resolution.

Recovered rows are only ever known up to a positive per-neuron scale; the
subsequent layer's columns absorb the inverse factors, so the composite map
is unchanged and per-layer evaluation may align scales against ground truth
without touching the oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .critical_search import CriticalPoint, scan_line
from .signature import RecoveryError, signed_ratio

RECOVERED = "recovered"
ALWAYS_OFF = "always-off"
MISSED = "missed"


@dataclass
class RecoveredLayer:
    layer: int
    rows: np.ndarray  # (d_i, d_{i-1}) signed scaled rows; unknown entries 0
    biases: np.ndarray  # (d_i,)
    masks: np.ndarray  # (d_i, d_{i-1}) bool, True where the entry was recovered
    statuses: list  # per neuron
    permutation: list = None  # component index -> neuron slot, when aligned
    sign_ambiguous: np.ndarray = None
    scales: np.ndarray = None  # evaluation-only alignment factors, else None

    def __post_init__(self):
        counts = {s: self.statuses.count(s) for s in set(self.statuses)}
        if len(self.statuses) != self.rows.shape[0]:
            raise ValueError("status list does not match row count")
        self._status_counts = counts

    @property
    def width(self):
        return self.rows.shape[0]

    def status_counts(self):
        return dict(self._status_counts)


def recover_bias(component, x, prefix):
    """Scaled bias from one member critical point: the affine value there is 0."""
    h = prefix.hidden(np.asarray(x, dtype=np.float64))
    return -float(component.signature() @ h)


def recover_last_layer(stored_xs, stored_ys, prefix):
    """Final linear layer from stored critical-point evaluations; 0 queries.

    Solves sigma(F^(r)(x)) -> f(x) in least squares over the stored pairs.
    """
    xs = np.atleast_2d(np.asarray(stored_xs, dtype=np.float64))
    ys = np.asarray(stored_ys, dtype=np.float64)
    if ys.ndim == 1:
        ys = ys[:, None]
    if ys.shape[0] != xs.shape[0]:
        raise ValueError("input/output pair mismatch")
    h = prefix.hidden_batch(xs)
    d = h.shape[1]
    if xs.shape[0] < d + 1:
        raise RecoveryError(f"need at least {d + 1} stored pairs, have {xs.shape[0]}")
    design = np.hstack([h, np.ones((h.shape[0], 1))])
    if np.linalg.matrix_rank(design) < d + 1:
        raise RecoveryError("stored pairs are degenerate; need more critical points")
    sol, *_ = np.linalg.lstsq(design, ys, rcond=None)
    return sol[:-1].T.copy(), sol[-1].copy()


def _find_critical_near(oracle, x, direction, delta, tol, phase):
    """Closest critical point to x on a short segment along `direction`."""
    points = scan_line(oracle, x - delta * direction, x + delta * direction, tol=tol, phase=phase)
    points = [p for p in points if np.isfinite(p.residual)]
    if not points:
        return None
    return min(points, key=lambda p: abs(p.t - 0.5))


def _same_neuron(oracle, prefix, v, x, eps, rng, phase, rtol=0.25):
    """Cheap identity check: the measured second-difference ratio at x must
    match the one predicted from the component's (partial) signature."""
    d0 = x.shape[0]
    gamma = prefix.gamma(x)
    for _ in range(4):
        delta = rng.standard_normal(d0)
        delta /= np.linalg.norm(delta)
        delta0 = rng.standard_normal(d0)
        delta0 /= np.linalg.norm(delta0)
        a = float((gamma @ delta) @ v)
        b = float((gamma @ delta0) @ v)
        if abs(b) < 1e-6 * max(abs(a), 1e-30):
            continue
        predicted = a / b
        try:
            measured = signed_ratio(oracle, x, delta, delta0, eps, phase=phase)
        except RecoveryError:
            continue
        scale = max(abs(predicted), abs(measured), 1.0)
        return abs(measured - predicted) <= rtol * scale
    return False


def surface_step(oracle, prefix, v, x, config, seed, phase="targeted"):
    """One re-anchored step along the critical surface through x.

    Takes a random tangent step and re-finds the oracle's kink along the
    local normal, so each step lands on the true surface again regardless of
    how partial the signature `v` still is.  A solution space recovered at a
    single critical point can be rank deficient when the prefix Jacobian
    there does not span all active inputs; nearby cells have Jacobians with
    different ranges, and intersecting the spaces recovered there pins the
    signature down.  Returns the new critical point or None.
    """
    x = np.asarray(x, dtype=np.float64)
    d0 = x.shape[0]
    diag = np.sqrt(d0) * abs(config.domain_high - config.domain_low)
    rng = np.random.default_rng(seed)
    n = prefix.gamma(x).T @ v
    norm = float(np.linalg.norm(n))
    if norm < 1e-12:
        return None
    n = n / norm
    d = rng.standard_normal(d0)
    d -= float(d @ n) * n
    dn = float(np.linalg.norm(d))
    if dn < 1e-9:
        return None
    d /= dn
    for step in (1e-2 * diag, 3e-3 * diag, 1e-3 * diag):
        cp = _find_critical_near(
            oracle, x + step * d, n, 5e-3 * diag, config.search_tolerance, phase
        )
        if cp is not None:
            return cp
    return None


def targeted_search(
    oracle, prefix, component, missing_mask, member_points, config, phase="targeted"
):
    """Walk the component's hyperplane toward regions activating missing inputs.

    From a member critical point, steps in the tangent direction that
    increases the missing previous-layer neuron's pre-activation, re-finding
    the critical point on the oracle after every step.  Returns the new
    critical points whose active masks cover previously missing entries.
    """
    missing = np.flatnonzero(np.asarray(missing_mask, dtype=bool))
    if missing.size == 0 or not member_points:
        return []
    v = component.signature()
    d0 = prefix.input_dim
    diag = np.sqrt(d0) * abs(config.domain_high - config.domain_low)
    budget = config.targeted_step_budget * prefix.hidden_dim
    found = []
    rng = np.random.default_rng((config.seed_directions, 11, int(missing[0])))
    done = set()
    for k in missing:
        if int(k) in done:
            continue
        x = np.asarray(member_points[0].x, dtype=np.float64)
        step = 1e-2 * diag
        delta = 5e-3 * diag
        steps = 0
        covered = False
        while steps < budget and not covered:
            steps += 1
            pre = prefix.pre_final(x)
            # accept any missing entry switching on, not only the targeted
            # one: past a foreign crossing the partial signature no longer
            # describes the surface, so the walk could not continue anyway,
            # and the crossing point itself is the witness we are after
            if float(np.max(pre[missing])) > 1e-9:
                cp = CriticalPoint(x=x, line=(x, x), t=0.0, residual=0.0)
                found.append(cp)
                done.update(int(j) for j in missing if pre[j] > 1e-9)
                covered = True
                break
            n = prefix.gamma(x).T @ v
            norm = float(np.linalg.norm(n))
            if norm < 1e-12:
                break
            g = prefix.grad_pre_final(x)[k]
            tang = g - (g @ n / norm**2) * n
            tn = float(np.linalg.norm(tang))
            if tn < 1e-10:
                break  # cannot increase this input along the hyperplane here
            tang /= tn
            trial = x + step * tang
            cp = _find_critical_near(
                oracle, trial, n / norm, delta, config.search_tolerance, phase
            )
            if cp is not None:
                # guard against locking onto a different neuron's hyperplane:
                # a genuine continuation stays on the claimed surface relative
                # to the current point, a stranger sits O(delta) off it
                drift = float(v @ prefix.hidden(cp.x)) - float(v @ prefix.hidden(x))
                if abs(drift) > 0.2 * delta * norm:
                    cp = None
                elif not _same_neuron(oracle, prefix, v, cp.x, 1e-6 * diag, rng, phase):
                    cp = None
            if cp is None:
                step *= 0.5
                if step < 1e-7 * diag:
                    break
                continue
            x = cp.x
            step = min(step * 1.5, 5e-2 * diag)
    return found


def _aligned_assignment(components, true_rows):
    """Hungarian matching of component signatures to true rows, sign-agnostic."""
    from scipy.optimize import linear_sum_assignment

    n_comp, n_true = len(components), true_rows.shape[0]
    cost = np.full((n_comp, n_true), 2.0)
    for i, comp in enumerate(components):
        sig = comp.signature()
        m = comp.mask
        sn = sig[m] / max(np.linalg.norm(sig[m]), 1e-30)
        for j in range(n_true):
            w = true_rows[j, m]
            wn = w / max(np.linalg.norm(w), 1e-30)
            cost[i, j] = 1.0 - abs(float(sn @ wn))
    rows_idx, cols_idx = linear_sum_assignment(cost)
    return {int(i): int(j) for i, j in zip(rows_idx, cols_idx) if cost[i, j] < 0.5}


def resolve_signs(mode, components, layer, prefix, truth=None, witness=None, config=None):
    """Assemble a RecoveredLayer with signs fixed per the requested mode.

    `ground-truth` aligns against the true layer (evaluation only: fixes sign,
    the reporting permutation, and the per-neuron scale); `zero-query` uses an
    all-inactive witness input; `none` leaves both sign candidates open.
    """
    d_prev = prefix.hidden_dim
    if mode == "ground-truth":
        if truth is None:
            raise ValueError("ground-truth sign mode needs the true model")
        true_rows = truth.weights[layer - 1]
        width = true_rows.shape[0]
        assignment = _aligned_assignment(components, true_rows)
        rows = np.zeros((width, d_prev))
        biases = np.zeros(width)
        masks = np.zeros((width, d_prev), dtype=bool)
        statuses = [MISSED] * width
        scales = np.zeros(width)
        permutation = [None] * len(components)
        for i, comp in enumerate(components):
            if i not in assignment:
                continue
            j = assignment[i]
            sig = comp.signature()
            m = comp.mask
            lam = float(sig[m] @ true_rows[j, m]) / max(float(sig[m] @ sig[m]), 1e-30)
            comp.sign = 1 if lam > 0 else -1
            rows[j] = lam * sig
            biases[j] = lam * (comp.bias if comp.bias is not None else 0.0)
            masks[j] = m
            statuses[j] = RECOVERED
            scales[j] = abs(lam)
            permutation[i] = j
        return RecoveredLayer(
            layer=layer,
            rows=rows,
            biases=biases,
            masks=masks,
            statuses=statuses,
            permutation=permutation,
            scales=scales,
        )

    width = len(components)
    rows = np.zeros((width, d_prev))
    biases = np.zeros(width)
    masks = np.zeros((width, d_prev), dtype=bool)
    ambiguous = np.zeros(width, dtype=bool)
    if mode == "zero-query":
        if witness is None:
            raise ValueError("zero-query sign mode needs a witness input")
        from .layer_filter import zero_query_signs

        zero_query_signs(components, witness, prefix)
    elif mode != "none":
        raise ValueError(f"unknown sign mode {mode!r}")
    for i, comp in enumerate(components):
        sig = comp.signature()
        sign = comp.sign if mode == "zero-query" else 0
        if sign == 0:
            rows[i] = sig
            ambiguous[i] = True
        else:
            rows[i] = sign * sig
        biases[i] = (sign if sign else 1) * (comp.bias if comp.bias is not None else 0.0)
        masks[i] = comp.mask
    return RecoveredLayer(
        layer=layer,
        rows=rows,
        biases=biases,
        masks=masks,
        statuses=[RECOVERED] * width,
        sign_ambiguous=ambiguous,
    )

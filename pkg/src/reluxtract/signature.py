"""Partial signature recovery from a single critical point.

Around a critical point the second difference f(x+eps*D) + f(x-eps*D) - 2f(x)
isolates the target neuron's response; sign correlation against a reference
direction strips the absolute value, and a least-squares solve over sampled
directions yields the scaled row restricted to the active input coordinates,
together with a kernel basis when the direction matrix is rank deficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(eq=False)
class SolutionSpace:
    layer: int
    particular: np.ndarray  # (d_{i-1},), zero outside mask; min-norm solution
    kernel: np.ndarray  # (k, d_{i-1}) orthonormal rows, zero outside mask
    mask: np.ndarray  # bool (d_{i-1},): input coords active at the critical point
    rank: int
    residual: float
    point_id: int = -1

    @property
    def kernel_dim(self):
        return self.kernel.shape[0]

    @property
    def support(self):
        return int(np.count_nonzero(self.mask))


class RecoveryError(RuntimeError):
    pass


def second_difference(oracle, x, delta, eps, fx=None, phase="signature"):
    """f(x + eps*delta) + f(x - eps*delta) - 2 f(x) (vector over outputs)."""
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if fx is None:
        fx = oracle.query(x, phase=phase)
    pair = oracle.query(np.stack([x + eps * delta, x - eps * delta]), phase=phase)
    return pair[0] + pair[1] - 2.0 * fx


def _project(vec, coord):
    return float(np.asarray(vec).reshape(-1)[coord])


def _signed_ratio_from_values(q2, q0, q1):
    """alpha/beta with the correct relative sign, from scalar second differences.

    q0, q2, q1 are the second differences along D0, D and D+D0; all carry the
    same unknown constant c, so c cancels in the comparisons.
    """
    same = abs(q1 - (q2 + q0))
    opposite = abs(q1 - np.copysign(abs(q2 - q0), q0))
    ratio = q2 / q0
    return ratio if same <= opposite else -ratio


def signed_ratio(oracle, x, delta, delta0, eps, fx=None, phase="signature"):
    """(Gamma D . A_k) / (Gamma D0 . A_k), sign included, using 6 queries."""
    x = np.asarray(x, dtype=np.float64)
    if fx is None:
        fx = oracle.query(x, phase=phase)
    q0v = second_difference(oracle, x, delta0, eps, fx=fx, phase=phase)
    coord = int(np.argmax(np.abs(q0v)))
    q0 = _project(q0v, coord)
    scale = float(np.max(np.abs(fx))) + 1.0
    if abs(q0) < 1e-11 * scale:
        raise RecoveryError("reference direction has a vanishing second difference")
    q2 = _project(second_difference(oracle, x, delta, eps, fx=fx, phase=phase), coord)
    q1 = _project(second_difference(oracle, x, delta + delta0, eps, fx=fx, phase=phase), coord)
    return _signed_ratio_from_values(q2, q0, q1)


def choose_eps(oracle, x, delta0, config, fx, phase="signature"):
    """Halve eps until two successive normalized second differences agree."""
    d0 = x.shape[0]
    diag = np.sqrt(d0) * abs(config.domain_high - config.domain_low)
    eps = config.signature_eps_initial * diag
    prev = None
    for _ in range(40):
        q = second_difference(oracle, x, delta0, eps, fx=fx, phase=phase)
        coord = int(np.argmax(np.abs(q)))
        val = _project(q, coord) / eps
        if prev is not None and abs(val - prev) <= 1e-6 * max(abs(val), abs(prev), 1e-30):
            return eps * 2.0  # the larger of the two agreeing scales
        prev = val
        eps *= 0.5
    return eps


def _batched_second_differences(oracle, x, deltas, eps, fx, phase):
    """Second differences for many directions in one batched query."""
    pts = np.concatenate([x + eps * deltas, x - eps * deltas])
    vals = oracle.query(pts, phase=phase)
    n = deltas.shape[0]
    return vals[:n] + vals[n:] - 2.0 * fx


def recover_solution_space(oracle, prefix, cp, config, phase="signature"):
    """Solution space for the scaled row of the critical point's neuron.

    Returns None when the point is unusable (vanishing reference response or a
    least-squares residual suggesting a near-coincident double critical point).
    """
    x = np.asarray(cp.x, dtype=np.float64)
    d0 = x.shape[0]
    d_prev = prefix.hidden_dim
    mask = prefix.active_mask(x)
    support = int(np.count_nonzero(mask))
    layer = prefix.n_layers + 1
    if support == 0:
        return None
    fx = oracle.query(x, phase=phase)

    rng = np.random.default_rng((config.seed_directions, max(cp.point_id, 0)))
    if prefix.is_input:
        deltas = np.eye(d0)
        gamma_rows = deltas  # Gamma is the identity for layer 1
    else:
        n_dirs = 2 * d_prev + config.signature_direction_oversample
        deltas = rng.standard_normal((n_dirs, d0))
        deltas /= np.linalg.norm(deltas, axis=1, keepdims=True)
        gamma = prefix.gamma(x)
        gamma_rows = deltas @ gamma.T  # row m = Gamma @ delta_m

    for _attempt in range(4):
        delta0 = rng.standard_normal(d0)
        delta0 /= np.linalg.norm(delta0)
        eps = choose_eps(oracle, x, delta0, config, fx, phase=phase)
        q0v = second_difference(oracle, x, delta0, eps, fx=fx, phase=phase)
        coord = int(np.argmax(np.abs(q0v)))
        q0 = _project(q0v, coord)
        if abs(q0) >= 1e-10 * (float(np.max(np.abs(fx))) + 1.0):
            break
    else:
        return None

    q2 = _batched_second_differences(oracle, x, deltas, eps, fx, phase)[:, coord]
    q1 = _batched_second_differences(oracle, x, deltas + delta0, eps, fx, phase)[:, coord]
    ratios = np.array(
        [_signed_ratio_from_values(q2[m], q0, q1[m]) for m in range(deltas.shape[0])]
    )

    if prefix.is_input:
        gamma0 = prefix.gamma(x) @ delta0 if not prefix.is_input else delta0
        particular = ratios.copy()
        # consistency row: delta0 . v should be 1 in the chosen scaling
        residual = abs(float(gamma0 @ particular) - 1.0) / max(1.0, float(np.abs(particular).max()))
        if residual > config.signature_residual_tol:
            return None
        space = SolutionSpace(
            layer=layer,
            particular=particular,
            kernel=np.zeros((0, d0)),
            mask=mask,
            rank=d0,
            residual=residual,
            point_id=cp.point_id,
        )
        return space

    gamma0_row = prefix.gamma(x) @ delta0
    rows = np.vstack([gamma_rows, gamma0_row])[:, mask]
    rhs = np.concatenate([ratios, [1.0]])
    u, sv, vt = np.linalg.svd(rows, full_matrices=True)
    rank = int(np.sum(sv > config.signature_rank_threshold * sv[0])) if sv.size else 0
    inv = np.zeros_like(sv)
    inv[:rank] = 1.0 / sv[:rank]
    sol = vt[:rank].T @ (inv[:rank] * (u[:, :rank].T @ rhs))
    fit = rows @ sol
    residual = float(np.linalg.norm(fit - rhs) / max(np.linalg.norm(rhs), 1e-30))
    if residual > config.signature_residual_tol:
        return None
    particular = np.zeros(d_prev)
    particular[mask] = sol
    kernel = np.zeros((support - rank, d_prev))
    kernel[:, mask] = vt[rank:]
    return SolutionSpace(
        layer=layer,
        particular=particular,
        kernel=kernel,
        mask=mask,
        rank=rank,
        residual=residual,
        point_id=cp.point_id,
    )

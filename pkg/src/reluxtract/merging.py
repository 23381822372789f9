"""Merging partial signatures into components.

Full-rank partial signatures merge when their shared entries are
proportional; rank-deficient ones merge by intersecting their affine
solution spaces, which requires strictly more shared active coordinates than
unknowns (1 + both kernel dimensions) so that accidental cross-neuron merges
are rejected by inconsistency.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signature import SolutionSpace

INCOMPATIBLE = "incompatible"
INCOMPARABLE = "insufficient-overlap"
DEGENERATE = "degenerate-scale"


@dataclass(eq=False)
class Component:
    layer: int
    space: SolutionSpace
    member_ids: list
    created: int = 0
    deep_merges: int = 0
    deep_member_ids: list = field(default_factory=list)
    rescued_deep: int = 0  # deep merges discounted by the rescue check
    rescue_flag: bool = False
    sign: int = 0  # 0 = unresolved
    bias: float = None

    @property
    def size(self):
        return len(self.member_ids)

    @property
    def tau(self):
        return (self.deep_merges - self.rescued_deep) / self.size

    @property
    def mask(self):
        return self.space.mask

    @property
    def unknown_entries(self):
        return int(np.count_nonzero(~self.space.mask))

    def signature(self):
        """Merged values scaled so the largest-magnitude known entry is 1."""
        v = self.space.particular.copy()
        peak = np.abs(v).max()
        return v / peak if peak > 0 else v


def try_merge_full(sig_a, sig_b, tol, min_shared=2):
    """Proportionality merge of two full-rank partial signatures."""
    if sig_a.kernel_dim or sig_b.kernel_dim:
        raise ValueError("try_merge_full requires empty kernels")
    return merge_spaces(sig_a, sig_b, tol, min_shared=min_shared)


def _full_merge(sa, sb, tol, shared):
    a = sa.particular[shared]
    b = sb.particular[shared]
    bb = float(b @ b)
    if bb == 0.0:
        return None, DEGENERATE
    lam = float(a @ b) / bb
    if lam == 0.0:
        return None, DEGENERATE
    # noise in a recovered entry scales with the row magnitude, not the entry,
    # so near-zero entries get a row-relative floor instead of a pure ratio test
    row_scale = max(float(np.abs(a).max(initial=0.0)), float(np.abs(lam * b).max(initial=0.0)))
    bounds = np.maximum(np.abs(a), np.abs(lam * b))
    bounds = np.maximum(bounds, 1e-2 * row_scale)
    if np.any(np.abs(a - lam * b) > tol * bounds):
        return None, INCOMPATIBLE
    merged = np.where(sa.mask, sa.particular, lam * sb.particular)
    merged[shared] = 0.5 * (a + lam * b)
    mask = sa.mask | sb.mask
    space = SolutionSpace(
        layer=sa.layer,
        particular=merged,
        kernel=np.zeros((0, merged.shape[0])),
        mask=mask,
        rank=int(np.count_nonzero(mask)),
        residual=float(np.abs(a - lam * b).max() / max(np.abs(a).max(), 1e-30)),
        point_id=-1,
    )
    return space, "merged"


def merge_spaces(sa, sb, tol, min_shared=2):
    """Intersect two solution spaces; returns (merged_space | None, reason)."""
    if sa.particular.shape != sb.particular.shape:
        raise ValueError("spaces live in different layers")
    shared = sa.mask & sb.mask
    n_shared = int(np.count_nonzero(shared))
    k, r = sa.kernel_dim, sb.kernel_dim
    if n_shared < max(min_shared, 2 + k + r):  # l > 1 + k + r
        return None, INCOMPARABLE
    if k == 0 and r == 0:
        return _full_merge(sa, sb, tol, shared)

    # unknowns u = (mu_1..mu_k, lambda, nu_1..nu_r):
    #   L_a + Ka^T mu = lambda L_b + Kb^T nu   on shared coordinates
    m = np.concatenate(
        [
            sa.kernel[:, shared].T if k else np.zeros((n_shared, 0)),
            -sb.particular[shared][:, None],
            -sb.kernel[:, shared].T if r else np.zeros((n_shared, 0)),
        ],
        axis=1,
    )
    rhs = -sa.particular[shared]
    u, sv, vt = np.linalg.svd(m, full_matrices=True)
    rank_m = int(np.sum(sv > 1e-10 * sv[0])) if sv.size and sv[0] > 0 else 0
    inv = np.zeros_like(sv)
    inv[:rank_m] = 1.0 / sv[:rank_m]
    sol = vt[:rank_m].T @ (inv[:rank_m] * (u[:, :rank_m].T @ rhs))
    fit = m @ sol
    scale = max(float(np.linalg.norm(rhs)), 1e-30)
    if float(np.linalg.norm(fit - rhs)) > tol * scale:
        return None, INCOMPATIBLE
    mu, lam, nu = sol[:k], float(sol[k]), sol[k + 1:]
    norm_b = float(np.linalg.norm(sb.particular[shared]))
    if abs(lam) * max(norm_b, 1e-30) < 1e-8 * scale:
        return None, DEGENERATE

    va = sa.particular + (mu @ sa.kernel if k else 0.0)
    vb = lam * sb.particular + (nu @ sb.kernel if r else 0.0)
    merged = np.where(sa.mask, va, vb)
    merged[shared] = 0.5 * (va[shared] + vb[shared])
    mask = sa.mask | sb.mask

    # leftover ambiguity: nullspace of the system, mapped back to row space
    null = vt[rank_m:]
    dirs = []
    for n_vec in null:
        dmu, dlam, dnu = n_vec[:k], float(n_vec[k]), n_vec[k + 1:]
        d = np.where(
            sa.mask,
            dmu @ sa.kernel if k else np.zeros_like(merged),
            dlam * sb.particular + (dnu @ sb.kernel if r else 0.0),
        )
        if np.linalg.norm(d) > 1e-12:
            dirs.append(d)
    if dirs:
        q, rr = np.linalg.qr(np.array(dirs).T)
        keep = np.abs(np.diag(rr)) > 1e-10
        kernel = q.T[keep]
    else:
        kernel = np.zeros((0, merged.shape[0]))
    support = int(np.count_nonzero(mask))
    space = SolutionSpace(
        layer=sa.layer,
        particular=merged,
        kernel=kernel,
        mask=mask,
        rank=support - kernel.shape[0],
        residual=float(np.linalg.norm(fit - rhs) / scale),
        point_id=-1,
    )
    return space, "merged"


def _best_merge(components, space, tol, min_shared):
    best = None
    for comp in components:
        merged, reason = merge_spaces(comp.space, space, tol, min_shared=min_shared)
        if merged is None:
            continue
        overlap = int(np.count_nonzero(comp.mask & space.mask))
        key = (-overlap, comp.created)
        if best is None or key < best[0]:
            best = (key, comp, merged)
    return best


def cluster(spaces, config, layer_width=None):
    """Greedy pairwise clustering of solution spaces into components.

    Deterministic given the input order; unmergeable spaces become singleton
    components.
    """
    tol = config.merge_proportional_tol
    components = []
    for space in spaces:
        best = _best_merge(components, space, tol, config.merge_min_shared)
        if best is None:
            components.append(
                Component(layer=space.layer, space=space, member_ids=[space.point_id], created=len(components))
            )
        else:
            _, comp, merged = best
            comp.space = merged
            comp.member_ids.append(space.point_id)

    # consolidation: two components of one neuron can form before their masks
    # overlap enough; late members may have bridged them, so retry pairwise
    changed = True
    while changed:
        changed = False
        for i, a in enumerate(components):
            for b in components[i + 1 :]:
                merged, _ = merge_spaces(a.space, b.space, tol, min_shared=config.merge_min_shared)
                if merged is None:
                    continue
                a.space = merged
                a.member_ids.extend(b.member_ids)
                a.deep_merges += b.deep_merges
                a.deep_member_ids.extend(b.deep_member_ids)
                a.rescued_deep += b.rescued_deep
                components.remove(b)
                changed = True
                break
            if changed:
                break
    return components


def count_deep_merges(components, deep_spaces, config):
    """Attribute deeper-flagged spaces to the component they would merge with."""
    for space in deep_spaces:
        best = _best_merge(components, space, config.merge_proportional_tol, config.merge_min_shared)
        if best is not None:
            best[1].deep_merges += 1
            best[1].deep_member_ids.append(space.point_id)
    return components

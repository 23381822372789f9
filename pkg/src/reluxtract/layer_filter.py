"""Filtering out critical points and components that belong to deeper layers.

A hyperplane recovered from a target-layer critical point stays critical
everywhere on its extension through the extracted prefix's cell complex; a
deeper neuron's hyperplane bends on neurons that have not been extracted
yet, so following the claimed hyperplane across extracted cells eventually
reaches points that are not critical on the oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .critical_search import scan_line_budgeted

DEEPER = "deeper"
INCONCLUSIVE = "inconclusive"


@dataclass
class DepthTestResult:
    point_id: int
    verdict: str
    probes_used: int
    failing_probe: np.ndarray = None

    def __post_init__(self):
        if self.verdict == DEEPER and self.failing_probe is None:
            raise ValueError("a deeper verdict needs a failing probe")


def _pattern_bits(prefix, z):
    pat = prefix.pattern(z)
    return np.concatenate(pat) if pat else np.zeros(0, dtype=bool)


def _surface(prefix, v, b, z):
    return float(v @ prefix.hidden(z)) + b


def _normal(prefix, v, z):
    return prefix.gamma(z).T @ v


def _project_to_surface(prefix, v, b, z, tries=6):
    """Newton steps along the local normal; exact once the cell is stable."""
    for _ in range(tries):
        g = _surface(prefix, v, b, z)
        n = _normal(prefix, v, z)
        nn = float(n @ n)
        if nn < 1e-24:
            return None
        z = z - (g / nn) * n
        if abs(_surface(prefix, v, b, z)) < 1e-12 * (1.0 + abs(b)):
            return z
    return z if abs(_surface(prefix, v, b, z)) < 1e-9 * (1.0 + abs(b)) else None


CRITICAL = "critical"
DISPLACED = "displaced"
FLAT = "flat"


def _probe_kinks(oracle, prefix, v, b, p, config, phase, scale=1.0):
    """(kink positions, window stable) on a normal segment through p.

    `scale` widens the scanned segment while keeping positions in the
    unscaled window's coordinates, so a center kink reads 0.5 regardless and
    positions are directly comparable across probes of different widths.
    `stable` means the extracted prefix's activation pattern is constant over
    the probed window: only then is the claimed surface a plane inside it and
    an off-center kink meaningful.  On a prefix cell boundary the surface
    legitimately kinks in input space, which mimics a deeper-layer bend.
    """
    n = _normal(prefix, v, p)
    norm = float(np.linalg.norm(n))
    if norm == 0.0:
        return None
    u = n / norm
    diag = np.sqrt(p.shape[0]) * abs(config.domain_high - config.domain_low)
    delta = 1e-3 * diag
    ref = _pattern_bits(prefix, p)

    def window_stable(d):
        return all(
            np.array_equal(_pattern_bits(prefix, p + t * scale * d * u), ref)
            for t in (-1.0, -0.5, 0.5, 1.0)
        )

    stable = True
    while not window_stable(delta):
        delta *= 0.5
        if delta <= 1e-8 * diag:
            stable = False
            break
    found = scan_line_budgeted(
        oracle,
        p - scale * delta * u,
        p + scale * delta * u,
        tol=config.search_tolerance,
        max_queries=config.filter_scan_query_cap,
        phase=phase,
    )
    if found is None:
        # too kink-dense to resolve within the cap: unusable as evidence
        return None
    kinks = [0.5 + (cp.t - 0.5) * scale for cp in found if np.isfinite(cp.residual)]
    return kinks, stable


def _verdict(probe):
    if probe is None:
        return CRITICAL  # degenerate normals count as uninformative
    kinks, _ = probe
    if any(abs(t - 0.5) < 0.2 for t in kinks):
        return CRITICAL
    return DISPLACED if kinks else FLAT


def _probe_verdict(oracle, prefix, v, b, p, config, phase):
    """Oracle check at p: does f kink on the claimed hyperplane, kink somewhere
    nearby but off it, or not kink at all (uninformative: the neuron may have
    a zero downstream coefficient here, making its criticality invisible)?"""
    return _verdict(_probe_kinks(oracle, prefix, v, b, p, config, phase))


def _off_center(kinks):
    return [t for t in (kinks or []) if abs(t - 0.5) >= 0.2]


def _bend_evidence(oracle, prefix, v, b, good, flat, config, phase, budget=20):
    """Localize the point where the claimed surface stops being critical.

    `good` probes critical, `flat` does not.  Bisecting between them on the
    surface pins the transition down.  Just past it, a kink slightly off the
    claimed surface that is absent just before it is the bent continuation of
    a deeper neuron's surface (returns that probe point).  An off-surface
    kink present on BOTH sides is an unrelated neuron's hyperplane crossing
    the probe window, and no kink at all past the transition is a downstream
    coefficient switching to zero; both return None.
    """
    diag = np.sqrt(good.shape[0]) * abs(config.domain_high - config.domain_low)
    used = 0
    while used < budget and float(np.linalg.norm(flat - good)) > 2e-5 * diag:
        mid = _project_to_surface(prefix, v, b, 0.5 * (good + flat))
        if mid is None:
            return None, used
        used += 1
        if _probe_verdict(oracle, prefix, v, b, mid, config, phase) == CRITICAL:
            good = mid
        else:
            flat = mid
    if float(np.linalg.norm(flat - good)) > 1e-4 * diag:
        # projections bounced instead of bisecting; comparing far-apart
        # points proves nothing about a bend between them
        return None, used
    flat_probe = _probe_kinks(oracle, prefix, v, b, flat, config, phase)
    good_probe = _probe_kinks(oracle, prefix, v, b, good, config, phase)
    used += 2
    if flat_probe is None or good_probe is None:
        return None, used
    flat_kinks, flat_stable = flat_probe
    good_kinks, good_stable = good_probe
    # an unstable window sits on an extracted cell boundary where the claimed
    # surface legitimately kinks in input space; its off-center kinks are not
    # evidence of an unextracted neuron
    if not (flat_stable and good_stable):
        return None, used
    # bisection stops the moment the kink leaves the central band, so a
    # genuine bent continuation shows up just past the 0.2 offset (and its
    # mirror on the good side sits just inside the band); a kink much
    # further out is an unrelated hyperplane clipping the window edge
    if any(abs(t - 0.5) <= 0.35 for t in _off_center(flat_kinks)) and not _off_center(
        good_kinks
    ):
        return flat, used
    return None, used


def test_point_depth(oracle, prefix, space, cp, config, probes=None, phase="filtering"):
    """Follow the recovered hyperplane through the extracted prefix's cells.

    Every cell crossing gives an intersection point with a previously
    extracted hyperplane; each is checked for criticality on the oracle.  Any
    non-critical probe proves the point belongs to a deeper layer; a clean
    sweep proves nothing and the verdict stays inconclusive.
    """
    probes = config.filter_probes if probes is None else probes
    if probes <= 0 or space.kernel_dim > 0:
        return DepthTestResult(cp.point_id, INCONCLUSIVE, 0)
    v = space.particular
    x0 = np.asarray(cp.x, dtype=np.float64)
    b = -float(v @ prefix.hidden(x0))
    d0 = x0.shape[0]
    low = min(config.domain_low, float(x0.min())) - 1.0
    high = max(config.domain_high, float(x0.max())) + 1.0
    diag = np.sqrt(d0) * (high - low)
    step0 = 1e-2 * diag
    probe_stride = 1 if prefix.is_input else 5
    rng = np.random.default_rng((config.seed_directions, max(cp.point_id, 0), 7))
    used = 0
    for _direction in range(4 * probes):
        if used >= probes:
            break
        d = rng.standard_normal(d0)
        d /= np.linalg.norm(d)
        p = x0.copy()
        pattern = _pattern_bits(prefix, p)
        step = step0
        moved = False
        last_good = x0  # most recent point confirmed critical on the oracle
        for _step in range(60):
            if used >= probes:
                break
            n = _normal(prefix, v, p)
            norm = float(np.linalg.norm(n))
            if norm < 1e-12:
                break
            tang = d - (d @ n / norm**2) * n
            tn = float(np.linalg.norm(tang))
            if tn < 1e-9:
                break
            tang /= tn
            q = p + step * tang
            if np.any(q < low) or np.any(q > high):
                break
            new_pat = _pattern_bits(prefix, q)
            if np.array_equal(new_pat, pattern):
                p = q
                moved = True
                # with no extracted cells (or inside a large one) bends are
                # invisible, so probe periodically while staying in the cell
                if _step % probe_stride == probe_stride - 1 and used < probes:
                    mid = _project_to_surface(prefix, v, b, p)
                    if mid is not None and np.array_equal(
                        _pattern_bits(prefix, mid), pattern
                    ):
                        used += 1
                        verdict = _probe_verdict(oracle, prefix, v, b, mid, config, phase)
                        if verdict != CRITICAL:
                            bend, extra = _bend_evidence(
                                oracle, prefix, v, b, last_good, mid, config, phase
                            )
                            used += extra
                            if bend is not None:
                                return DepthTestResult(
                                    cp.point_id, DEEPER, used, failing_probe=bend
                                )
                            break
                        last_good = mid
                        p = mid
                        moved = False
                continue
            # bisect the step to the cell boundary, then push just past it
            lo_t, hi_t = 0.0, 1.0
            for _ in range(50):
                mid = 0.5 * (lo_t + hi_t)
                if np.array_equal(_pattern_bits(prefix, p + mid * step * tang), pattern):
                    lo_t = mid
                else:
                    hi_t = mid
            inside = p + min(1.0, hi_t + 0.02) * step * tang
            proj = _project_to_surface(prefix, v, b, inside)
            if proj is None:
                break
            cell = _pattern_bits(prefix, proj)
            if np.array_equal(cell, pattern):
                # projection slid back into the old cell; shorten and retry
                step *= 0.5
                continue
            if np.any(prefix.active_mask(proj) & ~space.mask):
                # an input with an unknown signature entry switched on: the
                # extended surface is no longer trustworthy past this cell
                break
            used += 1
            verdict = _probe_verdict(oracle, prefix, v, b, proj, config, phase)
            if verdict != CRITICAL:
                bend, extra = _bend_evidence(
                    oracle, prefix, v, b, last_good, proj, config, phase
                )
                used += extra
                if bend is not None:
                    return DepthTestResult(cp.point_id, DEEPER, used, failing_probe=bend)
                break  # this direction proves nothing further
            last_good = proj
            p = proj
            pattern = cell
            moved = False
            step = step0
        # a bend can also hide inside the current cell (the true hyperplane
        # kinks on a deeper neuron without any extracted crossing); the walk's
        # end point still sits on the claimed surface, so test it too
        if moved and used < probes:
            end = _project_to_surface(prefix, v, b, p)
            if end is not None and np.array_equal(_pattern_bits(prefix, end), pattern):
                used += 1
                verdict = _probe_verdict(oracle, prefix, v, b, end, config, phase)
                if verdict != CRITICAL:
                    bend, extra = _bend_evidence(
                        oracle, prefix, v, b, last_good, end, config, phase
                    )
                    used += extra
                    if bend is not None:
                        return DepthTestResult(
                            cp.point_id, DEEPER, used, failing_probe=bend
                        )
    return DepthTestResult(cp.point_id, INCONCLUSIVE, used)


def discard_components(components, config, layer_width):
    """Size, noise-ratio and unknown-entry filters; returns (kept, discarded).

    Discarded entries are (component, reason) pairs.
    """
    if not components:
        return [], []
    tau_threshold = config.tau_threshold_for_width(layer_width)
    max_size = max(c.size for c in components)
    kept, discarded = [], []
    for comp in components:
        if comp.size < config.filter_size_fraction * max_size:
            discarded.append((comp, "small"))
        elif comp.tau > tau_threshold:
            discarded.append((comp, "noisy"))
        elif (
            config.filter_unknown_half_rule
            and comp.unknown_entries * 2 >= comp.space.mask.shape[0]
            and (comp.tau > 0 or comp.size == 1)
        ):
            # a single witness with a mostly-unknown signature carries no
            # corroborating evidence, and remote verification cannot judge it
            # either: probes are confined to where its unknown inputs stay
            # inactive, which is exactly where a deep composition holds anyway
            discarded.append((comp, "half-unknown"))
        else:
            kept.append(comp)
    return kept, discarded


VALID = "valid"
INVALID = "invalid"


def consensus_bias(estimates, rel_tol=1e-6):
    """Bias agreed on by the largest cluster of per-witness estimates.

    Genuine members of a component sit exactly on their neuron's surface, so
    their per-point bias estimates agree to rounding error; points of other
    surfaces that merged into the component scatter.  A plain median breaks
    once strangers outnumber genuine members, the largest coherent cluster
    does not.  Returns (bias, agreeing) where `agreeing` flags the estimates
    within tolerance of the winning cluster.
    """
    vals = np.asarray(estimates, dtype=np.float64)
    if vals.size == 0:
        return 0.0, np.zeros(0, dtype=bool)
    best = None
    for center in vals:
        tol = rel_tol * (1.0 + abs(center))
        agree = np.abs(vals - center) <= tol
        n = int(agree.sum())
        if best is None or n > best[0]:
            best = (n, agree)
    _, agree = best
    return float(np.median(vals[agree])), agree


def verify_component(oracle, prefix, component, witnesses, config, phase="filtering"):
    """Probe the component's hyperplane at random spots all over the domain.

    A genuine next-layer neuron is critical wherever its affine surface
    intersects the domain, while a deeper-layer composition only holds near
    the activation region it was harvested from, so remote probes miss its
    true surface.  Samples random domain points, projects each onto the
    claimed surface, and checks for an oracle kink there.  Projection uses
    only the extracted prefix; oracle queries are spent on the kink scans.

    Returns (verdict, ok, bad): VALID when enough probes land and at most
    `filter_verify_max_bad` miss, INVALID once more than that miss, and
    INCONCLUSIVE when too few probes land inside the domain to judge.
    """
    v = component.space.particular
    mask = component.space.mask
    # where a kernel-supported hidden entry is active the surface depends on
    # the undetermined kernel coefficient, so the representative's plane says
    # nothing there; treat those entries like unknown ones
    unknown = ~mask
    if component.space.kernel_dim:
        unknown = unknown | np.any(np.abs(component.space.kernel) > 1e-9, axis=0)
    hs = np.array([prefix.hidden(np.asarray(x, dtype=np.float64)) for x in witnesses])
    b, _ = consensus_bias(-(hs @ v))
    rng = np.random.default_rng((config.seed_directions, max(component.space.point_id, 0), 11))
    samples = config.filter_verify_samples
    ok = bad = 0
    for _try in range(40 * samples):
        if ok + bad >= samples or bad > config.filter_verify_max_bad:
            break
        x0 = rng.uniform(config.domain_low, config.domain_high, prefix.input_dim)
        p = _project_to_surface(prefix, v, b, x0)
        if p is None or np.any(p < config.domain_low) or np.any(p > config.domain_high):
            continue
        if unknown.any():
            # unknown signature entries make the surface meaningless where
            # their inputs are active; guard the whole scan window, not just
            # its center, or a boundary crossing inside the window displaces
            # the kink and indicts a genuine neuron
            n = _normal(prefix, v, p)
            norm = float(np.linalg.norm(n))
            if norm == 0.0:
                continue
            span = 0.25 * 1e-3 * np.sqrt(p.shape[0]) * abs(
                config.domain_high - config.domain_low
            ) * n / norm
            if any(
                np.any(prefix.hidden(q)[unknown] > 0.0) for q in (p, p - span, p + span)
            ):
                continue
        probe = _probe_kinks(oracle, prefix, v, b, p, config, phase, scale=0.25)
        if probe is None:
            continue
        kinks, _ = probe
        # a genuine surface kinks at the projected point itself; the wide
        # acceptance band of the depth test would let unrelated hyperplanes
        # (dense in trained networks) masquerade as hits here
        if any(abs(t - 0.5) < 0.05 for t in kinks):
            ok += 1
        else:
            bad += 1
    if bad > config.filter_verify_max_bad:
        return INVALID, ok, bad
    if ok >= config.filter_verify_min_ok:
        return VALID, ok, bad
    return INCONCLUSIVE, ok, bad


def rescue_check(oracle, components, candidate, prefix, deep_points, config):
    """Discount deep-flagged members sitting where every trusted neuron is off.

    A neuron that is the only active one in some region produces critical
    points there that look deeper than they are; those points land on the
    inactive side of all other (trusted, fully extracted) neurons of the
    layer.  Uses only the extracted parameters, no oracle queries.
    """
    trusted = [
        c
        for c in components
        if c is not candidate and c.sign != 0 and c.bias is not None and c.tau <= config.filter_tau_threshold
    ]
    if not trusted or not candidate.deep_member_ids:
        return candidate.tau
    rescued = 0
    for pid in candidate.deep_member_ids:
        x = deep_points.get(pid)
        if x is None:
            continue
        h = prefix.hidden(np.asarray(x, dtype=np.float64))
        if all(c.sign * (float(c.signature() @ h) + c.bias) < 0 for c in trusted):
            rescued += 1
    candidate.rescued_deep = rescued
    candidate.rescue_flag = rescued > 0
    return candidate.tau


def zero_query_signs(components, witness, prefix):
    """Fix signs from a witness input where the whole layer is inactive.

    All neurons being off at the witness forces a negative affine value per
    neuron, so a positive value under the current scaling means the scale's
    sign is flipped.  Issues no oracle queries.
    """
    h = prefix.hidden(np.asarray(witness, dtype=np.float64))
    assigned = {}
    for comp in components:
        if comp.bias is None:
            assigned[id(comp)] = 0
            continue
        val = float(comp.signature() @ h) + comp.bias
        sign = 0 if val == 0.0 else (1 if val < 0 else -1)
        comp.sign = sign
        assigned[id(comp)] = sign
    return assigned

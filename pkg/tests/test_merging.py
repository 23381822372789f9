import numpy as np
import pytest

from reluxtract.config import AttackConfig
from reluxtract.merging import (
    Component,
    DEGENERATE,
    INCOMPARABLE,
    INCOMPATIBLE,
    cluster,
    count_deep_merges,
    merge_spaces,
    try_merge_full,
)
from reluxtract.signature import SolutionSpace

DIM = 8


def mask_of(*idx):
    m = np.zeros(DIM, dtype=bool)
    m[list(idx)] = True
    return m


def full_space(row, mask, scale=1.0, point_id=0):
    v = np.zeros(DIM)
    v[mask] = scale * row[mask]
    return SolutionSpace(
        layer=2,
        particular=v,
        kernel=np.zeros((0, DIM)),
        mask=mask.copy(),
        rank=int(mask.sum()),
        residual=0.0,
        point_id=point_id,
    )


def deficient_space(row, mask, kernel_dim, rng, scale=1.0, point_id=0):
    """A solution space containing scale*row with a random kernel inside mask."""
    support = int(mask.sum())
    assert kernel_dim < support
    raw = rng.standard_normal((support, kernel_dim))
    q, _ = np.linalg.qr(raw)
    kernel = np.zeros((kernel_dim, DIM))
    kernel[:, mask] = q[:, :kernel_dim].T
    v = np.zeros(DIM)
    v[mask] = scale * row[mask]
    v += rng.standard_normal(kernel_dim) @ kernel  # any point of the space will do
    return SolutionSpace(
        layer=2,
        particular=v,
        kernel=kernel,
        mask=mask.copy(),
        rank=support - kernel_dim,
        residual=0.0,
        point_id=point_id,
    )


def contains_row(space, row):
    """Distance from the scaled true row to the affine space, relative."""
    m = space.mask
    a = np.column_stack([row[m], -space.kernel[:, m].T])
    sol, *_ = np.linalg.lstsq(a, space.particular[m], rcond=None)
    gap = np.linalg.norm(a @ sol - space.particular[m])
    return gap / max(1.0, np.linalg.norm(space.particular))


@pytest.fixture
def rows():
    return np.random.default_rng(100).standard_normal((3, DIM))


def test_full_merge_proportional(rows):
    row = rows[0]
    sa = full_space(row, mask_of(0, 1, 2, 3, 4), scale=1.0)
    sb = full_space(row, mask_of(3, 4, 5, 6, 7), scale=-2.5)
    merged, reason = try_merge_full(sa, sb, tol=1e-5)
    assert reason == "merged"
    assert merged.mask.all()
    v = merged.particular / merged.particular[0]
    w = row / row[0]
    assert np.allclose(v, w, rtol=1e-9)


def test_full_merge_rejects_cross_neuron(rows):
    sa = full_space(rows[0], mask_of(0, 1, 2, 3, 4))
    sb = full_space(rows[1], mask_of(2, 3, 4, 5, 6))
    merged, reason = merge_spaces(sa, sb, tol=1e-5)
    assert merged is None and reason == INCOMPATIBLE


def test_merge_needs_overlap(rows):
    sa = full_space(rows[0], mask_of(0, 1, 2))
    sb = full_space(rows[0], mask_of(3, 4, 5))
    merged, reason = merge_spaces(sa, sb, tol=1e-5)
    assert merged is None and reason == INCOMPARABLE
    # a single shared coordinate fixes the scale but can never contradict it
    sc = full_space(rows[0], mask_of(2, 6, 7))
    merged, reason = merge_spaces(sa, sc, tol=1e-5)
    assert merged is None and reason == INCOMPARABLE


def test_try_merge_full_requires_empty_kernels(rows):
    rng = np.random.default_rng(0)
    sa = deficient_space(rows[0], mask_of(0, 1, 2, 3), 1, rng)
    sb = full_space(rows[0], mask_of(1, 2, 3, 4))
    with pytest.raises(ValueError):
        try_merge_full(sa, sb, tol=1e-5)


def test_deficient_merge_recovers_row(rows):
    row = rows[0]
    rng = np.random.default_rng(1)
    sa = deficient_space(row, mask_of(0, 1, 2, 3, 4, 5), 2, rng, scale=1.0)
    sb = deficient_space(row, mask_of(1, 2, 3, 4, 5, 6, 7), 1, rng, scale=3.0)
    # 5 shared coordinates, strictly more than the 1 + 2 + 1 unknowns
    merged, reason = merge_spaces(sa, sb, tol=1e-6)
    assert reason == "merged"
    assert merged.mask.all()
    assert merged.kernel_dim < sa.kernel_dim + sb.kernel_dim
    assert contains_row(merged, row) < 1e-8
    assert merged.rank + merged.kernel_dim == DIM


def test_deficient_merge_rejects_cross_neuron(rows):
    rng = np.random.default_rng(2)
    rejected = 0
    for trial in range(20):
        sa = deficient_space(rows[0], mask_of(0, 1, 2, 3, 4, 5, 6, 7), 2, rng)
        sb = deficient_space(rows[1], mask_of(0, 1, 2, 3, 4, 5, 6, 7), 2, rng)
        merged, reason = merge_spaces(sa, sb, tol=1e-6)
        if merged is None:
            rejected += 1
    assert rejected == 20  # 8 equations vs 5 unknowns: generically inconsistent


def test_merge_condition_is_strict(rows):
    rng = np.random.default_rng(3)
    sa = deficient_space(rows[0], mask_of(0, 1, 2, 3), 1, rng)
    sb = full_space(rows[0], mask_of(2, 3, 4, 5))
    # 2 shared = 1 + 1 + 0 + 1 exactly, not strictly more
    merged, reason = merge_spaces(sa, sb, tol=1e-6)
    assert merged is None and reason == INCOMPARABLE
    sc = full_space(rows[0], mask_of(1, 2, 3, 4, 5))
    merged, reason = merge_spaces(sa, sc, tol=1e-6)
    assert reason == "merged"
    assert contains_row(merged, rows[0]) < 1e-8


def test_merge_rejects_degenerate_scale(rows):
    sa = full_space(rows[0], mask_of(0, 1, 2, 3, 4))
    zero = rows[2].copy()
    zero[:] = 0.0
    sb = full_space(zero, mask_of(2, 3, 4, 5, 6))
    merged, reason = merge_spaces(sa, sb, tol=1e-5)
    assert merged is None and reason == DEGENERATE


def test_cluster_groups_by_neuron(rows):
    config = AttackConfig()
    spaces = []
    pid = 0
    rng = np.random.default_rng(4)
    for row in rows:
        for _ in range(4):
            idx = rng.permutation(DIM)[:6]
            spaces.append(full_space(row, mask_of(*idx), scale=rng.uniform(0.5, 2), point_id=pid))
            pid += 1
    rng.shuffle(spaces)
    components = cluster(spaces, config)
    assert sum(c.size for c in components) == len(spaces)
    big = [c for c in components if c.size >= 3]
    assert len(big) == 3
    for comp in big:
        sig = comp.signature()[comp.mask]
        best = min(
            np.linalg.norm(sig - s * row[comp.mask] / np.abs(row[comp.mask]).max())
            for row in rows
            for s in (1.0, -1.0)
        )
        assert best < 1e-6


def test_cluster_deterministic(rows):
    config = AttackConfig()
    rng = np.random.default_rng(5)
    spaces = [
        full_space(rows[i % 3], mask_of(*rng.permutation(DIM)[:5]), point_id=i)
        for i in range(9)
    ]
    c1 = cluster(list(spaces), config)
    c2 = cluster(list(spaces), config)
    assert [c.member_ids for c in c1] == [c.member_ids for c in c2]


def test_count_deep_merges_and_tau(rows):
    config = AttackConfig()
    comps = cluster(
        [full_space(rows[0], mask_of(0, 1, 2, 3, 4, 5), point_id=i) for i in range(4)],
        config,
    )
    assert len(comps) == 1
    deep = [full_space(rows[0], mask_of(2, 3, 4, 5, 6, 7), scale=1.7, point_id=99)]
    count_deep_merges(comps, deep, config)
    assert comps[0].deep_merges == 1
    assert comps[0].tau == pytest.approx(0.25)
    # a deep point from an unrelated neuron is not attributed
    count_deep_merges(comps, [full_space(rows[1], mask_of(0, 1, 2, 3, 4, 5))], config)
    assert comps[0].deep_merges == 1


def test_component_accessors(rows):
    comp = Component(layer=2, space=full_space(rows[0], mask_of(0, 1, 2)), member_ids=[5])
    assert comp.size == 1
    assert comp.unknown_entries == DIM - 3
    sig = comp.signature()
    assert np.abs(sig).max() == pytest.approx(1.0)

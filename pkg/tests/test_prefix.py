import numpy as np
import pytest

from reluxtract.network import generate_random, hidden_batch, local_affine, partial_forward
from reluxtract.prefix import ExtractedPrefix


def test_layer1_prefix_is_identity(toy_net):
    prefix = ExtractedPrefix.from_truth(toy_net, 1)
    assert prefix.is_input
    assert prefix.hidden_dim == 2
    x = np.array([0.3, -0.7])
    assert np.array_equal(prefix.hidden(x), x)
    assert np.array_equal(prefix.gamma(x), np.eye(2))
    assert prefix.active_mask(x).all()
    assert prefix.min_abs_pre(x) == np.inf


def test_prefix_hidden_matches_network(toy_net):
    prefix = ExtractedPrefix.from_truth(toy_net, 3)
    rng = np.random.default_rng(0)
    for _ in range(50):
        z = rng.uniform(-5, 5, 2)
        expected = np.maximum(partial_forward(toy_net, z, 2), 0.0)
        assert np.allclose(prefix.hidden(z), expected, rtol=1e-12)
        assert np.allclose(prefix.pre_final(z), partial_forward(toy_net, z, 2), rtol=1e-12)


def test_prefix_hidden_batch_agrees():
    model = generate_random([7, 6, 6, 6, 1], seed=4)
    prefix = ExtractedPrefix.from_truth(model, 3)
    zs = np.random.default_rng(1).uniform(-1, 1, (30, 7))
    batch = prefix.hidden_batch(zs)
    assert batch.shape == (30, 6)
    for i, z in enumerate(zs):
        assert np.allclose(batch[i], prefix.hidden(z), rtol=1e-12)
    assert np.allclose(batch, hidden_batch(model, zs, 2), rtol=1e-12)


def test_prefix_masks(toy_net):
    prefix = ExtractedPrefix.from_truth(toy_net, 2)
    assert prefix.active_mask([2.0, 2.0]).tolist() == [True, False, False]
    masks = prefix.active_mask_batch(np.array([[2.0, 2.0], [8.0, 1.0]]))
    assert masks[0].tolist() == [True, False, False]
    assert masks[1].tolist() == [True, True, True]


def test_gamma_is_jacobian_of_hidden():
    model = generate_random([5, 6, 6, 1], seed=8)
    prefix = ExtractedPrefix.from_truth(model, 3)
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 30:
        z = rng.uniform(-1, 1, 5)
        if prefix.min_abs_pre(z) < 1e-3:
            continue  # stay inside one affine region
        g = prefix.gamma(z)
        h = 1e-7
        for j in range(5):
            e = np.zeros(5)
            e[j] = h
            fd = (prefix.hidden(z + e) - prefix.hidden(z - e)) / (2 * h)
            assert np.allclose(g[:, j], fd, rtol=1e-5, atol=1e-6)
        checked += 1


def test_gamma_vs_local_affine():
    # gamma() is the pre-activation map of the last prefix layer with its own
    # activity mask applied on top
    model = generate_random([6, 5, 5, 5, 1], seed=12)
    prefix = ExtractedPrefix.from_truth(model, 4)
    rng = np.random.default_rng(9)
    for _ in range(100):
        z = rng.uniform(-1, 1, 6)
        amap = local_affine(model, z, 3)
        mask = partial_forward(model, z, 3) > 0.0
        assert np.allclose(prefix.grad_pre_final(z), amap.gamma_matrix, rtol=1e-12)
        assert np.allclose(prefix.gamma(z), amap.gamma_matrix * mask[:, None], rtol=1e-12)


def test_pattern_lists_every_prefix_layer(toy_net):
    prefix = ExtractedPrefix.from_truth(toy_net, 3)
    pat = prefix.pattern([2.0, 2.0])
    assert len(pat) == 2
    assert pat[0].tolist() == [True, False, False]
    assert pat[1].tolist() == [True, False]


def test_min_abs_pre(toy_net):
    prefix = ExtractedPrefix.from_truth(toy_net, 2)
    assert prefix.min_abs_pre([2.0, 2.0]) == 0.0
    assert prefix.min_abs_pre([0.0, 0.0]) == pytest.approx(1.0)


def test_from_truth_range(toy_net):
    with pytest.raises(ValueError):
        ExtractedPrefix.from_truth(toy_net, 0)
    with pytest.raises(ValueError):
        ExtractedPrefix.from_truth(toy_net, 5)

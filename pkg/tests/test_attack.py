import numpy as np
import pytest

from reluxtract.attack import AttackError, attack_last_layer, attack_layer
from reluxtract.completion import RECOVERED
from reluxtract.config import AttackConfig
from reluxtract.network import generate_random
from reluxtract.oracle import Oracle
from reluxtract.prefix import ExtractedPrefix


def small_config(**kw):
    base = dict(
        domain_low=-2.0,
        domain_high=2.0,
        critical_points_count=150,
        critical_points_count_layer1=80,
        filter_probes=10,
        # components are small at this test scale (~10 points per neuron), so
        # the deep-point size cutoff needs a larger fraction than at full scale
        filter_size_fraction=0.3,
    )
    base.update(kw)
    return AttackConfig(**base)


def aligned_errors(recovered, true_rows):
    """Max relative row error over recovered neurons, on recovered entries."""
    errs = []
    for j in range(true_rows.shape[0]):
        if recovered.statuses[j] != RECOVERED:
            continue
        mask = recovered.masks[j]
        scale = np.abs(true_rows[j]).max()
        errs.append(np.abs(recovered.rows[j][mask] - true_rows[j][mask]).max() / scale)
    return errs


def test_attack_layer1_recovers_all_neurons():
    model = generate_random([4, 6, 6, 1], seed=101)
    oracle = Oracle(model)
    config = small_config()
    prefix = ExtractedPrefix.from_truth(model, 1)
    result = attack_layer(oracle, prefix, config, layer_width=6, truth=model)
    assert result.recovered.statuses.count(RECOVERED) == 6
    errs = aligned_errors(result.recovered, model.weights[0])
    assert max(errs) < 1e-6
    biases = result.recovered.biases
    np.testing.assert_allclose(biases, model.biases[0], atol=1e-6)
    assert result.queries == result.queries_after - result.queries_before
    assert result.queries > 0


def test_attack_layer2_recovers_present_neurons():
    model = generate_random([4, 6, 6, 1], seed=109)
    oracle = Oracle(model)
    config = small_config(critical_points_count=300)
    prefix = ExtractedPrefix.from_truth(model, 2)
    result = attack_layer(oracle, prefix, config, layer_width=6, truth=model)
    recovered = result.recovered.statuses.count(RECOVERED)
    assert recovered >= 4
    errs = aligned_errors(result.recovered, model.weights[1])
    assert errs and max(errs) < 1e-5
    # every kept component mapped to a distinct true neuron
    slots = [p for p in result.recovered.permutation if p is not None]
    assert len(slots) == len(set(slots))


def test_attack_last_layer_zero_queries():
    model = generate_random([4, 6, 6, 1], seed=101)
    oracle = Oracle(model)
    config = small_config()
    prefix1 = ExtractedPrefix.from_truth(model, 1)
    result = attack_layer(oracle, prefix1, config, layer_width=6, truth=model)
    final_prefix = ExtractedPrefix.from_truth(model, model.depth + 1)
    before = oracle.total_queries
    w, b = attack_last_layer(result.stored_pairs, final_prefix)
    assert oracle.total_queries == before
    np.testing.assert_allclose(w, model.weights[-1], atol=1e-8)
    np.testing.assert_allclose(b, model.biases[-1], atol=1e-8)


def test_attack_requires_truth_for_ground_truth_signs():
    model = generate_random([4, 6, 6, 1], seed=101)
    oracle = Oracle(model)
    prefix = ExtractedPrefix.from_truth(model, 1)
    with pytest.raises(AttackError):
        attack_layer(oracle, prefix, small_config(), layer_width=6)


def test_attack_phase_counters_cover_all_queries():
    model = generate_random([3, 4, 4, 1], seed=107)
    oracle = Oracle(model)
    config = small_config(critical_points_count_layer1=40)
    prefix = ExtractedPrefix.from_truth(model, 1)
    result = attack_layer(oracle, prefix, config, layer_width=4, truth=model)
    assert sum(oracle.phase_counts().values()) == oracle.total_queries
    assert result.queries == oracle.total_queries

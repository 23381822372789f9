import numpy as np
import pytest

from reluxtract.evaluation import (
    ALWAYS_OFF,
    CLASSES,
    QUERY_INTENSIVE,
    UNREACHABLE_ACTIVE,
    UNREACHABLE_INACTIVE,
    ExtractionReport,
    TaxonomyEntry,
    activation_tests,
    classify_unrecovered,
    correlation_report,
    coverage,
    epsilon_delta,
    missing_weights_of,
    queries_log2,
    recovery_rate,
    write_heatmap,
    write_metrics,
)
from reluxtract.network import NetworkModel, forward, generate_random


def always_on_net():
    """Every hidden neuron active everywhere on [0, 1]^2."""
    w1 = np.eye(2)
    b1 = np.array([10.0, 10.0])
    w2 = np.eye(2)
    b2 = np.array([10.0, 10.0])
    w3 = np.array([[1.0, 2.0]])
    b3 = np.array([0.0])
    return NetworkModel((w1, w2, w3), (b1, b2, b3))


# --- activation tests ---


def test_activation_fractions_always_on():
    frac = activation_tests(always_on_net(), samples=500, seed=1)
    for layer in frac.neuron:
        np.testing.assert_array_equal(layer, 1.0)
    for pp in frac.plus_plus:
        np.testing.assert_array_equal(pp, 1.0)
    for pm in frac.plus_minus:
        np.testing.assert_array_equal(pm, 0.0)


def test_activation_fractions_match_independent_count():
    # independent per-sample oracle over the identical sample stream
    model = generate_random([3, 4, 4, 1], seed=6)
    samples, seed = 2000, 9
    frac = activation_tests(model, samples=samples, seed=seed, low=-2.0, high=2.0)
    xs = np.random.default_rng(seed).uniform(-2.0, 2.0, size=(samples, 3))
    counts = [np.zeros(4), np.zeros(4)]
    pp = [np.zeros((4, 3)), np.zeros((4, 4))]
    pm = [np.zeros((4, 3)), np.zeros((4, 4))]
    for x in xs:
        _, pattern = forward(model, x)
        on = [np.asarray(layer) for layer in pattern.layers]
        prev = np.ones(3, dtype=bool)
        for i in range(2):
            counts[i] += on[i]
            pp[i] += np.outer(on[i], prev)
            pm[i] += np.outer(~on[i], prev)
            prev = on[i]
    for i in range(2):
        np.testing.assert_allclose(frac.neuron[i], counts[i] / samples, atol=1e-12)
        np.testing.assert_allclose(frac.plus_plus[i], pp[i] / samples, atol=1e-12)
        np.testing.assert_allclose(frac.plus_minus[i], pm[i] / samples, atol=1e-12)


def test_activation_fractions_deterministic():
    model = generate_random([2, 3, 3, 1], seed=2)
    a = activation_tests(model, samples=1000, seed=5)
    b = activation_tests(model, samples=1000, seed=5)
    for x, y in zip(a.neuron, b.neuron):
        np.testing.assert_array_equal(x, y)


# --- taxonomy ---


def entry(inp, pp, pm):
    return TaxonomyEntry(layer=7, neuron=0, prev=0, input_activation=inp, plus_plus=pp, plus_minus=pm)


def test_taxonomy_condition_table():
    assert entry(0.0, 0.0, 0.3).klass == ALWAYS_OFF
    assert entry(0.0, 0.0, 0.0).klass == ALWAYS_OFF
    assert entry(0.11, 0.0, 0.40).klass == UNREACHABLE_INACTIVE
    assert entry(0.83, 0.11, 0.0).klass == UNREACHABLE_ACTIVE
    assert entry(0.11, 0.11, 0.48).klass == QUERY_INTENSIVE


def test_taxonomy_entry_rejects_wrong_class():
    with pytest.raises(ValueError):
        TaxonomyEntry(
            layer=1, neuron=0, prev=0,
            input_activation=0.5, plus_plus=0.5, plus_minus=0.5,
            klass=ALWAYS_OFF,
        )


def test_taxonomy_partitions_missing_set():
    rng = np.random.default_rng(0)
    for _ in range(200):
        inp, pp, pm = rng.choice([0.0, 0.1, 0.5], size=3)
        e = entry(float(inp), float(pp), float(pm))
        assert e.klass in CLASSES
        # exactly one class matches: reconstructing with any other class fails
        for other in CLASSES:
            if other == e.klass:
                continue
            with pytest.raises(ValueError):
                entry_kw = dict(
                    layer=1, neuron=0, prev=0,
                    input_activation=float(inp), plus_plus=float(pp),
                    plus_minus=float(pm), klass=other,
                )
                TaxonomyEntry(**entry_kw)


def test_classify_unrecovered_uses_measured_fractions():
    model = generate_random([2, 4, 4, 1], seed=13)
    frac = activation_tests(model, samples=3000, seed=1, low=-2.0, high=2.0)
    missing = [(2, 1, 0), (2, 3, 2), (1, 0, 1)]
    entries = classify_unrecovered(missing, frac)
    assert len(entries) == 3
    for e, (layer, j, k) in zip(entries, missing):
        assert (e.layer, e.neuron, e.prev) == (layer, j, k)
        assert e.klass in CLASSES
        if layer == 1:
            assert e.input_activation == 1.0


# --- coverage ---


def test_coverage_nothing_missing():
    model = generate_random([2, 3, 3, 1], seed=3)
    assert coverage(model, [], [], samples=1000, seed=1) == 1.0


def test_coverage_single_weight_matches_plus_plus():
    model = generate_random([2, 4, 4, 1], seed=17)
    frac = activation_tests(model, samples=50000, seed=4, low=-2.0, high=2.0)
    j, k = 1, 2
    p = float(frac.plus_plus[1][j, k])
    assert 0.02 < p < 0.98, "test needs a weight with nontrivial activation"
    n = 50000
    cov = coverage(model, [(2, j, k)], [], samples=n, seed=8, low=-2.0, high=2.0)
    sigma = np.sqrt(p * (1 - p) / n)
    assert abs((1.0 - cov) - p) < 3 * sigma + 3 * np.sqrt(p * (1 - p) / 50000)


def test_model_coverage_at_most_layer_coverage():
    model = generate_random([2, 4, 4, 1], seed=19)
    missing_w = [(1, 0, 1), (2, 2, 3)]
    missing_c = [(2, 1)]
    kw = dict(samples=20000, seed=12, low=-2.0, high=2.0)
    whole = coverage(model, missing_w, missing_c, scope="model", **kw)
    for layer in (1, 2):
        assert whole <= coverage(model, missing_w, missing_c, scope=layer, **kw) + 1e-12


# --- epsilon-delta ---


def test_epsilon_delta_identical_models():
    model = generate_random([2, 3, 3, 1], seed=23)
    delta, kept, excluded = epsilon_delta(model, model, samples=5000, seed=3, low=-2.0, high=2.0)
    assert delta == 0.0
    assert kept + excluded == 5000


def test_epsilon_delta_scale_invariance(toy_net):
    # rescaling a hidden layer and absorbing the inverse into the next layer
    # leaves the function unchanged, so delta stays 0 even at tiny epsilon
    scales = np.array([2.0, 0.5])
    scaled = NetworkModel(
        (
            toy_net.weights[0],
            toy_net.weights[1] * scales[:, None],
            toy_net.weights[2] / scales[None, :],
        ),
        (toy_net.biases[0], toy_net.biases[1] * scales, toy_net.biases[2]),
    )
    delta, kept, _ = epsilon_delta(
        toy_net, scaled, samples=20000, epsilon=1e-6, seed=6, low=-6.0, high=6.0
    )
    assert delta == 0.0
    assert kept > 0


def test_epsilon_delta_detects_disagreement():
    model = generate_random([2, 3, 3, 1], seed=29)
    w = [x.copy() for x in model.weights]
    w[2] = w[2] * 1.5
    other = NetworkModel(tuple(w), model.biases)
    delta, _, _ = epsilon_delta(model, other, samples=5000, epsilon=0.05, seed=7, low=-2.0, high=2.0)
    assert delta > 0.5


def test_epsilon_delta_skips_unrecovered_space():
    model = generate_random([2, 4, 4, 1], seed=31)
    # mark one component missing; samples activating it are excluded entirely
    frac = activation_tests(model, samples=20000, seed=2, low=-2.0, high=2.0)
    j = int(np.argmax(frac.neuron[1]))
    delta, kept, excluded = epsilon_delta(
        model, model, missing_components=[(2, j)], samples=20000, seed=2, low=-2.0, high=2.0
    )
    assert delta == 0.0
    expected_kept = round((1.0 - float(frac.neuron[1][j])) * 20000)
    assert abs(kept + excluded - expected_kept) <= 400  # different sample stream


# --- correlation ---


def test_correlation_proportional_shares():
    model = generate_random([2, 4, 4, 1], seed=37)
    frac = activation_tests(model, samples=20000, seed=3, low=-2.0, high=2.0)
    closeness = np.minimum(frac.neuron[0], 1.0 - frac.neuron[0])
    # fabricate critical points whose per-neuron counts are proportional
    cps = []
    for k, c in enumerate(np.round(1000 * closeness / closeness.sum()).astype(int)):
        cps.extend([(1, k)] * max(int(c), 1))
    report = correlation_report(model, cps, fractions=frac)
    assert report[1] == pytest.approx(1.0, abs=0.05)
    assert report[2] is None  # no layer-2 points at all


def test_correlation_too_few_neurons():
    model = generate_random([2, 4, 4, 1], seed=37)
    frac = activation_tests(model, samples=1000, seed=3, low=-2.0, high=2.0)
    report = correlation_report(model, [(1, 0), (1, 1)], fractions=frac)
    assert report[1] is None


# --- report plumbing ---


def test_report_invariants():
    with pytest.raises(ValueError):
        ExtractionReport(per_layer={1: {"recovery_rate": 1.2}}, model_coverage=1.0, epsilon=0.05, delta=0.0)
    with pytest.raises(ValueError):
        ExtractionReport(per_layer={1: {"queries_log2": -1.0}}, model_coverage=1.0, epsilon=0.05, delta=0.0)
    with pytest.raises(ValueError):
        ExtractionReport(per_layer={}, model_coverage=1.5, epsilon=0.05, delta=0.0)


def test_report_files_round_trip(tmp_path):
    report = ExtractionReport(
        per_layer={1: {"recovery_rate": 1.0, "coverage": 0.97, "queries_log2": 20.5, "wall_time": 3.0}},
        model_coverage=0.95,
        epsilon=0.05,
        delta=1e-6,
        taxonomy_counts={ALWAYS_OFF: 3},
        config={"seed_lines": 1},
    )
    path = tmp_path / "metrics.tsv"
    write_metrics(path, report)
    lines = dict(
        line.split("\t") for line in path.read_text().strip().split("\n")
    )
    assert float(lines["layer1.coverage"]) == 0.97
    assert float(lines["model.coverage"]) == 0.95
    assert int(lines[f"taxonomy.{ALWAYS_OFF}"]) == 3
    assert lines["config.seed_lines"] == "1"
    assert "model coverage" in report.summary()


def test_heatmap_file(tmp_path):
    model = generate_random([2, 3, 3, 1], seed=41)
    frac = activation_tests(model, samples=500, seed=1, low=-2.0, high=2.0)
    path = tmp_path / "heat.tsv"
    write_heatmap(path, frac)
    rows = path.read_text().strip().split("\n")
    assert len(rows) == 2
    vals = [float(v) for v in rows[0].split("\t")[1:]]
    np.testing.assert_allclose(vals, frac.neuron[0], atol=1e-6)


def test_recovery_helpers():
    masks = np.array([[True, True, False], [True, True, True]])
    assert recovery_rate(masks) == pytest.approx(5 / 6)
    assert missing_weights_of(masks, layer=4) == [(4, 0, 2)]
    assert queries_log2(1024) == 10.0
    assert queries_log2(0) == 0.0

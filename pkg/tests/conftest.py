import numpy as np
import pytest

from reluxtract.network import NetworkModel


def example_network():
    """The 2-3-2-1 walkthrough network used across tests."""
    w1 = np.array([[1.0, 1.0], [1.0, -1.0], [0.5, 2.0]])
    b1 = np.array([1.0, -2.0, -5.0])
    w2 = np.array([[2.0, -4.0, -1.0], [-3.0, 4.0, 5.0]])
    b2 = np.array([-2.0, -3.0])
    w3 = np.array([[1.0, -1.0]])
    b3 = np.array([3.0])
    return NetworkModel((w1, w2, w3), (b1, b2, b3))


@pytest.fixture
def toy_net():
    return example_network()


def true_critical_point(model, layer, neuron, rng, domain=(-6.0, 6.0), tries=200):
    """Ground-truth helper: a point where one neuron's pre-activation is ~0.

    Searches random segments for a sign change of the neuron's pre-activation
    and bisects; returns None when the neuron never flips in the domain.
    Verification-side tool only, never part of the attack path.
    """
    from reluxtract.network import partial_forward

    d0 = model.input_dim
    low, high = domain

    def pre(x):
        return partial_forward(model, x, layer)[neuron]

    for _ in range(tries):
        a = rng.uniform(low, high, d0)
        b = rng.uniform(low, high, d0)
        pa, pb = pre(a), pre(b)
        if pa == 0.0 or pb == 0.0 or np.sign(pa) == np.sign(pb):
            continue
        for _ in range(200):
            m = 0.5 * (a + b)
            pm = pre(m)
            if pm == 0.0:
                break
            if np.sign(pm) == np.sign(pa):
                a, pa = m, pm
            else:
                b, pb = m, pm
        x = 0.5 * (a + b)
        # demand the point is critical for exactly this neuron
        mins = []
        for i in range(1, model.depth + 1):
            p = partial_forward(model, x, i)
            for k in range(p.shape[0]):
                if (i, k) != (layer, neuron):
                    mins.append(abs(p[k]))
        if min(mins) > 1e-6 and abs(pre(x)) < 1e-10 * max(1.0, np.abs(x).max()):
            return x
    return None


def classify_critical_point(model, x):
    """(layer, neuron) with the smallest |pre-activation| at x; truth-side helper."""
    from reluxtract.network import partial_forward

    best = None
    for i in range(1, model.depth + 1):
        p = partial_forward(model, x, i)
        k = int(np.argmin(np.abs(p)))
        if best is None or abs(p[k]) < best[0]:
            best = (abs(p[k]), i, k)
    return best[1], best[2]

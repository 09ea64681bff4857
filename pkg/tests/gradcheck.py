"""Central finite-difference oracle shared by the unit and acceptance tests."""
import numpy as np

from dectrain.decision import DecisionNet, N_FEATURES
from dectrain.learner import EnsembleLearner

H = 1e-5
FLOOR = 1e-6


def rel_error(analytic, numeric):
    """Elementwise ``|a - n| / max(|a|, |n|, FLOOR)``."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)


def numeric_grad(f, arr, h=H):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def learner_case(rng):
    d = int(rng.integers(2, 6))
    model = EnsembleLearner(
        n_members=int(rng.integers(2, 4)),
        hidden=int(rng.integers(3, 7)),
        mean_gain=float(rng.choice([1.0, 3.0])),
        random_state=int(rng.integers(1 << 30)),
    ).initialize(d)
    n = int(rng.integers(1, 5))
    X = rng.normal(size=(n, d))
    y = rng.normal(size=n) + 1.0
    analytic = model.gradient(X, y)

    def f():
        return float(model.loss(X, y).sum())

    return max(float(rel_error(analytic[k], numeric_grad(f, model.params_[k])).max()) for k in analytic)


def decision_case(rng):
    net = DecisionNet(
        hidden=(int(rng.integers(3, 7)), int(rng.integers(3, 7))),
        corr_weight=float(rng.choice([0.0, 1.0])),
        random_state=int(rng.integers(1 << 30)),
    ).initialize(rng.normal(size=N_FEATURES), rng.uniform(0.5, 2.0, N_FEATURES), 0.01, 0.02)
    n = int(rng.integers(1, 7))
    Psi = rng.normal(size=(n, N_FEATURES))
    u = rng.normal(0.01, 0.02, size=n)
    analytic, _ = net.gradient(Psi, u)
    params = net._param_dict()

    def f():
        return net.gradient(Psi, u)[1]

    return max(float(rel_error(analytic[k], numeric_grad(f, params[k])).max()) for k in analytic)

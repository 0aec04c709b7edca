import numpy as np
import pytest

from natgrad.models import (build_model, loss_value, mlp_spec,
                            mini_convnet_spec, mini_resnet_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_mlp(widths=(2, 16, 3), seed=0, activation="tanh"):
    return build_model(mlp_spec(widths, activation=activation), seed)


def loss_of_flat(graph, params, x, y, kind, w):
    ps = params.unflatten(w)
    z = graph.evaluate({**ps.feeds(), "x": x})
    return loss_value(z, y, kind)


def fd_gradient(graph, params, x, y, kind, h=1e-5):
    """Central-difference loss gradient (the independent oracle)."""
    w0 = params.flatten()
    out = np.empty_like(w0)
    for i in range(w0.size):
        wp, wm = w0.copy(), w0.copy()
        wp[i] += h
        wm[i] -= h
        out[i] = (loss_of_flat(graph, params, x, y, kind, wp)
                  - loss_of_flat(graph, params, x, y, kind, wm)) / (2 * h)
    return out


def fd_jacobian(graph, params, x, h=1e-5):
    """Column-by-column finite-difference network Jacobian d z / d w."""
    w0 = params.flatten()
    cols = []
    for i in range(w0.size):
        wp, wm = w0.copy(), w0.copy()
        wp[i] += h
        wm[i] -= h
        zp = graph.evaluate({**params.unflatten(wp).feeds(), "x": x})
        zm = graph.evaluate({**params.unflatten(wm).feeds(), "x": x})
        cols.append(((zp - zm) / (2 * h)).ravel())
    return np.stack(cols, axis=1)


SMALL_ZOO = {
    "mlp": lambda: make_mlp((2, 4, 3), seed=1),
    "mlp_deep": lambda: make_mlp((2, 3, 3, 2), seed=2),
    "convnet": lambda: build_model(mini_convnet_spec(in_shape=(1, 6, 6), classes=3), 3),
    "resnet": lambda: build_model(mini_resnet_spec(in_shape=(1, 6, 6), classes=2,
                                                   channels=(2, 3)), 4),
}


def zoo_batch(name, batch=4, seed=0):
    graph, params = SMALL_ZOO[name]()
    rng = np.random.default_rng(seed)
    if name in ("convnet", "resnet"):
        x = rng.standard_normal((batch, 1, 6, 6))
        classes = 3 if name == "convnet" else 2
    else:
        x = rng.standard_normal((batch, 2))
        classes = 3 if name == "mlp" else 2
    y = rng.integers(classes, size=batch)
    return graph, params, x, y

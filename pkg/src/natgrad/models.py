"""Target-network zoo: layers, parameter taxonomy, init and losses."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, GraphBuilder, ShapeError, _check_finite


class ParamKind(enum.Enum):
    ConvKernel = "conv_kernel"
    ConvBias = "conv_bias"
    FcWeight = "fc_weight"
    FcBias = "fc_bias"
    BnGamma = "bn_gamma"
    BnBeta = "bn_beta"


class LossKind(enum.Enum):
    CrossEntropy = "cross_entropy"
    MeanSquaredError = "mse"


@dataclass
class ParamSet:
    """Ordered, kind-tagged parameter tensors with flat-vector views."""

    entries: list  # (name, ParamKind, np.ndarray)

    @property
    def total_dim(self):
        return sum(a.size for _, _, a in self.entries)

    def flatten(self):
        return np.concatenate([a.ravel() for _, _, a in self.entries])

    def unflatten(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.total_dim,):
            raise ShapeError("flat vector length mismatch")
        out, off = [], 0
        for name, kind, a in self.entries:
            out.append((name, kind, vec[off:off + a.size].reshape(a.shape).copy()))
            off += a.size
        return ParamSet(out)

    def replace_flat(self, vec):
        return self.unflatten(vec)

    def feeds(self):
        return {name: a for name, _, a in self.entries}

    def kind_indices(self):
        """Flat coordinate positions of every ParamKind present."""
        out, off = {}, 0
        for _, kind, a in self.entries:
            out.setdefault(kind, []).append(np.arange(off, off + a.size))
            off += a.size
        return {k: np.concatenate(v) for k, v in out.items()}

    def copy(self):
        return ParamSet([(n, k, a.copy()) for n, k, a in self.entries])


@dataclass
class ModelSpec:
    """Layer-list description of a feed-forward target network.

    layers is a list of dicts, e.g.::

        {"type": "dense", "units": 16, "activation": "relu"}
        {"type": "conv", "channels": 8, "kernel": 3, "stride": 2,
         "pad": 1, "activation": "relu", "batchnorm": True}
        {"type": "resblock", "channels": 16, "stride": 1}
        {"type": "flatten"}
    """

    input_shape: tuple
    layers: list = field(default_factory=list)

    def to_dict(self):
        return {"input_shape": list(self.input_shape), "layers": self.layers}

    @staticmethod
    def from_dict(d):
        return ModelSpec(tuple(d["input_shape"]), list(d["layers"]))


def _he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _activation(g, h, name):
    if name in (None, "none", "linear"):
        return h
    if name not in ("relu", "tanh", "sigmoid", "softplus"):
        raise ShapeError(f"unknown activation: {name}")
    return g.apply(name, [h])


class _Builder:
    """Accumulates parameters while tracing the forward graph."""

    def __init__(self, rng):
        self.rng = rng
        self.g = GraphBuilder()
        self.entries = []
        self.n = 0

    def add_param(self, base, kind, value):
        name = f"p{self.n}/{base}"
        self.n += 1
        self.entries.append((name, kind, np.asarray(value, dtype=np.float64)))
        return self.g.param(name)

    def dense(self, h, in_dim, units, activation=None, batchnorm=False):
        w = self.add_param("W", ParamKind.FcWeight,
                           _he_uniform(self.rng, (in_dim, units), in_dim))
        h = h @ w
        if batchnorm:
            gamma = self.add_param("gamma", ParamKind.BnGamma, np.ones(units))
            beta = self.add_param("beta", ParamKind.BnBeta, np.zeros(units))
            h = self.g.apply("batchnorm", [h, gamma, beta])
        else:
            b = self.add_param("b", ParamKind.FcBias, np.zeros(units))
            h = h + b
        return _activation(self.g, h, activation), units

    def conv(self, h, in_ch, channels, kernel, stride=1, pad=0,
             activation=None, batchnorm=False, bias=True):
        k = self.add_param("K", ParamKind.ConvKernel,
                           _he_uniform(self.rng, (channels, in_ch, kernel, kernel),
                                       in_ch * kernel * kernel))
        h = self.g.apply("conv2d", [h, k], stride=stride, pad=pad)
        if batchnorm:
            gamma = self.add_param("gamma", ParamKind.BnGamma, np.ones(channels))
            beta = self.add_param("beta", ParamKind.BnBeta, np.zeros(channels))
            h = self.g.apply("batchnorm", [h, gamma, beta])
        elif bias:
            b = self.add_param("b", ParamKind.ConvBias, np.zeros(channels))
            h = h + self.g.apply("reshape", [b], shape=(1, channels, 1, 1))
        return _activation(self.g, h, activation), channels


def _conv_out(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


def build_model(spec: ModelSpec, seed: int):
    """Trace a spec into (Graph, ParamSet) with deterministic init."""
    rng = np.random.default_rng(seed)
    b = _Builder(rng)
    x = b.g.input("x")
    h = x
    shape = tuple(spec.input_shape)
    for layer in spec.layers:
        t = layer["type"]
        if t == "dense":
            if len(shape) != 1:
                raise ShapeError("dense layer needs flat input; add a flatten layer")
            h, units = b.dense(h, shape[0], layer["units"],
                               layer.get("activation"), layer.get("batchnorm", False))
            shape = (units,)
        elif t == "conv":
            if len(shape) != 3:
                raise ShapeError("conv layer needs CHW input")
            c, hh, ww = shape
            k = layer["kernel"]
            s = layer.get("stride", 1)
            p = layer.get("pad", 0)
            h, ch = b.conv(h, c, layer["channels"], k, s, p,
                           layer.get("activation"), layer.get("batchnorm", False))
            shape = (ch, _conv_out(hh, k, s, p), _conv_out(ww, k, s, p))
        elif t == "resblock":
            if len(shape) != 3:
                raise ShapeError("resblock needs CHW input")
            c, hh, ww = shape
            ch = layer["channels"]
            s = layer.get("stride", 1)
            skip = h
            h, _ = b.conv(h, c, ch, 3, s, 1, activation=None, batchnorm=True)
            h = b.g.apply("relu", [h])
            h, _ = b.conv(h, ch, ch, 3, 1, 1, activation=None, batchnorm=True)
            if s != 1 or ch != c:
                skip, _ = b.conv(skip, c, ch, 1, s, 0, bias=False)
            h = b.g.apply("relu", [h + skip])
            shape = (ch, _conv_out(hh, 3, s, 1), _conv_out(ww, 3, s, 1))
        elif t == "flatten":
            n = int(np.prod(shape))
            h = b.g.apply("reshape", [h], shape=(-1, n))
            shape = (n,)
        else:
            raise ShapeError(f"unknown layer type: {t}")
    graph = b.g.finalize(h)
    return graph, ParamSet(b.entries)


# -- model zoo --------------------------------------------------------------

def mlp_spec(widths, activation="tanh", batchnorm=False):
    """Plain MLP; widths = (in, hidden..., out)."""
    layers = []
    for i, u in enumerate(widths[1:]):
        last = i == len(widths) - 2
        layers.append({"type": "dense", "units": int(u),
                       "activation": None if last else activation,
                       "batchnorm": batchnorm and not last})
    return ModelSpec((int(widths[0]),), layers)


def mini_convnet_spec(in_shape=(3, 8, 8), classes=10):
    """2 conv + 2 fc, a desk-scale cut of the classic small CIFAR convnet."""
    c, h, w = in_shape
    layers = [
        {"type": "conv", "channels": 8, "kernel": 3, "stride": 2, "pad": 1,
         "activation": "relu"},
        {"type": "conv", "channels": 16, "kernel": 3, "stride": 2, "pad": 1,
         "activation": "relu"},
        {"type": "flatten"},
        {"type": "dense", "units": 32, "activation": "relu"},
        {"type": "dense", "units": int(classes), "activation": None},
    ]
    return ModelSpec(tuple(in_shape), layers)


def mini_resnet_spec(in_shape=(3, 8, 8), classes=10, channels=(4, 8)):
    """Tiny residual net: stem conv, one resblock per stage, linear head."""
    layers = [{"type": "conv", "channels": int(channels[0]), "kernel": 3,
               "stride": 1, "pad": 1, "activation": "relu", "batchnorm": True}]
    prev = channels[0]
    for ch in channels:
        layers.append({"type": "resblock", "channels": int(ch),
                       "stride": 1 if ch == prev else 2})
        prev = ch
    layers += [{"type": "flatten"},
               {"type": "dense", "units": int(classes), "activation": None}]
    return ModelSpec(tuple(in_shape), layers)


MODEL_ZOO = {
    "mlp_2_16_3": lambda: mlp_spec((2, 16, 3)),
    "mlp_2_16_2": lambda: mlp_spec((2, 16, 2)),
    "mini_convnet": lambda: mini_convnet_spec(),
    "mini_resnet": lambda: mini_resnet_spec(),
}


# -- losses -----------------------------------------------------------------

def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_value(z, y, kind: LossKind):
    """Mini-batch mean loss at network output z."""
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if kind is LossKind.MeanSquaredError:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != z.shape:
            raise ShapeError("MSE target shape mismatch")
        return float(0.5 * np.sum((z - y) ** 2) / n)
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n:
        raise ShapeError("CrossEntropy wants one integer label per row")
    if y.min() < 0 or y.max() >= z.shape[1]:
        raise ShapeError("label out of range")
    zs = z - z.max(axis=-1, keepdims=True)
    logp = zs - np.log(np.exp(zs).sum(axis=-1, keepdims=True))
    return float(-logp[np.arange(n), y].mean())


def loss_grad_z(z, y, kind: LossKind):
    """d(mean loss)/dz, same scaling as loss_value."""
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if kind is LossKind.MeanSquaredError:
        return (z - np.asarray(y, dtype=np.float64)) / n
    p = _softmax(z)
    g = p.copy()
    g[np.arange(n), np.asarray(y)] -= 1.0
    return g / n


def forward_loss(graph: Graph, params: ParamSet, x, y, kind: LossKind):
    """Evaluate the network and the mini-batch mean loss.

    Returns (z, loss); z is kept so callers can bind curvature at it.
    """
    z = graph.evaluate({**params.feeds(), "x": np.asarray(x, dtype=np.float64)})
    _check_finite(z, "network output")
    return z, loss_value(z, y, kind)

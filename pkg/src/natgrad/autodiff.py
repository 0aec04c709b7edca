"""Dense-tensor automatic differentiation.

Two front ends share one set of primitive rules:

* ``Graph`` -- a static DAG of primitives built by tracing a python
  function over ``Sym`` placeholders.  Supports plain evaluation,
  reverse-mode vector-Jacobian products, forward-mode Jacobian-vector
  products (dual-number propagation) and scalar gradients.
* ``Var`` -- a dynamic tape node used where the computation is data
  dependent (recurrent controllers, iterative solvers).  Reverse mode
  only, with support for custom primitives and stopped gradients.

Everything is float64 numpy end to end.
"""

from __future__ import annotations

import numpy as np


class NonFiniteError(ArithmeticError):
    """A public operation produced NaN or Inf."""


class ShapeError(ValueError):
    pass


def _check_finite(x, what="result"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite {what}")
    return x


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitive rules
#
# forward(inputs, attrs) -> output array
# vjp(cot, inputs, output, attrs) -> list of cotangents (None for no flow)
# jvp(inputs, tangents, output, attrs) -> output tangent (tangents may be None)
# ---------------------------------------------------------------------------

def _t(x, like):
    return np.zeros_like(like) if x is None else x


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    return np.logaddexp(0.0, x)


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (x.shape[2] - kh) // stride + 1
    wo = (x.shape[3] - kw) // stride + 1
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(n, c * kh * kw, ho * wo), ho, wo


def _col2im(cols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return out


def _conv2d(x, w, stride, pad):
    o, c, kh, kw = w.shape
    cols, ho, wo = _im2col(x, kh, kw, stride, pad)
    out = np.einsum("ok,nkl->nol", w.reshape(o, -1), cols)
    return out.reshape(x.shape[0], o, ho, wo)


def _conv2d_vjp(cot, x, w, stride, pad):
    o, c, kh, kw = w.shape
    cols, ho, wo = _im2col(x, kh, kw, stride, pad)
    cot2 = cot.reshape(cot.shape[0], o, -1)
    dw = np.einsum("nol,nkl->ok", cot2, cols).reshape(w.shape)
    dcols = np.einsum("ok,nol->nkl", w.reshape(o, -1), cot2)
    dx = _col2im(dcols, x.shape, kh, kw, stride, pad)
    return dx, dw


def _bn_stats(x, axes, eps):
    m = x.mean(axis=axes, keepdims=True)
    v = x.var(axis=axes, keepdims=True)
    s = np.sqrt(v + eps)
    return m, v, s


_OPS = {}


def _op(name):
    def deco(cls):
        _OPS[name] = cls
        return cls
    return deco


@_op("add")
class _Add:
    @staticmethod
    def forward(ins, attrs):
        return ins[0] + ins[1]

    @staticmethod
    def vjp(cot, ins, out, attrs):
        return [_unbroadcast(cot, ins[0].shape), _unbroadcast(cot, ins[1].shape)]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        return _t(tans[0], ins[0]) + _t(tans[1], ins[1])


@_op("sub")
class _Sub:
    @staticmethod
    def forward(ins, attrs):
        return ins[0] - ins[1]

    @staticmethod
    def vjp(cot, ins, out, attrs):
        return [_unbroadcast(cot, ins[0].shape), _unbroadcast(-cot, ins[1].shape)]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        return _t(tans[0], ins[0]) - _t(tans[1], ins[1])


@_op("mul")
class _Mul:
    @staticmethod
    def forward(ins, attrs):
        return ins[0] * ins[1]

    @staticmethod
    def vjp(cot, ins, out, attrs):
        return [_unbroadcast(cot * ins[1], ins[0].shape),
                _unbroadcast(cot * ins[0], ins[1].shape)]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        r = np.zeros_like(out)
        if tans[0] is not None:
            r = r + tans[0] * ins[1]
        if tans[1] is not None:
            r = r + ins[0] * tans[1]
        return r


@_op("div")
class _Div:
    @staticmethod
    def forward(ins, attrs):
        return ins[0] / ins[1]

    @staticmethod
    def vjp(cot, ins, out, attrs):
        return [_unbroadcast(cot / ins[1], ins[0].shape),
                _unbroadcast(-cot * out / ins[1], ins[1].shape)]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        r = np.zeros_like(out)
        if tans[0] is not None:
            r = r + tans[0] / ins[1]
        if tans[1] is not None:
            r = r - out * tans[1] / ins[1]
        return r


@_op("neg")
class _Neg:
    @staticmethod
    def forward(ins, attrs):
        return -ins[0]

    @staticmethod
    def vjp(cot, ins, out, attrs):
        return [-cot]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        return -_t(tans[0], ins[0])


@_op("matmul")
class _MatMul:
    @staticmethod
    def forward(ins, attrs):
        return ins[0] @ ins[1]

    @staticmethod
    def vjp(cot, ins, out, attrs):
        a, b = ins
        return [cot @ b.T, a.T @ cot]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        a, b = ins
        r = np.zeros_like(out)
        if tans[0] is not None:
            r = r + tans[0] @ b
        if tans[1] is not None:
            r = r + a @ tans[1]
        return r


@_op("conv2d")
class _Conv2d:
    @staticmethod
    def forward(ins, attrs):
        return _conv2d(ins[0], ins[1], attrs["stride"], attrs["pad"])

    @staticmethod
    def vjp(cot, ins, out, attrs):
        dx, dw = _conv2d_vjp(cot, ins[0], ins[1], attrs["stride"], attrs["pad"])
        return [dx, dw]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        x, w = ins
        r = np.zeros_like(out)
        if tans[0] is not None:
            r = r + _conv2d(tans[0], w, attrs["stride"], attrs["pad"])
        if tans[1] is not None:
            r = r + _conv2d(x, tans[1], attrs["stride"], attrs["pad"])
        return r


@_op("tanh")
class _Tanh:
    @staticmethod
    def forward(ins, attrs):
        return np.tanh(ins[0])

    @staticmethod
    def vjp(cot, ins, out, attrs):
        return [cot * (1.0 - out * out)]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        return _t(tans[0], ins[0]) * (1.0 - out * out)


@_op("sigmoid")
class _Sigmoid:
    @staticmethod
    def forward(ins, attrs):
        return _sigmoid(ins[0])

    @staticmethod
    def vjp(cot, ins, out, attrs):
        return [cot * out * (1.0 - out)]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        return _t(tans[0], ins[0]) * out * (1.0 - out)


@_op("softplus")
class _Softplus:
    @staticmethod
    def forward(ins, attrs):
        return _softplus(ins[0])

    @staticmethod
    def vjp(cot, ins, out, attrs):
        return [cot * _sigmoid(ins[0])]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        return _t(tans[0], ins[0]) * _sigmoid(ins[0])


@_op("relu")
class _Relu:
    @staticmethod
    def forward(ins, attrs):
        return np.maximum(ins[0], 0.0)

    @staticmethod
    def vjp(cot, ins, out, attrs):
        return [cot * (ins[0] > 0)]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        return _t(tans[0], ins[0]) * (ins[0] > 0)


@_op("exp")
class _Exp:
    @staticmethod
    def forward(ins, attrs):
        return np.exp(ins[0])

    @staticmethod
    def vjp(cot, ins, out, attrs):
        return [cot * out]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        return _t(tans[0], ins[0]) * out


@_op("log")
class _Log:
    @staticmethod
    def forward(ins, attrs):
        return np.log(ins[0])

    @staticmethod
    def vjp(cot, ins, out, attrs):
        return [cot / ins[0]]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        return _t(tans[0], ins[0]) / ins[0]


@_op("sqrt")
class _Sqrt:
    @staticmethod
    def forward(ins, attrs):
        return np.sqrt(ins[0])

    @staticmethod
    def vjp(cot, ins, out, attrs):
        return [cot * 0.5 / out]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        return _t(tans[0], ins[0]) * 0.5 / out


@_op("sum")
class _Sum:
    @staticmethod
    def forward(ins, attrs):
        return np.sum(ins[0], axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False))

    @staticmethod
    def vjp(cot, ins, out, attrs):
        x = ins[0]
        axis = attrs.get("axis")
        if axis is not None and not attrs.get("keepdims", False):
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            cot = np.expand_dims(cot, tuple(a % x.ndim for a in axes))
        return [np.broadcast_to(cot, x.shape).copy()]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        return np.sum(_t(tans[0], ins[0]), axis=attrs.get("axis"),
                      keepdims=attrs.get("keepdims", False))


@_op("reshape")
class _Reshape:
    @staticmethod
    def forward(ins, attrs):
        return ins[0].reshape(attrs["shape"])

    @staticmethod
    def vjp(cot, ins, out, attrs):
        return [cot.reshape(ins[0].shape)]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        return _t(tans[0], ins[0]).reshape(attrs["shape"])


@_op("concat")
class _Concat:
    @staticmethod
    def forward(ins, attrs):
        return np.concatenate(ins, axis=attrs.get("axis", 0))

    @staticmethod
    def vjp(cot, ins, out, attrs):
        axis = attrs.get("axis", 0)
        sizes = [x.shape[axis] for x in ins]
        return list(np.split(cot, np.cumsum(sizes)[:-1], axis=axis))

    @staticmethod
    def jvp(ins, tans, out, attrs):
        return np.concatenate([_t(t, x) for t, x in zip(tans, ins)],
                              axis=attrs.get("axis", 0))


@_op("softmax")
class _Softmax:
    @staticmethod
    def forward(ins, attrs):
        x = ins[0]
        x = x - x.max(axis=-1, keepdims=True)
        e = np.exp(x)
        return e / e.sum(axis=-1, keepdims=True)

    @staticmethod
    def vjp(cot, ins, out, attrs):
        return [out * (cot - np.sum(cot * out, axis=-1, keepdims=True))]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        t = _t(tans[0], ins[0])
        return out * (t - np.sum(t * out, axis=-1, keepdims=True))


@_op("batchnorm")
class _BatchNorm:
    """Training-mode batch normalization over all axes but the last.

    Inputs: (x, gamma, beta) with gamma/beta shaped like the channel axis.
    For 4-d NCHW input the channel axis is 1 and stats are over (0, 2, 3).
    """

    @staticmethod
    def _axes(x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    @staticmethod
    def _expand(g, x):
        return g if x.ndim == 2 else g.reshape(1, -1, 1, 1)

    @staticmethod
    def forward(ins, attrs):
        x, gamma, beta = ins
        axes = _BatchNorm._axes(x)
        m, v, s = _bn_stats(x, axes, attrs.get("eps", 1e-5))
        xhat = (x - m) / s
        return _BatchNorm._expand(gamma, x) * xhat + _BatchNorm._expand(beta, x)

    @staticmethod
    def vjp(cot, ins, out, attrs):
        x, gamma, beta = ins
        axes = _BatchNorm._axes(x)
        m, v, s = _bn_stats(x, axes, attrs.get("eps", 1e-5))
        xhat = (x - m) / s
        ge = _BatchNorm._expand(gamma, x)
        cnt = np.prod([x.shape[a] for a in axes])
        dxhat = cot * ge
        dx = (dxhat - dxhat.mean(axis=axes, keepdims=True)
              - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)) / s
        dgamma = (cot * xhat).sum(axis=axes).reshape(gamma.shape)
        dbeta = cot.sum(axis=axes).reshape(beta.shape)
        return [dx, dgamma, dbeta]

    @staticmethod
    def jvp(ins, tans, out, attrs):
        x, gamma, beta = ins
        axes = _BatchNorm._axes(x)
        eps = attrs.get("eps", 1e-5)
        m, v, s = _bn_stats(x, axes, eps)
        xhat = (x - m) / s
        ge = _BatchNorm._expand(gamma, x)
        r = np.zeros_like(out)
        if tans[0] is not None:
            dx = tans[0]
            dm = dx.mean(axis=axes, keepdims=True)
            dv = (2.0 * (x - m) * dx).mean(axis=axes, keepdims=True)
            dxhat = (dx - dm) / s - (x - m) * dv / (2.0 * s ** 3)
            r = r + ge * dxhat
        if tans[1] is not None:
            r = r + _BatchNorm._expand(tans[1], x) * xhat
        if tans[2] is not None:
            r = r + _BatchNorm._expand(tans[2], x)
        return r


# ---------------------------------------------------------------------------
# static graph
# ---------------------------------------------------------------------------

class _Node:
    __slots__ = ("op", "inputs", "attrs", "name")

    def __init__(self, op, inputs, attrs, name=None):
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.name = name


class Sym:
    """Handle to a node during tracing."""

    __slots__ = ("g", "i")

    def __init__(self, g, i):
        self.g = g
        self.i = i

    def _bin(self, other, op):
        other = self.g.lift(other)
        return self.g.apply(op, [self, other])

    def __add__(self, other):
        return self._bin(other, "add")

    def __radd__(self, other):
        return self.g.lift(other)._bin(self, "add")

    def __sub__(self, other):
        return self._bin(other, "sub")

    def __rsub__(self, other):
        return self.g.lift(other)._bin(self, "sub")

    def __mul__(self, other):
        return self._bin(other, "mul")

    def __rmul__(self, other):
        return self.g.lift(other)._bin(self, "mul")

    def __truediv__(self, other):
        return self._bin(other, "div")

    def __matmul__(self, other):
        return self.g.apply("matmul", [self, other])

    def __neg__(self):
        return self.g.apply("neg", [self])

    def reshape(self, shape):
        return self.g.apply("reshape", [self], shape=tuple(shape))

    def sum(self, axis=None, keepdims=False):
        return self.g.apply("sum", [self], axis=axis, keepdims=keepdims)


class GraphBuilder:
    def __init__(self):
        self.nodes = []
        self.input_ids = {}
        self.param_ids = {}

    def _new(self, node):
        self.nodes.append(node)
        return Sym(self, len(self.nodes) - 1)

    def input(self, name):
        s = self._new(_Node("input", [], {}, name))
        self.input_ids[name] = s.i
        return s

    def param(self, name):
        s = self._new(_Node("param", [], {}, name))
        self.param_ids[name] = s.i
        return s

    def const(self, value):
        return self._new(_Node("const", [], {"value": np.asarray(value, dtype=np.float64)}))

    def lift(self, x):
        return x if isinstance(x, Sym) else self.const(x)

    def apply(self, op, syms, **attrs):
        if op not in _OPS:
            raise KeyError(f"unknown primitive: {op}")
        return self._new(_Node(op, [s.i for s in syms], attrs))

    def finalize(self, outputs):
        if isinstance(outputs, Sym):
            outputs = [outputs]
        return Graph(self.nodes, self.input_ids, self.param_ids,
                     [o.i for o in outputs])


class Graph:
    """Immutable traced computation: inputs + params -> outputs.

    ``params`` are distinguished from ``inputs`` only so that callers can
    ask for derivatives with respect to the parameter leaves by default.
    """

    def __init__(self, nodes, input_ids, param_ids, output_ids):
        self.nodes = nodes
        self.input_ids = dict(input_ids)
        self.param_ids = dict(param_ids)
        self.output_ids = list(output_ids)

    # -- evaluation ---------------------------------------------------------

    def _values(self, feeds):
        vals = [None] * len(self.nodes)
        for i, node in enumerate(self.nodes):
            if node.op in ("input", "param"):
                if node.name not in feeds:
                    raise ShapeError(f"unbound graph leaf: {node.name}")
                vals[i] = np.asarray(feeds[node.name], dtype=np.float64)
            elif node.op == "const":
                vals[i] = node.attrs["value"]
            else:
                vals[i] = _OPS[node.op].forward([vals[j] for j in node.inputs], node.attrs)
        return vals

    def evaluate(self, feeds):
        vals = self._values(feeds)
        outs = [_check_finite(vals[i]) for i in self.output_ids]
        return outs[0] if len(outs) == 1 else outs

    def bind(self, feeds):
        return BoundGraph(self, self._values(feeds))

    # -- derivatives --------------------------------------------------------

    def vjp(self, feeds, cotangents, wrt=None):
        return self.bind(feeds).vjp(cotangents, wrt=wrt)

    def jvp(self, feeds, tangents):
        return self.bind(feeds).jvp(tangents)

    def gradient(self, feeds, wrt=None):
        out = self.output_ids
        if len(out) != 1:
            raise ShapeError("gradient needs a single scalar output")
        return self.bind(feeds).gradient(wrt=wrt)


class BoundGraph:
    """A graph with one forward pass cached, for repeated jvp/vjp calls."""

    def __init__(self, graph, values):
        self.graph = graph
        self.values = values

    @property
    def outputs(self):
        outs = [self.values[i] for i in self.graph.output_ids]
        return outs[0] if len(outs) == 1 else outs

    def jvp(self, tangents):
        """Forward-mode product: tangents is {leaf name: tangent array}."""
        g = self.graph
        tans = [None] * len(g.nodes)
        for name, i in {**g.input_ids, **g.param_ids}.items():
            if name in tangents:
                t = np.asarray(tangents[name], dtype=np.float64)
                if t.shape != self.values[i].shape:
                    raise ShapeError(f"tangent shape mismatch for {name}")
                tans[i] = t
        for i, node in enumerate(g.nodes):
            if node.op in ("input", "param", "const"):
                continue
            in_tans = [tans[j] for j in node.inputs]
            if all(t is None for t in in_tans):
                continue
            tans[i] = _OPS[node.op].jvp([self.values[j] for j in node.inputs],
                                        in_tans, self.values[i], node.attrs)
        outs = [tans[i] if tans[i] is not None else np.zeros_like(self.values[i])
                for i in g.output_ids]
        return outs[0] if len(outs) == 1 else outs

    def vjp(self, cotangents, wrt=None):
        """Reverse-mode product; returns {param name: cotangent}.

        ``cotangents`` is one array (single output) or a list per output.
        ``wrt`` selects leaf names; defaults to all params.
        """
        g = self.graph
        if not isinstance(cotangents, (list, tuple)):
            cotangents = [cotangents]
        if len(cotangents) != len(g.output_ids):
            raise ShapeError("one cotangent per graph output required")
        adj = [None] * len(g.nodes)
        for i, cot in zip(g.output_ids, cotangents):
            cot = np.asarray(cot, dtype=np.float64)
            if cot.shape != self.values[i].shape:
                raise ShapeError("cotangent shape mismatch")
            adj[i] = cot if adj[i] is None else adj[i] + cot
        for i in range(len(g.nodes) - 1, -1, -1):
            node = g.nodes[i]
            if adj[i] is None or node.op in ("input", "param", "const"):
                continue
            cots = _OPS[node.op].vjp(adj[i], [self.values[j] for j in node.inputs],
                                     self.values[i], node.attrs)
            for j, c in zip(node.inputs, cots):
                if c is None:
                    continue
                adj[j] = c if adj[j] is None else adj[j] + c
        if wrt is None:
            wrt = list(g.param_ids)
        out = {}
        for name in wrt:
            i = g.param_ids.get(name, g.input_ids.get(name))
            if i is None:
                raise KeyError(f"unknown leaf: {name}")
            out[name] = adj[i] if adj[i] is not None else np.zeros_like(self.values[i])
        return out

    def gradient(self, wrt=None):
        out_id = self.graph.output_ids[0]
        if self.values[out_id].size != 1:
            raise ShapeError("gradient needs a scalar output")
        return self.vjp(np.ones_like(self.values[out_id]), wrt=wrt)


# ---------------------------------------------------------------------------
# dynamic tape
# ---------------------------------------------------------------------------

class Var:
    """Reverse-mode tape node over a float64 numpy array."""

    __slots__ = ("data", "parents", "bwd", "grad")

    # defer mixed numpy/Var arithmetic to the Var reflected operators
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, data, parents=(), bwd=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.bwd = bwd
        self.grad = None

    # -- construction helpers ----------------------------------------------

    @staticmethod
    def lift(x):
        return x if isinstance(x, Var) else Var(x)

    def _apply(self, op, *others, **attrs):
        vs = [self] + [Var.lift(o) for o in others]
        return _var_apply(op, vs, attrs)

    def __add__(self, other):
        return self._apply("add", other)

    def __radd__(self, other):
        return Var.lift(other)._apply("add", self)

    def __sub__(self, other):
        return self._apply("sub", other)

    def __rsub__(self, other):
        return Var.lift(other)._apply("sub", self)

    def __mul__(self, other):
        return self._apply("mul", other)

    def __rmul__(self, other):
        return Var.lift(other)._apply("mul", self)

    def __truediv__(self, other):
        return self._apply("div", other)

    def __rtruediv__(self, other):
        return Var.lift(other)._apply("div", self)

    def __matmul__(self, other):
        return self._apply("matmul", other)

    def __rmatmul__(self, other):
        return Var.lift(other)._apply("matmul", self)

    def __neg__(self):
        return self._apply("neg")

    def sum(self, axis=None, keepdims=False):
        return self._apply("sum", axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return self._apply("reshape", shape=tuple(shape))

    def detach(self):
        return Var(self.data)

    # -- reverse pass -------------------------------------------------------

    def backward(self, seed=None):
        """Accumulate grads of self into every reachable parent's .grad."""
        if seed is None:
            if self.data.size != 1:
                raise ShapeError("backward() on non-scalar needs a seed")
            seed = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(seed, dtype=np.float64)
        for node in reversed(order):
            if node.grad is None or node.bwd is None:
                continue
            for p, c in zip(node.parents, node.bwd(node.grad)):
                if c is None:
                    continue
                if p.grad is None:
                    p.grad = np.array(c, dtype=np.float64)
                else:
                    p.grad = p.grad + c


def _var_apply(op, vs, attrs):
    rule = _OPS[op]
    ins = [v.data for v in vs]
    out = rule.forward(ins, attrs)

    def bwd(cot):
        return rule.vjp(cot, ins, out, attrs)

    return Var(out, tuple(vs), bwd)


def custom_var(data, parents, bwd):
    """Tape node with a hand-written backward rule.

    ``bwd(cotangent)`` returns one cotangent per parent (None to skip).
    """
    return Var(np.asarray(data, dtype=np.float64), tuple(parents), bwd)


def vtanh(v):
    return Var.lift(v)._apply("tanh")


def vsigmoid(v):
    return Var.lift(v)._apply("sigmoid")


def vsoftplus(v):
    return Var.lift(v)._apply("softplus")


def vexp(v):
    return Var.lift(v)._apply("exp")


def vsqrt(v):
    return Var.lift(v)._apply("sqrt")


def vdot(a, b):
    if isinstance(a, Var) or isinstance(b, Var):
        return (Var.lift(a) * Var.lift(b)).sum()
    return float(np.dot(a, b))


def vconcat(vs, axis=0):
    vs = [Var.lift(v) for v in vs]
    return _var_apply("concat", vs, {"axis": axis})


def scatter_concat(parts, index_lists, size):
    """Assemble a flat vector from per-group outputs.

    parts[k] (a Var or array of shape (len(index_lists[k]),)) lands at
    flat positions index_lists[k]; the groups must partition range(size).
    """
    if not any(isinstance(p, Var) for p in parts):
        out = np.empty(size, dtype=np.float64)
        for p, idx in zip(parts, index_lists):
            out[idx] = p
        return out
    parts = [Var.lift(p) for p in parts]
    out = np.empty(size, dtype=np.float64)
    for p, idx in zip(parts, index_lists):
        out[idx] = p.data

    def bwd(cot):
        return [cot[idx] for idx in index_lists]

    return Var(out, tuple(parts), bwd)

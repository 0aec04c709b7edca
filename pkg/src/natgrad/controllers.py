"""Coordinate-wise recurrent controllers for damping and preconditioning.

Two independent controllers ("s" for the damping vector, "p" for the
preconditioner diagonal) run the same architecture: tanh preprocess of
(d0, r0, g) per coordinate, a two-layer LSTM with 4 units, and a linear
map + softplus postprocess.  Meta-parameters are shared across all
coordinates of one parameter kind; hidden states are per coordinate.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (ShapeError, Var, scatter_concat, vsigmoid, vsoftplus,
                       vtanh, _sigmoid, _softplus)
from .models import ParamSet

HIDDEN = 4
N_INPUT = 3  # (d0, r0, g) after tanh
CONTROLLERS = ("s", "p")

# array layout of one controller for one parameter kind
_ARRAY_SHAPES = [
    ("Wx1", (N_INPUT, 4 * HIDDEN)),
    ("Wh1", (HIDDEN, 4 * HIDDEN)),
    ("b1", (4 * HIDDEN,)),
    ("Wx2", (HIDDEN, 4 * HIDDEN)),
    ("Wh2", (HIDDEN, 4 * HIDDEN)),
    ("b2", (4 * HIDDEN,)),
    ("Wo", (HIDDEN, 1)),
    ("bo", (1,)),
]


class LstmMetaParams:
    """dict[(controller, kind, array name)] -> np.ndarray."""

    def __init__(self, arrays):
        self.arrays = arrays

    @staticmethod
    def init(kinds, seed):
        """Gate weights small uniform (+-0.1); postprocess exactly zero,
        which pins the initial outputs to softplus(0) = ln 2 everywhere."""
        rng = np.random.default_rng(seed)
        arrays = {}
        for ctrl in CONTROLLERS:
            for kind in kinds:
                for name, shape in _ARRAY_SHAPES:
                    if name in ("Wo", "bo"):
                        a = np.zeros(shape)
                    elif name.startswith("b"):
                        a = np.zeros(shape)
                    else:
                        a = rng.uniform(-0.1, 0.1, size=shape)
                    arrays[(ctrl, kind.value, name)] = a
        return LstmMetaParams(arrays)

    def keys(self):
        return list(self.arrays)

    def copy(self):
        return LstmMetaParams({k: v.copy() for k, v in self.arrays.items()})

    def controller_keys(self, ctrl):
        return [k for k in self.arrays if k[0] == ctrl]


class CoordinateStates:
    """Per-coordinate (h, c) for both LSTM layers of both controllers."""

    def __init__(self, states):
        self.states = states  # dict[(ctrl, kind value)] -> dict h1/c1/h2/c2

    @staticmethod
    def zeros(kind_counts):
        states = {}
        for ctrl in CONTROLLERS:
            for kind, m in kind_counts.items():
                states[(ctrl, kind.value)] = {
                    name: np.zeros((m, HIDDEN)) for name in ("h1", "c1", "h2", "c2")}
        return CoordinateStates(states)

    def copy(self):
        return CoordinateStates({k: {n: a.copy() for n, a in v.items()}
                                 for k, v in self.states.items()})

    def detach(self):
        return CoordinateStates({
            k: {n: (a.data if isinstance(a, Var) else a) for n, a in v.items()}
            for k, v in self.states.items()})


class ControllerOutput:
    def __init__(self, s, p_diag):
        self.s = s
        self.p_diag = p_diag

    @property
    def s_data(self):
        return self.s.data if isinstance(self.s, Var) else self.s

    @property
    def p_data(self):
        return self.p_diag.data if isinstance(self.p_diag, Var) else self.p_diag


def controller_init(params: ParamSet, seed):
    kinds = sorted({kind for _, kind, _ in params.entries}, key=lambda k: k.value)
    idx = params.kind_indices()
    meta = LstmMetaParams.init(kinds, seed)
    states = CoordinateStates.zeros({k: len(v) for k, v in idx.items()})
    return meta, states


def _lstm_cell_np(x, h, c, wx, wh, b):
    gates = x @ wx + h @ wh + b
    i = _sigmoid(gates[:, 0:HIDDEN])
    f = _sigmoid(gates[:, HIDDEN:2 * HIDDEN])
    g = np.tanh(gates[:, 2 * HIDDEN:3 * HIDDEN])
    o = _sigmoid(gates[:, 3 * HIDDEN:])
    c2 = f * c + i * g
    h2 = o * np.tanh(c2)
    return h2, c2


def _slice_var(v, lo, hi):
    """Column slice of a (m, 4H) tape matrix."""
    data = v.data[:, lo:hi]

    def bwd(cot):
        full = np.zeros_like(v.data)
        full[:, lo:hi] = cot
        return [full]

    return Var(data, (v,), bwd)


def _lstm_cell_var(x, h, c, wx, wh, b):
    gates = Var.lift(x) @ wx + Var.lift(h) @ wh + b
    i = vsigmoid(_slice_var(gates, 0, HIDDEN))
    f = vsigmoid(_slice_var(gates, HIDDEN, 2 * HIDDEN))
    g = vtanh(_slice_var(gates, 2 * HIDDEN, 3 * HIDDEN))
    o = vsigmoid(_slice_var(gates, 3 * HIDDEN, 4 * HIDDEN))
    c2 = f * c + i * g
    h2 = o * vtanh(c2)
    return h2, c2


def controller_step(meta, states: CoordinateStates, params: ParamSet,
                    d0, r0, g, tape_vars=None):
    """Advance both controllers one step on (d0, r0, g).

    The inputs are gradient-stopped: only the meta-parameters (and the
    carried hidden states) are differentiable.  When ``tape_vars`` maps
    meta keys to ``Var`` nodes the whole step runs on the tape and the
    returned outputs/states are Vars; otherwise everything is numpy.

    Returns (ControllerOutput, CoordinateStates).
    """
    dim = params.total_dim
    for v in (d0, r0, g):
        if np.shape(v) != (dim,):
            raise ShapeError("controller input length mismatch")
    idx = params.kind_indices()
    feats = {kind: np.tanh(np.stack([d0[ix], r0[ix], g[ix]], axis=1))
             for kind, ix in idx.items()}
    new_states = {}
    outputs = {}
    on_tape = tape_vars is not None

    def w(ctrl, kind, name):
        key = (ctrl, kind.value, name)
        return tape_vars[key] if on_tape else meta.arrays[key]

    for ctrl in CONTROLLERS:
        parts, index_lists = [], []
        for kind, ix in idx.items():
            st = states.states[(ctrl, kind.value)]
            x = feats[kind]
            cell = _lstm_cell_var if on_tape else _lstm_cell_np
            h1, c1 = cell(x, st["h1"], st["c1"],
                          w(ctrl, kind, "Wx1"), w(ctrl, kind, "Wh1"), w(ctrl, kind, "b1"))
            h2, c2 = cell(h1, st["h2"], st["c2"],
                          w(ctrl, kind, "Wx2"), w(ctrl, kind, "Wh2"), w(ctrl, kind, "b2"))
            out = h2 @ w(ctrl, kind, "Wo") + w(ctrl, kind, "bo")
            if on_tape:
                out = vsoftplus(out.reshape((len(ix),)))
            else:
                out = _softplus(out.reshape(len(ix)))
            new_states[(ctrl, kind.value)] = {"h1": h1, "c1": c1, "h2": h2, "c2": c2}
            parts.append(out)
            index_lists.append(ix)
        outputs[ctrl] = scatter_concat(parts, index_lists, dim)
    return (ControllerOutput(outputs["s"], outputs["p"]),
            CoordinateStates(new_states))

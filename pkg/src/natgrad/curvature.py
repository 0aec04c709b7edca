"""Generalized Gauss-Newton curvature-vector products.

The curvature operator never materializes a matrix: a product is a
forward-mode pass through the network, a small analytic loss-Hessian
multiply at the output, and a reverse-mode pass back to the parameters.
An optional per-coordinate damping vector s adds s * v elementwise.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError, Var, custom_var
from .models import LossKind, ParamSet, _softmax, loss_grad_z, loss_value


class LossHessian:
    """Analytic Hessian of the mini-batch mean loss at output z."""

    def __init__(self, kind: LossKind, z):
        self.kind = kind
        self.z = np.asarray(z, dtype=np.float64)
        if kind is LossKind.CrossEntropy:
            self._p = _softmax(self.z)

    def apply(self, mu):
        mu = np.asarray(mu, dtype=np.float64)
        if mu.shape != self.z.shape:
            raise ShapeError("loss-Hessian input shape mismatch")
        n = self.z.shape[0]
        if self.kind is LossKind.MeanSquaredError:
            return mu / n
        p = self._p
        return (p * mu - p * np.sum(p * mu, axis=-1, keepdims=True)) / n


def hl_apply(hl: LossHessian, mu):
    return hl.apply(mu)


class CurvatureOperator:
    """Damped GGN operator bound to one (graph, params, batch)."""

    def __init__(self, graph, params: ParamSet, x, y, kind: LossKind, damping=None):
        self.params = params
        self.kind = kind
        self.y = y
        self.bound = graph.bind({**params.feeds(), "x": np.asarray(x, dtype=np.float64)})
        self.z = self.bound.outputs
        self.hl = LossHessian(kind, self.z)
        self.dim = params.total_dim
        self._names = [name for name, _, _ in params.entries]
        self._shapes = [a.shape for _, _, a in params.entries]
        self._sizes = [a.size for _, _, a in params.entries]
        self.applications = 0  # curvature products since binding
        self.damping = None
        self.set_damping(damping)

    def set_damping(self, damping):
        if damping is not None:
            damping = np.asarray(damping, dtype=np.float64)
            if damping.shape != (self.dim,):
                raise ShapeError("damping vector length mismatch")
            if np.any(damping < 0):
                raise ValueError("negative damping rejected")
        self.damping = damping

    # -- helpers ------------------------------------------------------------

    def _to_feeds(self, v):
        out, off = {}, 0
        for name, shape, size in zip(self._names, self._shapes, self._sizes):
            out[name] = v[off:off + size].reshape(shape)
            off += size
        return out

    def _from_feeds(self, d):
        return np.concatenate([d[name].ravel() for name in self._names])

    def loss(self):
        return loss_value(self.z, self.y, self.kind)

    def gradient(self):
        """Flat mini-batch gradient at the bound point (one reverse pass)."""
        cot = loss_grad_z(self.z, self.y, self.kind)
        return self._from_feeds(self.bound.vjp(cot))

    # -- products -----------------------------------------------------------

    def ggn_vp_undamped(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ShapeError("curvature input length mismatch")
        self.applications += 1
        mu = self.bound.jvp(self._to_feeds(v))
        u = self.hl.apply(mu)
        return self._from_feeds(self.bound.vjp(u))

    def apply(self, v):
        """H-bar v = J^T H_l J v + s * v."""
        out = self.ggn_vp_undamped(v)
        if self.damping is not None:
            out = out + self.damping * v
        return out

    __call__ = apply

    def apply_var(self, v, damping_var=None):
        """Tape version of apply: differentiable in v (and the damping).

        The GGN part uses the self-adjoint reverse rule: for u = Hv the
        cotangent of v is H applied to the cotangent of u.  Nothing flows
        back into the bound network or batch.
        """
        if not isinstance(v, Var):
            v = Var(v)
        data = self.ggn_vp_undamped(v.data)

        def bwd(cot):
            return [self.ggn_vp_undamped(cot)]

        out = custom_var(data, [v], bwd)
        if damping_var is not None:
            out = out + damping_var * v
        elif self.damping is not None:
            out = out + self.damping * v
        return out


def ggn_vp(op: CurvatureOperator, v):
    return op.apply(v)


def ggn_vp_grad(op: CurvatureOperator, cotangent):
    """Reverse rule for u = H-bar v: returns H-bar applied to the cotangent."""
    return op.apply(cotangent)


def dense_ggn(op: CurvatureOperator):
    """Materialize H-bar column by column (tests and tiny models only)."""
    cols = [op.apply(e) for e in np.eye(op.dim)]
    return np.stack(cols, axis=1)

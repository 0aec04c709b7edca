"""Training-step implementations: the meta-learned second-order step,
classic Hessian-Free variants, and first-order baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controllers import controller_init, controller_step
from .curvature import CurvatureOperator
from .models import ParamSet, loss_value
from .pcg import DiagonalPreconditioner, pcg


class DivergenceError(ArithmeticError):
    """Training loss went non-finite; the run must abort, not clamp."""


@dataclass
class TrainStepRecord:
    step: int
    loss: float
    dot_dg: float = float("nan")
    res_norm: float = float("nan")
    s_min: float = float("nan")
    s_max: float = float("nan")
    p_min: float = float("nan")
    p_max: float = float("nan")
    applications: int = 0


# -- first-order baselines --------------------------------------------------

class SgdM:
    def __init__(self, lr, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self.buf = None

    def update(self, w, g):
        if self.buf is None:
            self.buf = np.zeros_like(w)
        self.buf = self.momentum * self.buf + g
        return w - self.lr * self.buf


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def update(self, w, g):
        if self.m is None:
            self.m = np.zeros_like(w)
            self.v = np.zeros_like(w)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return w - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class RmsProp:
    def __init__(self, lr=1e-3, decay=0.9, eps=1e-8):
        self.lr, self.decay, self.eps = lr, decay, eps
        self.sq = None

    def update(self, w, g):
        if self.sq is None:
            self.sq = np.zeros_like(w)
        self.sq = self.decay * self.sq + (1 - self.decay) * g * g
        return w - self.lr * g / (np.sqrt(self.sq) + self.eps)


class FirstOrderTrainer:
    """Drives a first-order rule over (graph, params) on mini-batches."""

    def __init__(self, graph, params: ParamSet, loss_kind, rule):
        self.graph = graph
        self.params = params
        self.loss_kind = loss_kind
        self.rule = rule
        self.t = 0

    def step(self, x, y):
        op = CurvatureOperator(self.graph, self.params, x, y, self.loss_kind)
        loss = op.loss()
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {self.t}")
        g = op.gradient()
        w = self.rule.update(self.params.flatten(), g)
        self.params = self.params.unflatten(w)
        self.t += 1
        return TrainStepRecord(self.t, loss)


# -- meta-learned Hessian-free step ----------------------------------------

class MlhfOptimizer:
    """Damped-preconditioned natural-gradient step driven by the two
    meta-learned controllers, with PCG warm starting across steps.

    lr is pinned to b_tr / b_mt; there is no schedule.
    """

    def __init__(self, graph, params: ParamSet, loss_kind, meta, states=None,
                 b_tr=None, b_mt=None, lr=None, n=4, use_rnn_p=True):
        self.graph = graph
        self.params = params
        self.loss_kind = loss_kind
        self.meta = meta
        if states is None:
            _, states = controller_init(params, seed=0)
        self.states = states
        if lr is None:
            if not b_tr or not b_mt:
                raise ValueError("give either lr or both batch sizes")
            lr = b_tr / b_mt
        self.lr = lr
        self.n = n
        self.use_rnn_p = use_rnn_p
        dim = params.total_dim
        self.d_prev = np.zeros(dim)
        self.r_prev = np.zeros(dim)
        self.t = 0

    def step(self, x, y):
        op = CurvatureOperator(self.graph, self.params, x, y, self.loss_kind)
        loss = op.loss()
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {self.t}")
        g = op.gradient()
        d0, r0 = self.d_prev, self.r_prev
        out, self.states = controller_step(self.meta, self.states, self.params,
                                           d0, r0, g)
        s = out.s_data
        op.set_damping(s)
        p_diag = out.p_data if self.use_rnn_p else np.ones_like(s)
        res = pcg(g, op.apply, d0, DiagonalPreconditioner(p_diag), self.n, 0.0)
        d_n = res.x_data
        w = self.params.flatten() - self.lr * d_n
        self.params = self.params.unflatten(w)
        self.d_prev = d_n
        self.r_prev = res.r_data
        self.t += 1
        return TrainStepRecord(
            self.t, loss,
            dot_dg=float(np.dot(d_n, g)),
            res_norm=float(np.linalg.norm(res.r_data)),
            s_min=float(s.min()), s_max=float(s.max()),
            p_min=float(p_diag.min()), p_max=float(p_diag.max()),
            applications=op.applications)


# -- classic Hessian-Free baselines ----------------------------------------

@dataclass
class LmDampingState:
    lam: float
    decay: float = 2.0 / 3.0
    rho_low: float = 0.25
    rho_high: float = 0.75

    def update(self, rho):
        if rho > self.rho_high:
            self.lam *= self.decay
        elif rho < self.rho_low:
            self.lam /= self.decay
        if not self.lam > 0:
            raise ValueError("LM damping must stay positive")


class HfOptimizer:
    """Hessian-Free with uniform damping: fixed lambda, or adapted by the
    Levenberg-Marquardt heuristic when an LmDampingState is supplied."""

    def __init__(self, graph, params: ParamSet, loss_kind, lam=1.0, lr=1.0,
                 n=20, eps=1e-5, lm: LmDampingState | None = None):
        if lam <= 0:
            raise ValueError("damping must be positive")
        self.graph = graph
        self.params = params
        self.loss_kind = loss_kind
        self.lam = lam
        self.lr = lr
        self.n = n
        self.eps = eps
        self.lm = lm
        dim = params.total_dim
        self.d_prev = np.zeros(dim)
        self.t = 0

    def step(self, x, y):
        lam = self.lm.lam if self.lm is not None else self.lam
        dim = self.params.total_dim
        op = CurvatureOperator(self.graph, self.params, x, y, self.loss_kind,
                               damping=np.full(dim, lam))
        loss = op.loss()
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {self.t}")
        g = op.gradient()
        res = pcg(g, op.apply, self.d_prev, DiagonalPreconditioner.identity(dim),
                  self.n, self.eps)
        d_n = res.x_data
        step = -self.lr * d_n
        w0 = self.params.flatten()
        if self.lm is not None:
            # actual vs damped-quadratic-model predicted reduction for the
            # step actually taken
            predicted = float(np.dot(g, step) + 0.5 * np.dot(step, op.apply(step)))
            new_params = self.params.unflatten(w0 + step)
            z_new = self.graph.evaluate({**new_params.feeds(), "x": np.asarray(x, dtype=np.float64)})
            actual = loss_value(z_new, y, self.loss_kind) - loss
            if abs(predicted) > 1e-300:
                self.lm.update(actual / predicted)
            self.params = new_params
        else:
            self.params = self.params.unflatten(w0 + step)
        self.d_prev = d_n
        self.t += 1
        return TrainStepRecord(
            self.t, loss,
            dot_dg=float(np.dot(d_n, g)),
            res_norm=float(np.linalg.norm(res.r_data)),
            s_min=lam, s_max=lam, applications=op.applications)

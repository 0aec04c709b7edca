"""Truncated-BPTT meta-training of the damping and preconditioner
controllers.

A rollout replays T meta-learned training steps on a tape whose only
differentiable leaves are the controller meta-parameters.  Everything
the method declares gradient-stopped (the target parameters w^t, the
gradient g^t, the warm-start vectors d_0^t / r_0^t, the loss baseline
and the softmax weights of the step loss) enters as plain numpy, so
those paths are severed by construction.  Curvature products inside the
differentiable solver use the self-adjoint reverse rule, which keeps the
whole thing first-order.

A rollout can also be re-run in "frozen" mode, where the stopped
quantities are pinned to the values recorded by a base run.  That frozen
replay is exactly the function the tape differentiates, which is what
finite-difference checks must probe.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Var, custom_var, vdot, vsqrt
from .controllers import controller_init, controller_step
from .curvature import CurvatureOperator
from .models import ParamSet
from .optimizers import Adam
from .pcg import DiagonalPreconditioner, pcg


@dataclass
class FrozenStep:
    w: np.ndarray
    d0: np.ndarray
    r0: np.ndarray


@dataclass
class RolloutTrace:
    lp: Var = None
    ls: Var = None
    lp_terms: list = field(default_factory=list)
    ls_terms: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    dot_dg: list = field(default_factory=list)
    res_norms: list = field(default_factory=list)
    weights: np.ndarray = None
    frozen_steps: list = field(default_factory=list)
    tape_vars: dict = None
    # state to carry into the next window
    end_params: ParamSet = None
    end_states: object = None
    end_d: np.ndarray = None
    end_r: np.ndarray = None
    flagged: bool = False

    @property
    def lp_value(self):
        return float(self.lp.data)

    @property
    def ls_value(self):
        return float(self.ls.data)


def _loss_at(graph, params_template, loss_kind, x, y, w_var):
    """Mini-batch loss at tape-valued parameters.

    Forward is a plain evaluation; backward feeds the numeric parameter
    gradient, so no second-order terms ever enter the tape.
    """
    ps = params_template.unflatten(w_var.data)
    op = CurvatureOperator(graph, ps, x, y, loss_kind)
    loss = op.loss()
    grad = None

    def bwd(cot):
        nonlocal grad
        if grad is None:
            grad = op.gradient()
        return [float(cot) * grad]

    return custom_var(np.float64(loss), [w_var], bwd)


def rollout(graph, params: ParamSet, loss_kind, meta, states, batches,
            T, lr=1.0, n=4, use_rnn_p=True, lp_residual=False,
            d_prev=None, r_prev=None, frozen=None) -> RolloutTrace:
    """Run T differentiable meta-optimizer steps.

    batches must hold T+1 mini-batches; the extra one supplies the
    look-ahead term of the step loss at the window boundary.  When
    ``frozen`` is a list of FrozenStep plus the frozen softmax weights
    (as produced by a previous trace), the stopped quantities are pinned
    to those values instead of being carried forward.
    """
    if T < 1:
        raise ValueError("rollout needs T >= 1")
    if len(batches) < T + 1:
        raise ValueError("rollout needs T+1 batches")
    dim = params.total_dim
    tape_vars = {k: Var(a) for k, a in meta.arrays.items()}
    trace = RolloutTrace(tape_vars=tape_vars)
    w = params.flatten()
    d_prev = np.zeros(dim) if d_prev is None else d_prev
    r_prev = np.zeros(dim) if r_prev is None else r_prev
    ones = np.ones(dim)

    for t in range(T):
        if frozen is not None:
            step = frozen.frozen_steps[t]
            w, d0, r0 = step.w, step.d0, step.r0
        else:
            d0, r0 = d_prev, r_prev
            trace.frozen_steps.append(FrozenStep(w.copy(), d0.copy(), r0.copy()))
        x, y = batches[t]
        ps = params.unflatten(w)
        op = CurvatureOperator(graph, ps, x, y, loss_kind)
        loss = op.loss()
        if not np.isfinite(loss):
            trace.flagged = True
            break
        g = op.gradient()
        out, states = controller_step(meta, states, ps, d0, r0, g,
                                      tape_vars=tape_vars)
        s = out.s
        p_diag = out.p_diag if use_rnn_p else ones
        precond = DiagonalPreconditioner(p_diag)
        res = pcg(g, lambda v: op.apply_var(v, damping_var=s), Var(d0),
                  precond, n, 0.0)
        d_n, r_n = res.x, res.r
        # H-bar d_n = g - r_n: the curvature norm costs no extra product
        if lp_residual:
            lp_term = vdot(r_n, r_n)
        else:
            denom = vdot(d_n, g - r_n)
            if float(denom.data) <= 0.0:
                lp_term = None  # zero curvature norm; skip with diagnostic
            else:
                lp_term = (-1.0) * vdot(d_n, g) / vsqrt(denom)
        if lp_term is not None:
            trace.lp_terms.append(lp_term)
        w_next = (-lr) * d_n + w
        xn, yn = batches[t + 1]
        ls_t = (_loss_at(graph, params, loss_kind, xn, yn, w_next)
                + _loss_at(graph, params, loss_kind, x, y, w_next)
                - 2.0 * loss)
        trace.ls_terms.append(ls_t)
        trace.losses.append(loss)
        trace.dot_dg.append(float(np.dot(res.x_data, g)))
        trace.res_norms.append(float(np.linalg.norm(res.r_data)))
        w = w_next.data
        d_prev, r_prev = res.x_data, res.r_data
        states = states  # Vars; gradient flows through hidden state chain

    if trace.lp_terms:
        acc = trace.lp_terms[0]
        for term in trace.lp_terms[1:]:
            acc = acc + term
        trace.lp = acc * (1.0 / len(trace.lp_terms))
    else:
        trace.lp = Var(np.float64(0.0))
    if trace.ls_terms:
        vals = np.array([float(v.data) for v in trace.ls_terms])
        if frozen is not None:
            weights = frozen.weights
        else:
            e = np.exp(vals - vals.max())
            weights = e / e.sum()
        trace.weights = weights
        acc = trace.ls_terms[0] * weights[0]
        for wgt, term in zip(weights[1:], trace.ls_terms[1:]):
            acc = acc + term * wgt
        trace.ls = acc
    else:
        trace.ls = Var(np.float64(0.0))
        trace.weights = np.zeros(0)
    trace.end_params = params.unflatten(w)
    trace.end_states = states.detach() if hasattr(states, "detach") else states
    trace.end_d = d_prev
    trace.end_r = r_prev
    return trace


def loss_lp(trace: RolloutTrace) -> float:
    return trace.lp_value


def loss_ls(trace: RolloutTrace) -> float:
    return trace.ls_value


def _clear_grads(root: Var):
    stack, seen = [root], set()
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        node.grad = None
        stack.extend(node.parents)


def meta_gradients(trace: RolloutTrace):
    """BPTT gradients of (l_p, l_s) over the meta-parameter leaves.

    Returns (grads_p, grads_s): l_p differentiated w.r.t. the
    preconditioner controller only and l_s w.r.t. the damping controller
    only; the cross paths are severed here, before any update.
    """
    tv = trace.tape_vars
    _clear_grads(trace.lp)
    _clear_grads(trace.ls)
    trace.lp.backward()
    grads_p = {k: (np.zeros_like(v.data) if v.grad is None else np.array(v.grad))
               for k, v in tv.items() if k[0] == "p"}
    _clear_grads(trace.lp)
    _clear_grads(trace.ls)
    trace.ls.backward()
    grads_s = {k: (np.zeros_like(v.data) if v.grad is None else np.array(v.grad))
               for k, v in tv.items() if k[0] == "s"}
    return grads_p, grads_s


class MetaOptimizerState:
    """One Adam instance per controller over its flattened meta-params."""

    def __init__(self, meta, meta_lr=1e-3):
        self.keys = {c: sorted(meta.controller_keys(c)) for c in ("s", "p")}
        self.adam = {c: Adam(lr=meta_lr) for c in ("s", "p")}

    def _flat(self, meta, ctrl):
        return np.concatenate([meta.arrays[k].ravel() for k in self.keys[ctrl]])

    def apply(self, meta, ctrl, grads):
        flat_g = np.concatenate([grads[k].ravel() for k in self.keys[ctrl]])
        if not np.all(np.isfinite(flat_g)):
            return False  # skip update, caller logs
        flat_w = self.adam[ctrl].update(self._flat(meta, ctrl), flat_g)
        off = 0
        for k in self.keys[ctrl]:
            a = meta.arrays[k]
            meta.arrays[k] = flat_w[off:off + a.size].reshape(a.shape)
            off += a.size
        return True


def meta_update(meta, trace: RolloutTrace, state: MetaOptimizerState):
    """One severed Adam step per controller from a completed rollout."""
    grads_p, grads_s = meta_gradients(trace)
    ok_p = state.apply(meta, "p", grads_p)
    ok_s = state.apply(meta, "s", grads_s)
    return ok_p and ok_s


class ReplayBuffer:
    """FIFO buffer of episode starts, sampled uniformly."""

    def __init__(self, capacity, seed=0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.buf = deque(maxlen=capacity)
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return len(self.buf)

    def store(self, entry):
        self.buf.append(entry)

    def sample(self):
        if not self.buf:
            raise IndexError("sampling from empty replay buffer")
        return self.buf[int(self.rng.integers(len(self.buf)))]


class MetaTrainer:
    """Episode/window orchestration for controller meta-training."""

    def __init__(self, graph, make_params, loss_kind, meta, sample_batch,
                 T=10, n=4, lr=1.0, use_rnn_p=True, lp_residual=False,
                 windows_per_episode=25, replay_capacity=64, replay_prob=0.5,
                 meta_lr=1e-3, seed=0):
        self.graph = graph
        self.make_params = make_params  # seed -> fresh ParamSet
        self.loss_kind = loss_kind
        self.meta = meta
        self.sample_batch = sample_batch  # rng -> (x, y)
        self.T = T
        self.n = n
        self.lr = lr
        self.use_rnn_p = use_rnn_p
        self.lp_residual = lp_residual
        self.windows_per_episode = windows_per_episode
        self.replay = ReplayBuffer(replay_capacity, seed=seed + 1)
        self.replay_prob = replay_prob
        self.state = MetaOptimizerState(meta, meta_lr=meta_lr)
        self.rng = np.random.default_rng(seed)
        self._episode = None
        self.iteration = 0
        self.history = []  # (iteration, l_p, l_s)

    def _start_episode(self):
        if len(self.replay) > 0 and self.rng.random() < self.replay_prob:
            w0 = self.replay.sample()
            params = self._template().unflatten(w0)
        else:
            params = self.make_params(int(self.rng.integers(2 ** 31)))
            self.replay.store(params.flatten())
        _, states = controller_init(params, seed=0)
        dim = params.total_dim
        self._episode = {"params": params, "states": states,
                         "d": np.zeros(dim), "r": np.zeros(dim), "window": 0}

    def _template(self):
        return self.make_params(0)

    def step(self):
        """One meta-iteration: rollout a window, update both controllers."""
        if self._episode is None:
            self._start_episode()
        ep = self._episode
        batches = [self.sample_batch(self.rng) for _ in range(self.T + 1)]
        trace = rollout(self.graph, ep["params"], self.loss_kind, self.meta,
                        ep["states"], batches, self.T, lr=self.lr, n=self.n,
                        use_rnn_p=self.use_rnn_p, lp_residual=self.lp_residual,
                        d_prev=ep["d"], r_prev=ep["r"])
        if trace.flagged:
            self._episode = None  # divergence ends the episode
        else:
            meta_update(self.meta, trace, self.state)
            ep["params"] = trace.end_params
            ep["states"] = trace.end_states
            ep["d"] = trace.end_d
            ep["r"] = trace.end_r
            ep["window"] += 1
            if ep["window"] >= self.windows_per_episode:
                self._episode = None
        self.iteration += 1
        self.history.append((self.iteration, trace.lp_value, trace.ls_value))
        return trace

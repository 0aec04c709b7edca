"""Preconditioned conjugate gradient with a diagonal preconditioner.

One implementation serves two callers: plain numpy vectors for the
optimizers, and tape ``Var`` vectors for differentiable meta-training
(all vector algebra then lands on the tape; the iteration count and the
stopping test stay numeric).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Var, vdot

# The GGN is only PSD, so exactly zero curvature along a search direction
# is legitimate on degenerate batches; below this we stop and keep the
# current iterate (consistent with warm-start semantics).
BREAKDOWN_TINY = 1e-300


@dataclass
class DiagonalPreconditioner:
    diag: object  # flat positive vector (np.ndarray or Var)

    def __post_init__(self):
        d = self.diag.data if isinstance(self.diag, Var) else np.asarray(self.diag)
        if d.ndim != 1 or np.any(d <= 0):
            raise ValueError("preconditioner diagonal must be positive")

    def solve(self, r):
        return r / self.diag

    @staticmethod
    def identity(dim):
        return DiagonalPreconditioner(np.ones(dim))


@dataclass
class PCGResult:
    x: object            # approximate solution (np.ndarray or Var)
    r: object            # residual b - A x
    iterations_used: int
    breakdown: bool = False
    applications: int = 0  # calls made to the operator

    @property
    def x_data(self):
        return self.x.data if isinstance(self.x, Var) else self.x

    @property
    def r_data(self):
        return self.r.data if isinstance(self.r, Var) else self.r


def _num(v):
    return v.data if isinstance(v, Var) else v


def pcg(b, apply_a, x0, precond: DiagonalPreconditioner, n: int, eps: float) -> PCGResult:
    """Approximately solve A x = b from x0 with at most n operator calls
    past the initial residual.

    eps is the euclidean residual threshold for early stopping; eps = 0
    runs all n iterations.  Returns the iterate and the final residual
    (carried by callers as the next warm start).
    """
    if n < 0:
        raise ValueError("iteration cap must be >= 0")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    apps = 0
    x = x0
    r = b - apply_a(x0)
    apps += 1
    if n == 0:
        return PCGResult(x, r, 0, applications=apps)
    y = precond.solve(r)
    p = y
    rdoty = vdot(r, y)
    i = 0
    breakdown = False
    while i < n:
        rnorm = float(np.linalg.norm(_num(r)))
        if eps > 0 and rnorm < eps:
            break
        if float(_num(rdoty)) == 0.0:  # exact solution reached
            break
        ap = apply_a(p)
        apps += 1
        pap = vdot(p, ap)
        if float(_num(pap)) <= BREAKDOWN_TINY:
            breakdown = True
            break
        alpha = rdoty / pap
        x = x + alpha * p
        r = r - alpha * ap
        y = precond.solve(r)
        rdoty_next = vdot(r, y)
        beta = rdoty_next / rdoty
        p = y + beta * p
        rdoty = rdoty_next
        i += 1
    return PCGResult(x, r, i, breakdown=breakdown, applications=apps)

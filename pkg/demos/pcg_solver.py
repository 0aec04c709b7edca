"""Preconditioned conjugate gradient on a badly scaled SPD system.

Shows the three knobs the training loop relies on: iteration budget n,
warm starting from a previous solution, and a diagonal preconditioner.
With a perfect diagonal preconditioner the solver converges in one
iteration regardless of conditioning.
"""
import numpy as np

from natgrad import DiagonalPreconditioner, pcg

rng = np.random.default_rng(0)
d = 40

# diagonal-dominant system with a wide spread of scales
q, _ = np.linalg.qr(rng.standard_normal((d, d)))
eig = np.geomspace(1.0, 1e4, d)
A = (q * eig) @ q.T
b = rng.standard_normal(d)
xstar = np.linalg.solve(A, b)


def err(x):
    return np.linalg.norm(x - xstar) / np.linalg.norm(xstar)


print("identity preconditioner, cold start:")
for n in (5, 10, 20, 40):
    res = pcg(b, lambda v: A @ v, np.zeros(d),
              DiagonalPreconditioner.identity(d), n, eps=0.0)
    print(f"  n={n:3d}: relative error {err(res.x):.2e}")

print("\nwarm start from the n=10 solution (10 more iterations):")
res10 = pcg(b, lambda v: A @ v, np.zeros(d),
            DiagonalPreconditioner.identity(d), 10, eps=0.0)
resw = pcg(b, lambda v: A @ v, res10.x,
           DiagonalPreconditioner.identity(d), 10, eps=0.0)
print(f"  cold n=10 error {err(res10.x):.2e} -> warm +10 error {err(resw.x):.2e}")

print("\njacobi (exact diagonal) preconditioner on a diagonal system:")
D = np.diag(np.geomspace(1.0, 1e6, d))
bd = rng.standard_normal(d)
res = pcg(bd, lambda v: D @ v, np.zeros(d),
          DiagonalPreconditioner(np.diag(D)), n=d, eps=1e-12)
print(f"  converged in {res.iterations_used} iteration(s), "
      f"error {np.linalg.norm(res.x - bd / np.diag(D)):.2e}")

"""The Levenberg-Marquardt damping heuristic in action.

On an exactly quadratic objective the damped quadratic model predicts
the loss reduction perfectly (rho = 1), so lambda decays geometrically
by the configured 2/3 factor every step.  On the nonconvex spiral task
lambda instead wanders, growing whenever the model over-promises.
"""
import numpy as np

from natgrad import (BatchSampler, HfOptimizer, LmDampingState, LossKind,
                     ParamKind, ParamSet, build_model, load_dataset, mlp_spec)
from natgrad.autodiff import GraphBuilder

# exactly quadratic: linear model + mean squared error
d = 4
g = GraphBuilder()
x = g.input("x")
w = g.param("w")
graph = g.finalize(x @ w.reshape((d, 1)))
params = ParamSet([("w", ParamKind.FcWeight,
                    np.array([1.0, -2.0, 3.0, -4.0]))])

lm = LmDampingState(lam=1.0)
opt = HfOptimizer(graph, params, LossKind.MeanSquaredError, lr=1.0,
                  n=d, eps=0.0, lm=lm)
xb, yb = np.eye(d), np.zeros((d, 1))

print("quadratic objective (rho = 1 every step):")
for t in range(6):
    rec = opt.step(xb, yb)
    print(f"  step {t}: loss {rec.loss:.3e}  lambda {lm.lam:.4f}")
print(f"  lambda ratio per step: {2 / 3:.4f} (configured decay)\n")

print("spiral task (lambda adapts):")
ds = load_dataset({"kind": "spirals", "classes": 3, "seed": 0})
graph, params = build_model(mlp_spec((2, 16, 3)), seed=0)
lm = LmDampingState(lam=1.0)
opt = HfOptimizer(graph, params, LossKind.CrossEntropy, lm=lm)
sampler = BatchSampler(*ds.train(), 128, seed=0)
for t in range(60):
    rec = opt.step(*sampler())
    if t % 10 == 0:
        print(f"  step {t:2d}: loss {rec.loss:.4f}  lambda {lm.lam:.4f}")

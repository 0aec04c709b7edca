"""Train the spiral classifier four ways and compare loss trajectories.

SGD with momentum, Adam, classic Hessian-Free with Levenberg-Marquardt
damping, and the meta-learned second-order step (with freshly
initialized controllers, so both its outputs start at ln 2).  Run
demos/meta_train_controllers.py first to see what trained controllers
add on top.
"""
import numpy as np

from natgrad import (BatchSampler, FirstOrderTrainer, HfOptimizer,
                     LmDampingState, LossKind, MlhfOptimizer, SgdM, Adam,
                     build_model, controller_init, load_dataset, mlp_spec)

STEPS = 300
B = 128

ds = load_dataset({"kind": "spirals", "classes": 3, "seed": 0})
spec = mlp_spec((2, 16, 3))


def run(name, make_opt, seed=0):
    graph, params = build_model(spec, seed=seed)
    sampler = BatchSampler(*ds.train(), B, seed=seed)
    opt = make_opt(graph, params)
    losses = []
    for _ in range(STEPS):
        losses.append(opt.step(*sampler()).loss)
    xv, yv = ds.val()
    z = graph.evaluate({**opt.params.feeds(), "x": xv})
    acc = (z.argmax(axis=1) == yv).mean()
    print(f"{name:12s} loss {losses[0]:.3f} -> {np.mean(losses[-20:]):.3f}   "
          f"val acc {acc:.3f}")
    return losses


print(f"spirals, 2-16-3 MLP, batch {B}, {STEPS} steps\n")

run("sgdm", lambda g, p: FirstOrderTrainer(
    g, p, LossKind.CrossEntropy, SgdM(lr=0.3)))

run("adam", lambda g, p: FirstOrderTrainer(
    g, p, LossKind.CrossEntropy, Adam(lr=0.01)))

# classic Hessian-Free is a (near-)full-batch method; on tiny stochastic
# batches its LM heuristic trusts each mini-batch quadratic model too much
def run_hf_full_batch():
    graph, params = build_model(spec, seed=0)
    xt, yt = ds.train()
    opt = HfOptimizer(graph, params, LossKind.CrossEntropy,
                      lm=LmDampingState(lam=1.0))
    # equal samples_seen: STEPS * B mini-batch samples / full-batch size
    n_steps = STEPS * B // len(yt)
    losses = [opt.step(xt, yt).loss for _ in range(n_steps)]
    xv, yv = ds.val()
    z = graph.evaluate({**opt.params.feeds(), "x": xv})
    acc = (z.argmax(axis=1) == yv).mean()
    print(f"{'hf (lm)':12s} loss {losses[0]:.3f} -> {np.mean(losses[-10:]):.3f}   "
          f"val acc {acc:.3f}   ({n_steps} full-batch steps)")


run_hf_full_batch()


def mlhf(g, p):
    meta, _ = controller_init(p, seed=0)
    return MlhfOptimizer(g, p, LossKind.CrossEntropy, meta, b_tr=B, b_mt=64)


run("mlhf (raw)", mlhf)

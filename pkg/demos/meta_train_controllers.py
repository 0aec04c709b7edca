"""Meta-train the damping/preconditioner controllers, then use them.

Runs a few hundred truncated-BPTT meta-iterations on the spiral task,
reports the trend of both meta-losses, saves the controllers to a
checkpoint, and finally trains a fresh model with the result.
"""
import numpy as np

from natgrad import (BatchSampler, LossKind, MetaTrainer, MlhfOptimizer,
                     build_model, controller_init, load_dataset, mlp_spec,
                     save_meta_params)

ITERATIONS = 400
spec = mlp_spec((2, 16, 3))

ds = load_dataset({"kind": "spirals", "classes": 3, "seed": 0})
sampler = BatchSampler(*ds.train(), 64, seed=0)
graph, params0 = build_model(spec, seed=0)
meta, _ = controller_init(params0, seed=0)

trainer = MetaTrainer(graph, lambda s: build_model(spec, seed=s)[1],
                      LossKind.CrossEntropy, meta, lambda rng: sampler(),
                      T=10, n=4, seed=0)

print(f"meta-training for {ITERATIONS} iterations (T=10, n=4) ...")
for i in range(ITERATIONS):
    trainer.step()
    if (i + 1) % 100 == 0:
        lp = np.mean([h[1] for h in trainer.history[-100:]])
        ls = np.mean([h[2] for h in trainer.history[-100:]])
        print(f"  iter {i + 1:4d}: l_p (ma100) = {lp:+.4f}   "
              f"l_s (ma100) = {ls:+.4f}")

save_meta_params("controllers.ckpt", trainer.meta)
print("saved controllers.ckpt")

# spend the trained controllers on a fresh model (same batch size as
# meta-training keeps lr = b_tr/b_mt = 1, which they were trained for)
graph, params = build_model(spec, seed=42)
opt = MlhfOptimizer(graph, params, LossKind.CrossEntropy, trainer.meta,
                    b_tr=64, b_mt=64)
tr_sampler = BatchSampler(*ds.train(), 64, seed=1)
losses = [opt.step(*tr_sampler()).loss for _ in range(200)]
print(f"fresh model with trained controllers: "
      f"loss {losses[0]:.3f} -> {np.mean(losses[-20:]):.3f}")

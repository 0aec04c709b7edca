"""The differentiation engine underneath everything else.

A traced graph supports evaluation, reverse-mode gradients (vjp),
forward-mode directional derivatives (jvp), and their composition --
which is exactly how curvature-vector products are built.  The dynamic
tape (Var) differentiates code that was not traced ahead of time, and
accepts custom operators with hand-written backward rules.
"""
import numpy as np

from natgrad.autodiff import GraphBuilder, Var, custom_var

# -- static graph -----------------------------------------------------------
g = GraphBuilder()
x = g.input("x")
w = g.param("w")
graph = g.finalize(g.apply("tanh", [x @ w]))

rng = np.random.default_rng(0)
feeds = {"x": rng.standard_normal((4, 3)), "w": rng.standard_normal((3, 2))}

z = graph.evaluate(feeds)
print(f"traced graph output shape: {z.shape}")

bound = graph.bind(feeds)
u = rng.standard_normal(z.shape)
v = {"w": rng.standard_normal((3, 2)), "x": np.zeros((4, 3))}
lhs = np.sum(u * bound.jvp(v))
rhs = np.sum(bound.vjp(u)["w"] * v["w"])
print(f"adjoint identity <u, Jv> = <J'u, v>: {lhs:.10f} = {rhs:.10f}")

# -- dynamic tape -----------------------------------------------------------
a = Var(np.array([1.0, 2.0, 3.0]))
b = Var(np.array([0.5, -1.0, 2.0]))
loss = ((a * b + a) * (a * b + a)).sum()
loss.backward()
print(f"tape gradients: a.grad = {a.grad}, b.grad = {b.grad}")

# -- custom operator with a hand-written backward rule ----------------------
c = Var(np.array([2.0, 4.0]))
doubled = custom_var(2.0 * c.data, [c], lambda cot: [2.0 * cot])
doubled.sum().backward()
print(f"custom op gradient (expect [2, 2]): {c.grad}")

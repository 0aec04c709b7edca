import numpy as np
import pytest

from natgrad.autodiff import GraphBuilder, NonFiniteError
from natgrad.controllers import controller_init
from natgrad.models import LossKind, ParamKind, ParamSet
from natgrad.optimizers import (Adam, DivergenceError, FirstOrderTrainer,
                                HfOptimizer, LmDampingState, MlhfOptimizer,
                                RmsProp, SgdM)

from conftest import make_mlp


def _quadratic_model(diag):
    """z = x * w (x one-hot rows) with MSE targets 0 gives an exactly
    quadratic loss with a constant curvature diag(diag)/something simple."""
    d = len(diag)
    g = GraphBuilder()
    x = g.input("x")
    w = g.param("w")
    graph = g.finalize(x @ w.reshape((d, 1)))
    params = ParamSet([("w", ParamKind.FcWeight, np.zeros(d))])
    return graph, params


def _spiral_batch(seed=0, batch=16):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, 2))
    y = rng.integers(3, size=batch)
    return x, y


# -- first-order rules, closed-form oracles ---------------------------------

def test_sgdm_first_two_steps():
    rule = SgdM(lr=0.1, momentum=0.5)
    w = np.array([1.0])
    g = np.array([2.0])
    w = rule.update(w, g)
    assert w == pytest.approx(1.0 - 0.1 * 2.0)
    w = rule.update(w, g)
    # buffer: 0.5*2 + 2 = 3
    assert w == pytest.approx(0.8 - 0.1 * 3.0)


def test_adam_first_step_magnitude():
    rule = Adam(lr=0.01)
    w = rule.update(np.array([0.0]), np.array([5.0]))
    # bias correction makes the first step essentially lr * sign(g)
    assert w == pytest.approx(-0.01, rel=1e-6)


def test_rmsprop_first_step():
    rule = RmsProp(lr=0.1, decay=0.9, eps=0.0)
    w = rule.update(np.array([0.0]), np.array([4.0]))
    # sq = 0.1 * 16 = 1.6; step = lr * 4 / sqrt(1.6)
    assert w == pytest.approx(-0.1 * 4.0 / np.sqrt(1.6))


def test_first_order_trainer_descends():
    graph, params = make_mlp((2, 8, 3), seed=0)
    trainer = FirstOrderTrainer(graph, params, LossKind.CrossEntropy,
                                SgdM(lr=0.1))
    x, y = _spiral_batch()
    first = trainer.step(x, y).loss
    for _ in range(60):
        rec = trainer.step(x, y)
    assert rec.loss < first


def test_first_order_trainer_divergence_raises():
    # linear + MSE with an absurd lr oscillates with growing amplitude
    # until the loss overflows; the trainer must abort, not continue
    graph, params = _quadratic_model(np.ones(2))
    params = params.unflatten(np.array([1.0, 1.0]))
    trainer = FirstOrderTrainer(graph, params, LossKind.MeanSquaredError,
                                SgdM(lr=1e12, momentum=0.0))
    x = np.eye(2)
    y = np.zeros((2, 1))
    with pytest.raises((DivergenceError, NonFiniteError)), \
            np.errstate(over="ignore", invalid="ignore"):
        for _ in range(200):
            trainer.step(x, y)


# -- meta-learned second-order step -----------------------------------------

def test_mlhf_lr_is_batch_ratio():
    graph, params = make_mlp((2, 4, 3), seed=0)
    meta, _ = controller_init(params, seed=0)
    opt = MlhfOptimizer(graph, params, LossKind.CrossEntropy, meta,
                        b_tr=128, b_mt=64)
    assert opt.lr == 2.0
    opt = MlhfOptimizer(graph, params, LossKind.CrossEntropy, meta,
                        b_tr=32, b_mt=64)
    assert opt.lr == 0.5
    with pytest.raises(ValueError):
        MlhfOptimizer(graph, params, LossKind.CrossEntropy, meta)


def test_mlhf_cold_start_uses_zero_vectors():
    graph, params = make_mlp((2, 4, 3), seed=1)
    meta, _ = controller_init(params, seed=0)
    opt = MlhfOptimizer(graph, params, LossKind.CrossEntropy, meta, lr=1.0, n=4)
    assert np.all(opt.d_prev == 0.0)
    assert np.all(opt.r_prev == 0.0)
    x, y = _spiral_batch(1)
    rec = opt.step(x, y)
    # from a cold start the solution is a descent direction exactly
    assert rec.dot_dg >= 0.0
    assert not np.all(opt.d_prev == 0.0)


def test_mlhf_zero_input_is_fixed_point():
    """x = 0 kills both the GGN and the gradient; the step must not move."""
    d = 2
    graph, params = _quadratic_model(np.ones(d))
    params = params.unflatten(np.array([2.0, 4.0]))
    meta, _ = controller_init(params, seed=0)
    opt = MlhfOptimizer(graph, params, LossKind.MeanSquaredError, meta,
                        lr=1.0, n=d)
    rec = opt.step(np.zeros((1, d)), np.array([[0.0]]))
    assert np.allclose(opt.params.flatten(), [2.0, 4.0])
    assert rec.dot_dg == 0.0


def test_mlhf_pure_damping_step_closed_form():
    """One-hot inputs with batch 2 make the GGN diagonal; combined with
    the initial ln2 damping the first step is exactly
    w - lr * g / (diag + ln2)."""
    d = 2
    graph, params = _quadratic_model(np.ones(d))
    w0 = np.array([2.0, -4.0])
    params = params.unflatten(w0)
    meta, _ = controller_init(params, seed=0)
    opt = MlhfOptimizer(graph, params, LossKind.MeanSquaredError, meta,
                        lr=1.0, n=d)
    x = np.eye(d)
    y = np.zeros((d, 1))
    # loss = (w0^2 + w1^2) / (2*2); grad = w/2; GGN = I/2
    opt.step(x, y)
    expected = w0 - (w0 / 2.0) / (0.5 + np.log(2.0))
    assert np.allclose(opt.params.flatten(), expected, atol=1e-10)


def test_mlhf_descends_on_classification():
    graph, params = make_mlp((2, 8, 3), seed=2)
    meta, _ = controller_init(params, seed=0)
    opt = MlhfOptimizer(graph, params, LossKind.CrossEntropy, meta,
                        lr=1.0, n=4)
    x, y = _spiral_batch(3, batch=32)
    first = opt.step(x, y).loss
    for _ in range(40):
        rec = opt.step(x, y)
    assert rec.loss < first


def test_mlhf_operator_application_count():
    graph, params = make_mlp((2, 4, 3), seed=0)
    meta, _ = controller_init(params, seed=0)
    for n in (1, 2, 4):
        opt = MlhfOptimizer(graph, params, LossKind.CrossEntropy, meta,
                            lr=1.0, n=n)
        rec = opt.step(*_spiral_batch(2))
        assert rec.applications == n + 1


def test_mlhf_no_rnn_p_uses_identity_preconditioner():
    graph, params = make_mlp((2, 4, 3), seed=0)
    meta, _ = controller_init(params, seed=0)
    opt = MlhfOptimizer(graph, params, LossKind.CrossEntropy, meta,
                        lr=1.0, n=4, use_rnn_p=False)
    rec = opt.step(*_spiral_batch(2))
    assert rec.p_min == rec.p_max == 1.0


# -- classic Hessian-Free ---------------------------------------------------

def test_hf_newton_one_step_on_quadratic():
    """Linear model + MSE is exactly quadratic: an (almost) undamped
    exact solve recovers the minimum in one step."""
    d = 3
    graph, params = _quadratic_model(np.ones(d))
    params = params.unflatten(np.array([1.0, -2.0, 3.0]))
    opt = HfOptimizer(graph, params, LossKind.MeanSquaredError, lam=1e-12,
                      lr=1.0, n=d, eps=0.0)
    x = np.eye(d)
    y = np.zeros((d, 1))
    opt.step(x, y)
    assert np.allclose(opt.params.flatten(), 0.0, atol=1e-9)


def test_hf_large_damping_approaches_scaled_gradient():
    graph, params = make_mlp((2, 4, 3), seed=3)
    x, y = _spiral_batch(4)
    lam = 1e8
    opt = HfOptimizer(graph, params, LossKind.CrossEntropy, lam=lam,
                      lr=1.0, n=10, eps=0.0)
    w0 = params.flatten()
    rec = opt.step(x, y)
    moved = w0 - opt.params.flatten()
    # for lambda -> inf the step tends to g / lambda
    from natgrad.curvature import CurvatureOperator
    g = CurvatureOperator(graph, params.unflatten(w0), x, y,
                          LossKind.CrossEntropy).gradient()
    assert np.allclose(moved * lam, g, rtol=1e-5)


def test_hf_rejects_nonpositive_damping():
    graph, params = make_mlp((2, 4, 3), seed=0)
    with pytest.raises(ValueError):
        HfOptimizer(graph, params, LossKind.CrossEntropy, lam=0.0)


def test_lm_threshold_rules():
    st = LmDampingState(lam=1.0)
    st.update(0.9)          # good model fit -> decay
    assert st.lam == pytest.approx(2.0 / 3.0)
    st.update(0.1)          # poor fit -> grow
    assert st.lam == pytest.approx(1.0)
    before = st.lam
    st.update(0.5)          # middle band -> unchanged
    assert st.lam == before


def test_lm_geometric_decay_and_positivity():
    st = LmDampingState(lam=4.0)
    for k in range(1, 11):
        st.update(1.0)
        assert st.lam == pytest.approx(4.0 * (2.0 / 3.0) ** k)
        assert st.lam > 0


def test_hf_lm_rho_is_one_on_quadratic():
    """On an exactly quadratic objective with exact solves the quadratic
    model is exact, so lambda decays by the configured factor each step."""
    d = 3
    graph, params = _quadratic_model(np.ones(d))
    params = params.unflatten(np.array([1.0, -2.0, 3.0]))
    lm = LmDampingState(lam=1.0)
    opt = HfOptimizer(graph, params, LossKind.MeanSquaredError, lr=1.0,
                      n=d, eps=0.0, lm=lm)
    x = np.eye(d)
    y = np.zeros((d, 1))
    lams = [lm.lam]
    for _ in range(5):
        opt.step(x, y)
        lams.append(lm.lam)
    for a, b in zip(lams, lams[1:]):
        assert b == pytest.approx(a * 2.0 / 3.0)


def test_hf_warm_start_carries_direction():
    graph, params = make_mlp((2, 4, 3), seed=5)
    opt = HfOptimizer(graph, params, LossKind.CrossEntropy, lam=1.0, n=3)
    x, y = _spiral_batch(6)
    opt.step(x, y)
    d1 = opt.d_prev.copy()
    assert not np.all(d1 == 0.0)
    opt.step(x, y)
    assert not np.array_equal(opt.d_prev, d1)

"""Experiment runner: config handling, training loops, metrics CSV."""

from __future__ import annotations

import csv
import os
import time

import numpy as np
import yaml

from .checkpoint import save_meta_params, load_meta_params
from .controllers import LstmMetaParams, controller_init
from .datasets import BatchSampler, load_dataset
from .meta import MetaTrainer
from .models import (LossKind, MODEL_ZOO, ModelSpec, build_model)
from .optimizers import (Adam, FirstOrderTrainer, HfOptimizer,
                         LmDampingState, MlhfOptimizer, RmsProp, SgdM)

CSV_COLUMNS = ["step", "samples_seen", "wall_ms", "train_loss", "test_accuracy",
               "l_p", "l_s", "dot_dg", "res_norm", "s_min", "s_max",
               "p_min", "p_max"]

# the four ablation settings: (use_rnn_p, pcg iterations)
ABLATION_CONFIGS = {
    1: {"use_rnn_p": False, "n": 20},
    2: {"use_rnn_p": False, "n": 4},
    3: {"use_rnn_p": True, "n": 2},
    4: {"use_rnn_p": True, "n": 4},
}


class ConfigError(ValueError):
    pass


def load_config(path):
    try:
        with open(path) as f:
            cfg = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(str(e))
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a mapping")
    return cfg


def apply_overrides(cfg, overrides):
    """Apply repeatable ``key.path=value`` overrides (YAML-typed values)."""
    for ov in overrides or []:
        if "=" not in ov:
            raise ConfigError(f"override must look like key=value: {ov!r}")
        key, val = ov.split("=", 1)
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override through scalar at {p!r}")
        node[parts[-1]] = yaml.safe_load(val)
    return cfg


def _model_spec(cfg):
    m = cfg.get("model")
    if isinstance(m, str):
        if m not in MODEL_ZOO:
            raise ConfigError(f"unknown zoo model: {m}")
        return MODEL_ZOO[m]()
    if isinstance(m, dict):
        return ModelSpec.from_dict(m)
    raise ConfigError("config needs a model")


def _loss_kind(cfg):
    name = cfg.get("loss", "cross_entropy")
    for k in LossKind:
        if k.value == name:
            return k
    raise ConfigError(f"unknown loss: {name}")


class MetricsWriter:
    """Streams per-step CSV rows; float formatting is fixed so identical
    runs produce identical bytes (wall_ms is the one nondeterministic
    column)."""

    def __init__(self, path):
        self.f = open(path, "w", newline="")
        self.w = csv.writer(self.f)
        self.w.writerow(CSV_COLUMNS)
        self.t0 = time.monotonic()

    def row(self, step, samples_seen, **fields):
        vals = [str(step), str(samples_seen),
                str(int((time.monotonic() - self.t0) * 1000))]
        for col in CSV_COLUMNS[3:]:
            v = fields.get(col)
            vals.append("" if v is None or (isinstance(v, float) and not np.isfinite(v))
                        else repr(float(v)))
        self.w.writerow(vals)

    def close(self):
        self.f.close()


def _accuracy(graph, params, x, y):
    z = graph.evaluate({**params.feeds(), "x": x})
    return float((z.argmax(axis=1) == y).mean())


def _build_optimizer(cfg, graph, params, loss_kind, seed):
    name = cfg.get("optimizer", "sgdm")
    p = dict(cfg.get("optimizer_params") or {})
    if name == "sgdm":
        return FirstOrderTrainer(graph, params, loss_kind,
                                 SgdM(p.get("lr", 0.1), p.get("momentum", 0.9)))
    if name == "adam":
        return FirstOrderTrainer(graph, params, loss_kind,
                                 Adam(p.get("lr", 1e-3), p.get("beta1", 0.9),
                                      p.get("beta2", 0.999)))
    if name == "rmsprop":
        return FirstOrderTrainer(graph, params, loss_kind,
                                 RmsProp(p.get("lr", 1e-3), p.get("decay", 0.9)))
    if name in ("hf_fixed", "hf_lm"):
        lm = None
        if name == "hf_lm":
            lm = LmDampingState(p.get("lam", 1.0), p.get("decay", 2.0 / 3.0))
        return HfOptimizer(graph, params, loss_kind, lam=p.get("lam", 1.0),
                           lr=p.get("lr", 1.0), n=p.get("n", 20),
                           eps=p.get("eps", 1e-5), lm=lm)
    if name == "mlhf":
        ckpt = cfg.get("checkpoint")
        if ckpt and os.path.exists(ckpt):
            meta = load_meta_params(ckpt, LstmMetaParams)
        else:
            meta, _ = controller_init(params, seed=seed)
        mcfg = dict(cfg.get("meta") or {})
        _, states = controller_init(params, seed=seed)
        return MlhfOptimizer(graph, params, loss_kind, meta, states=states,
                             b_tr=cfg.get("b_tr", 128), b_mt=cfg.get("b_mt", 64),
                             n=mcfg.get("n", 4),
                             use_rnn_p=mcfg.get("use_rnn_p", True))
    raise ConfigError(f"unknown optimizer: {name}")


def run_train(cfg, out_dir, seed):
    """Train one target model; returns the metrics CSV path."""
    os.makedirs(out_dir, exist_ok=True)
    spec = _model_spec(cfg)
    loss_kind = _loss_kind(cfg)
    graph, params = build_model(spec, seed)
    data = load_dataset(cfg.get("dataset") or {"kind": "spirals"})
    xt, yt = data.train()
    xv, yv = data.val()
    b_tr = cfg.get("b_tr", 128)
    sampler = BatchSampler(xt, yt, b_tr, seed=seed)
    opt = _build_optimizer(cfg, graph, params, loss_kind, seed)
    steps = cfg.get("steps", 500)
    eval_every = cfg.get("eval_every", 50)
    path = os.path.join(out_dir, "metrics.csv")
    mw = MetricsWriter(path)
    try:
        for i in range(steps):
            x, y = sampler()
            rec = opt.step(x, y)
            acc = None
            if len(yv) and (i + 1) % eval_every == 0:
                acc = _accuracy(graph, opt.params, xv, yv)
            mw.row(rec.step, rec.step * b_tr, train_loss=rec.loss,
                   test_accuracy=acc, dot_dg=rec.dot_dg, res_norm=rec.res_norm,
                   s_min=rec.s_min, s_max=rec.s_max,
                   p_min=rec.p_min, p_max=rec.p_max)
    finally:
        mw.close()
    return path


def _make_meta_trainer(cfg, seed, use_rnn_p=None, n=None):
    spec = _model_spec(cfg)
    loss_kind = _loss_kind(cfg)
    graph, params0 = build_model(spec, seed)
    data = load_dataset(cfg.get("dataset") or {"kind": "spirals"})
    xt, yt = data.train()
    b_mt = cfg.get("b_mt", 64)
    sampler = BatchSampler(xt, yt, b_mt, seed=seed)
    mcfg = dict(cfg.get("meta") or {})
    meta, _ = controller_init(params0, seed=seed)

    def make_params(s):
        _, p = build_model(spec, s)
        return p

    return MetaTrainer(
        graph, make_params, loss_kind, meta,
        lambda rng: sampler(rng),
        T=mcfg.get("T", 10),
        n=mcfg.get("n", 4) if n is None else n,
        lr=mcfg.get("lr", 1.0),
        use_rnn_p=mcfg.get("use_rnn_p", True) if use_rnn_p is None else use_rnn_p,
        lp_residual=mcfg.get("lp_residual", False),
        windows_per_episode=mcfg.get("windows_per_episode", 25),
        replay_capacity=mcfg.get("replay_capacity", 64),
        replay_prob=mcfg.get("replay_prob", 0.5),
        meta_lr=mcfg.get("meta_lr", 1e-3),
        seed=seed)


def run_meta_train(cfg, out_dir, seed, csv_name="meta_metrics.csv",
                   use_rnn_p=None, n=None):
    """Meta-train the controllers; returns (csv path, meta params)."""
    os.makedirs(out_dir, exist_ok=True)
    trainer = _make_meta_trainer(cfg, seed, use_rnn_p=use_rnn_p, n=n)
    iterations = (cfg.get("meta") or {}).get("iterations", 500)
    b_mt = cfg.get("b_mt", 64)
    path = os.path.join(out_dir, csv_name)
    mw = MetricsWriter(path)
    try:
        for _ in range(iterations):
            trace = trainer.step()
            mw.row(trainer.iteration, trainer.iteration * trainer.T * b_mt,
                   train_loss=trace.losses[0] if trace.losses else None,
                   l_p=trace.lp_value, l_s=trace.ls_value,
                   dot_dg=trace.dot_dg[-1] if trace.dot_dg else None,
                   res_norm=trace.res_norms[-1] if trace.res_norms else None)
    finally:
        mw.close()
    ckpt = cfg.get("checkpoint")
    if ckpt:
        save_meta_params(ckpt, trainer.meta)
    return path, trainer.meta


def run_ablation(cfg, out_dir, seed):
    """Meta-train under the four preconditioner-ablation configurations;
    emits one metrics file per configuration."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for idx, ab in ABLATION_CONFIGS.items():
        path, _ = run_meta_train(cfg, out_dir, seed,
                                 csv_name=f"ablate_config{idx}.csv",
                                 use_rnn_p=ab["use_rnn_p"], n=ab["n"])
        paths.append(path)
    return paths


def run_experiment(cfg, mode, out_dir, seed):
    if mode == "train":
        return [run_train(cfg, out_dir, seed)]
    if mode == "meta-train":
        return [run_meta_train(cfg, out_dir, seed)[0]]
    if mode == "ablate":
        return run_ablation(cfg, out_dir, seed)
    raise ConfigError(f"unknown mode: {mode}")

"""The experiment harness end to end, driven through the CLI layer.

Writes a config, runs a short training job through the same code path
as `natgrad train`, charts the result, and inspects the checkpoint a
short meta-training run produced.  Everything lands in ./demo_out.
"""
import os

import yaml

from natgrad.cli import main

OUT = "demo_out"
os.makedirs(OUT, exist_ok=True)

cfg = {
    "model": "mlp_2_16_3",
    "dataset": {"kind": "spirals", "classes": 3},
    "optimizer": "sgdm",
    "optimizer_params": {"lr": 0.3},
    "b_tr": 128,
    "steps": 100,
    "eval_every": 20,
}
cfg_path = os.path.join(OUT, "train.yaml")
with open(cfg_path, "w") as f:
    yaml.safe_dump(cfg, f)

print("== natgrad train ==")
main(["train", "--config", cfg_path, "--out", OUT, "--seed", "0"])

print("\n== natgrad train --optimizer adam --override ... ==")
main(["train", "--config", cfg_path, "--out", os.path.join(OUT, "adam"),
      "--optimizer", "adam", "--override", "optimizer_params.lr=0.01"])

print("\n== natgrad plot ==")
main(["plot", os.path.join(OUT, "metrics.csv"),
      os.path.join(OUT, "adam", "metrics.csv"),
      "--metric", "train_loss", "--out", OUT])

print("\n== natgrad meta-train (short) ==")
meta_cfg = dict(cfg, b_mt=64, checkpoint=os.path.join(OUT, "controllers.ckpt"),
                meta={"T": 4, "n": 4, "iterations": 40})
meta_path = os.path.join(OUT, "meta.yaml")
with open(meta_path, "w") as f:
    yaml.safe_dump(meta_cfg, f)
main(["meta-train", "--config", meta_path, "--out", OUT])

print("\n== natgrad inspect-checkpoint (first lines) ==")
import io
import sys

buf = io.StringIO()
stdout = sys.stdout
sys.stdout = buf
main(["inspect-checkpoint", os.path.join(OUT, "controllers.ckpt")])
sys.stdout = stdout
print("\n".join(buf.getvalue().splitlines()[:6]))
print("...")

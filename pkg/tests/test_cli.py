import csv

import numpy as np
import pytest
import yaml

from natgrad.checkpoint import save_checkpoint
from natgrad.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, main
from natgrad.plots import emit_plot


def _write_cfg(tmp_path, name="c.yaml", **kw):
    cfg = {
        "model": "mlp_2_16_3",
        "dataset": {"kind": "spirals", "n_per_class": 60, "classes": 3},
        "optimizer": "sgdm",
        "optimizer_params": {"lr": 0.1},
        "b_tr": 16,
        "steps": 10,
    }
    cfg.update(kw)
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def test_train_exit_ok(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    rc = main(["train", "--config", cfg, "--out", str(tmp_path / "out")])
    assert rc == EXIT_OK
    out = capsys.readouterr().out.strip()
    assert out.endswith("metrics.csv")
    assert (tmp_path / "out" / "metrics.csv").exists()


def test_train_divergence_exit_code(tmp_path):
    cfg = _write_cfg(tmp_path, optimizer_params={"lr": 1e18}, steps=300,
                     model="mlp_2_16_2",
                     dataset={"kind": "blobs", "n_per_class": 30, "classes": 2},
                     loss="cross_entropy")
    with np.errstate(all="ignore"):
        rc = main(["train", "--config", cfg, "--out", str(tmp_path / "out")])
    # a linear-saturating net may refuse to blow up; accept either honest
    # completion or the divergence code, never a config error
    assert rc in (EXIT_OK, EXIT_DIVERGED)


def test_config_error_exit_code(tmp_path):
    rc = main(["train", "--config", str(tmp_path / "missing.yaml")])
    assert rc == EXIT_CONFIG
    cfg = _write_cfg(tmp_path, model="no_such_model")
    rc = main(["train", "--config", cfg, "--out", str(tmp_path / "out")])
    assert rc == EXIT_CONFIG


def test_optimizer_steps_and_override_flags(tmp_path):
    cfg = _write_cfg(tmp_path)
    out = tmp_path / "out"
    rc = main(["train", "--config", cfg, "--out", str(out),
               "--optimizer", "adam", "--steps", "3",
               "--override", "optimizer_params.lr=0.01"])
    assert rc == EXIT_OK
    with open(out / "metrics.csv") as f:
        rows = list(csv.reader(f))
    assert len(rows) == 1 + 3


def test_meta_train_subcommand(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, b_mt=16,
                     meta={"T": 2, "n": 2, "iterations": 3})
    rc = main(["meta-train", "--config", cfg, "--out", str(tmp_path / "out")])
    assert rc == EXIT_OK
    assert (tmp_path / "out" / "meta_metrics.csv").exists()


def test_ablate_subcommand(tmp_path):
    cfg = _write_cfg(tmp_path, b_mt=16,
                     meta={"T": 2, "n": 2, "iterations": 2})
    rc = main(["ablate", "--config", cfg, "--out", str(tmp_path / "out")])
    assert rc == EXIT_OK
    for i in (1, 2, 3, 4):
        assert (tmp_path / "out" / f"ablate_config{i}.csv").exists()


def test_plot_subcommand(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    out = tmp_path / "out"
    main(["train", "--config", cfg, "--out", str(out)])
    capsys.readouterr()
    rc = main(["plot", str(out / "metrics.csv"),
               "--metric", "train_loss", "--out", str(out)])
    assert rc == EXIT_OK
    files = capsys.readouterr().out.strip().splitlines()
    assert len(files) == 2  # one per x-axis
    assert (out / "train_loss_vs_samples_seen.svg").exists()
    assert (out / "train_loss_vs_wall_ms.svg").exists()


def test_plot_missing_metric_skipped(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    out = tmp_path / "out"
    main(["train", "--config", cfg, "--out", str(out)])
    capsys.readouterr()
    with pytest.warns(UserWarning, match="missing"):
        rc = main(["plot", str(out / "metrics.csv"),
                   "--metric", "train_loss", "--metric", "no_such_metric",
                   "--out", str(out)])
    assert rc == EXIT_OK
    files = capsys.readouterr().out.strip().splitlines()
    assert len(files) == 2


def test_plot_no_inputs_is_config_error(tmp_path):
    rc = main(["plot", str(tmp_path / "nope.csv"), "--metric", "train_loss",
               "--out", str(tmp_path)])
    assert rc == EXIT_CONFIG


def test_inspect_checkpoint(tmp_path, capsys):
    p = tmp_path / "c.ckpt"
    save_checkpoint(str(p), {"w": np.ones((2, 2))})
    rc = main(["inspect-checkpoint", str(p)])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "natgrad-checkpoint v1" in out
    assert "array w shape 2,2" in out


def test_inspect_checkpoint_missing_file(tmp_path):
    rc = main(["inspect-checkpoint", str(tmp_path / "nope.ckpt")])
    assert rc == EXIT_CONFIG


def test_emit_plot_series_per_csv(tmp_path):
    cfg = _write_cfg(tmp_path)
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    main(["train", "--config", cfg, "--out", str(out1)])
    main(["train", "--config", cfg, "--seed", "1", "--out", str(out2)])
    written = emit_plot([str(out1 / "metrics.csv"), str(out2 / "metrics.csv")],
                        ["train_loss"], str(tmp_path / "charts"))
    assert len(written) == 2

"""Command line interface: exit codes, precedence, outputs."""

import json

import pytest

from stclr.cli import main, resolve_config


def write_micro_config(path, out_dir, **extra):
    data = {
        "seed": 3, "preset": "tiny", "out_dir": str(out_dir), "folds": 2,
        "data": {"synthetic": {"classes": 2, "subjects": 4,
                                "videos_per_subject_per_class": 1,
                                "frames": 10, "height": 32, "width": 32}},
        "pretrain": {"epochs": 1, "batch_size": 4},
        "finetune": {"linear_epochs": 1, "full_epochs": 0, "batch_size": 4},
    }
    data.update(extra)
    path.write_text(json.dumps(data))
    return path


def test_usage_error_exit_code(capsys):
    assert main([]) == 2
    assert main(["not-a-command"]) == 2
    capsys.readouterr()


def test_missing_config_exit_code(capsys):
    assert main(["pretrain", "--config", "/nonexistent.json"]) == 1
    assert "error:" in capsys.readouterr().err


def test_invalid_config_value_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"tau": -2}))
    assert main(["pretrain", "--config", str(cfg)]) == 1
    assert "tau" in capsys.readouterr().err


def test_arch_dump_paper(capsys):
    assert main(["arch-dump", "--preset", "paper"]) == 0
    out = capsys.readouterr().out
    assert "[512, 1, 1, 1]" in out
    assert "1152, [1, 3, 3]" in out
    assert "31,300,125" in out


def test_arch_dump_tiny_variant(capsys):
    assert main(["arch-dump", "--preset", "tiny", "--variant", "full3d"]) == 0
    assert "Ada. Ave. Pool" in capsys.readouterr().out


def test_gradcheck_fast(capsys):
    assert main(["gradcheck", "--fast", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "batchnorm3d" in out
    assert "FAIL" not in out


def test_gen_data_writes_layout(tmp_path, capsys):
    out = tmp_path / "data"
    code = main(["gen-data", "--out", str(out), "--classes", "2",
                 "--subjects", "2", "--videos", "1", "--frames", "4",
                 "--height", "16", "--width", "16"])
    assert code == 0
    assert (out / "gen_params.csv").exists()
    assert len(list(out.glob("*/*/frame_00000.png"))) == 4
    capsys.readouterr()


def test_pretrain_echoes_config_and_writes_checkpoint(tmp_path, capsys):
    cfg = write_micro_config(tmp_path / "cfg.json", tmp_path / "run")
    assert main(["pretrain", "--config", str(cfg)]) == 0
    captured = capsys.readouterr()
    assert "final loss" in captured.out
    echoed = json.loads((tmp_path / "run" / "config.json").read_text())
    assert echoed["seed"] == 3
    assert (tmp_path / "run" / "pretrain.stck").exists()
    assert (tmp_path / "run" / "events.jsonl").exists()


def test_flag_overrides_file(tmp_path, capsys):
    cfg = write_micro_config(tmp_path / "cfg.json", tmp_path / "run")
    assert main(["pretrain", "--config", str(cfg), "--seed", "42",
                 "--out", str(tmp_path / "other")]) == 0
    echoed = json.loads((tmp_path / "other" / "config.json").read_text())
    assert echoed["seed"] == 42
    assert echoed["pretrain"]["batch_size"] == 4  # file value kept
    capsys.readouterr()


def test_env_workers_default(tmp_path, monkeypatch):
    import argparse

    monkeypatch.setenv("STCLR_NUM_WORKERS", "3")
    args = argparse.Namespace(config=None, seed=None, out=None, preset=None,
                              variant=None, tau=None, deterministic=False,
                              num_workers=None, data=None, epochs=None,
                              batch_size=None, linear_epochs=None,
                              full_epochs=None, folds=None)
    assert resolve_config(args).num_workers == 3
    monkeypatch.setenv("STCLR_NUM_WORKERS", "5")
    args.num_workers = 2  # explicit flag wins over the environment
    assert resolve_config(args).num_workers == 2


def test_finetune_uses_default_checkpoint_path(tmp_path, capsys):
    cfg = write_micro_config(tmp_path / "cfg.json", tmp_path / "run")
    assert main(["pretrain", "--config", str(cfg)]) == 0
    assert main(["finetune", "--config", str(cfg)]) == 0
    captured = capsys.readouterr()
    assert "held-out accuracy" in captured.out
    assert (tmp_path / "run" / "model.stck").exists()
    assert (tmp_path / "run" / "metrics.json").exists()
    assert (tmp_path / "run" / "metrics_confusion.csv").exists()


def test_eval_rejects_pretrain_checkpoint(tmp_path, capsys):
    cfg = write_micro_config(tmp_path / "cfg.json", tmp_path / "run")
    assert main(["pretrain", "--config", str(cfg)]) == 0
    code = main(["eval", "--config", str(cfg),
                 "--checkpoint", str(tmp_path / "run" / "pretrain.stck")])
    assert code == 1
    assert "classifier" in capsys.readouterr().err


def test_deterministic_flag_recorded(tmp_path, capsys):
    cfg = write_micro_config(tmp_path / "cfg.json", tmp_path / "run")
    assert main(["pretrain", "--config", str(cfg), "--deterministic"]) == 0
    echoed = json.loads((tmp_path / "run" / "config.json").read_text())
    assert echoed["deterministic"] is True
    assert echoed["num_workers"] == 1
    capsys.readouterr()

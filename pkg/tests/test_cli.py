"""Command-line behaviour: subcommands, exit codes, file outputs."""

import os
import textwrap

import pytest

from quadrun import cli


@pytest.fixture()
def tiny_config(tmp_path):
    """A config small enough to train end to end in a couple of seconds."""
    path = tmp_path / "exp.yaml"
    path.write_text(textwrap.dedent(f"""
        output_dir: {tmp_path}/run
        seed: 3
        terrain: flat
        total_steps: 128
        randomization:
          link_mass: false
          friction: false
          payload: false
        ppo:
          horizon: 64
          num_envs: 2
          minibatch_size: 32
          epochs: 2
          hidden: [16, 16]
          checkpoint_interval: 0
        eval:
          trials: 2
          duration_seconds: 0.5
        sweep:
          payloads: [0]
          frictions: []
          dt_scales: []
          workers: 2
    """))
    return path


def _train(tiny_config):
    rc = cli.main(["train", "--config", str(tiny_config)])
    assert rc == cli.EXIT_OK
    return str(tiny_config.parent / "run" / "checkpoint_final.bin")


def test_train_writes_outputs(tiny_config, capsys):
    checkpoint = _train(tiny_config)
    run_dir = os.path.dirname(checkpoint)
    assert os.path.exists(checkpoint)
    assert os.path.exists(os.path.join(run_dir, "metrics.csv"))
    assert os.path.exists(os.path.join(run_dir, "training_curves.svg"))
    out = capsys.readouterr().out
    assert "checkpoint:" in out


def test_eval_reports_table_row(tiny_config, tmp_path, capsys):
    checkpoint = _train(tiny_config)
    rc = cli.main(["eval", "--config", str(tiny_config),
                   "--checkpoint", checkpoint,
                   "--output-dir", str(tmp_path / "ev"),
                   "--label", "no-rand"])
    assert rc == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "condition, mean_distance_m, success_rate" in out
    assert "no-rand, " in out
    assert os.path.exists(tmp_path / "ev" / "eval_summary.csv")
    assert os.path.exists(tmp_path / "ev" / "eval_trials.csv")


def test_eval_without_checkpoint_is_config_error(tiny_config, capsys):
    rc = cli.main(["eval", "--config", str(tiny_config)])
    assert rc == cli.EXIT_CONFIG
    assert "checkpoint" in capsys.readouterr().err


def test_eval_on_garbage_checkpoint_is_config_error(tiny_config, tmp_path,
                                                    capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a checkpoint at all")
    rc = cli.main(["eval", "--config", str(tiny_config),
                   "--checkpoint", str(bad)])
    assert rc == cli.EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_sweep_emits_csv_and_svg(tiny_config, tmp_path, capsys):
    checkpoint = _train(tiny_config)
    out_dir = tmp_path / "sw"
    rc = cli.main(["sweep", "--config", str(tiny_config),
                   "--checkpoint", checkpoint,
                   "--output-dir", str(out_dir)])
    assert rc == cli.EXIT_OK
    for name in ("sweep_summary.csv", "sweep_trials.csv",
                 "velocity_traces.csv", "sweep_summary.svg",
                 "velocity_traces.svg", "state_torque_trace.csv",
                 "state_torque_trace.svg"):
        assert os.path.exists(out_dir / name), name
    assert "payload_0kg" in capsys.readouterr().out


def test_plot_command(tiny_config, tmp_path, capsys):
    _train(tiny_config)
    out = tmp_path / "curves.svg"
    rc = cli.main(["plot", "--kind", "training",
                   "--source", str(tiny_config.parent / "run"),
                   "--out", str(out)])
    assert rc == cli.EXIT_OK
    assert out.exists()


def test_plot_without_source_is_config_error(capsys):
    rc = cli.main(["plot", "--kind", "training"])
    assert rc == cli.EXIT_CONFIG


def test_plot_missing_file_is_config_error(tmp_path, capsys):
    rc = cli.main(["plot", "--kind", "sweep",
                   "--source", str(tmp_path / "nope.csv")])
    assert rc == cli.EXIT_CONFIG


def test_inspect_checkpoint(tiny_config, capsys):
    checkpoint = _train(tiny_config)
    capsys.readouterr()
    rc = cli.main(["inspect-checkpoint", checkpoint])
    assert rc == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "format version:  1" in out
    assert "observation dim: 64" in out
    assert "action dim:      12" in out


def test_unknown_config_key_is_config_error(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("terain: flat\n")
    rc = cli.main(["train", "--config", str(path)])
    assert rc == cli.EXIT_CONFIG
    assert "terain" in capsys.readouterr().err


def test_missing_config_file_is_config_error(tmp_path, capsys):
    rc = cli.main(["train", "--config", str(tmp_path / "absent.yaml")])
    assert rc == cli.EXIT_CONFIG


@pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
def test_divergent_training_exit_code(tmp_path, capsys):
    path = tmp_path / "exp.yaml"
    path.write_text(textwrap.dedent(f"""
        output_dir: {tmp_path}/run
        total_steps: 256
        randomization:
          link_mass: false
          friction: false
          payload: false
        ppo:
          learning_rate: 1.0e+200
          horizon: 64
          num_envs: 2
          minibatch_size: 32
          epochs: 2
          hidden: [16, 16]
          checkpoint_interval: 0
    """))
    rc = cli.main(["train", "--config", str(path)])
    assert rc == cli.EXIT_DIVERGED
    assert "diverged" in capsys.readouterr().err


def test_output_root_env_var(tiny_config, tmp_path, monkeypatch, capsys):
    root = tmp_path / "root"
    monkeypatch.setenv(cli.OUTPUT_ROOT_VAR, str(root))
    rc = cli.main(["train", "--config", str(tiny_config),
                   "--output-dir", "rel/run"])
    assert rc == cli.EXIT_OK
    assert (root / "rel" / "run" / "checkpoint_final.bin").exists()


def test_flag_overrides_reach_config(tiny_config):
    import argparse

    from quadrun.cli import _assemble_config, build_parser
    args = build_parser().parse_args(
        ["train", "--config", str(tiny_config), "--seed", "9",
         "--terrain", "rough", "--total-steps", "50000",
         "--no-randomization", "--learning-rate", "0.001",
         "--workers", "4"])
    assert isinstance(args, argparse.Namespace)
    cfg = _assemble_config(args)
    assert cfg.seed == 9
    assert cfg.terrain == "rough"
    assert cfg.total_steps == 50000
    assert not cfg.randomization.link_mass
    assert cfg.ppo.learning_rate == 0.001
    assert cfg.ppo.num_workers == 4
    assert cfg.ppo.horizon == 64      # kept from file

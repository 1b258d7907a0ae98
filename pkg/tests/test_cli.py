import pytest

from pclab import cli

FAST = ["--dataset", "digits", "--subset", "200", "--epochs", "1"]


def test_train_and_eval(tmp_path, capsys):
    out = str(tmp_path / "run")
    assert cli.main(["train", *FAST, "--algo", "pc-d", "--out", out]) == 0
    assert "best_top1" in capsys.readouterr().out
    assert cli.main(["eval", "--dataset", "digits", "--algo", "pc-d", "--out", out]) == 0
    assert "top1" in capsys.readouterr().out


def test_config_file(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("dataset: digits\narch: mlp-3\nhidden: 16\nepochs: 1\nsubset: 100\n")
    assert cli.main(["train", "--config", str(cfg)]) == 0


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("colour: red\n")
    assert cli.main(["train", "--config", str(cfg)]) == 2
    assert "colour" in capsys.readouterr().err


def test_argparse_error_exit_code():
    with pytest.raises(SystemExit) as e:
        cli.main(["train", "--algo", "nope"])
    assert e.value.code == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("dataset: digits\narch: mlp-4\nepochs: 1\nsubset: 64\nlr_x: 80.0\nT: 60\n")
    assert cli.main(["train", "--config", str(cfg)]) == 3
    assert "diverged" in capsys.readouterr().err


def test_missing_data_exit_code(tmp_path):
    assert cli.main(["train", "--dataset", "mnist", "--data-dir", str(tmp_path), "--epochs", "1"]) == 1


def test_eval_needs_checkpoint():
    assert cli.main(["eval", "--dataset", "digits"]) == 2


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck", "--nets", "4"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_sweep(tmp_path):
    out = tmp_path / "sw"
    assert cli.main(["sweep", *FAST, "--depths", "3", "--algos", "bp", "pc", "--seeds", "0",
                     "--out", str(out)]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("depth,algo,seed") and len(lines) == 3

import numpy as np
import pytest

from rankr_fnn.cli import EXIT_CHECK_FAILED, EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, int_tuple, main
from rankr_fnn.data import load_patch_set
from rankr_fnn.equivalence import Fcfnn
from rankr_fnn.serialize import load_model, save_fcfnn


def test_int_tuple():
    assert int_tuple("5,5,8") == (5, 5, 8)
    assert int_tuple("5x5x8") == (5, 5, 8)


def test_param_table(capsys, tmp_path):
    assert main(["param-table", "--out", str(tmp_path / "p.csv")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "pavia_university,5x5x103,9,rank_r,1,9150," in out
    assert "fully connected" in out
    assert (tmp_path / "p.csv").read_text().startswith("dataset,")


def test_synth_noise_train_eval_chain(tmp_path, capsys):
    data, noisy, model = tmp_path / "s.npz", tmp_path / "n.npz", tmp_path / "m.bin"
    assert main(["synth-data", "--n-per-class", "30", "--out", str(data)]) == EXIT_OK
    assert main(["noise", "--data", str(data), "--level", "0.2", "--seed", "3", "--out", str(noisy)]) == EXIT_OK
    clean, dirty = load_patch_set(data), load_patch_set(noisy)
    assert not np.array_equal(clean.patches, dirty.patches)
    rc = main(["train", "--data", str(noisy), "--rank", "2", "--hidden", "8", "--alpha", "20",
               "--epochs", "15", "--quiet", "--out", str(model)])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "params=312" in out
    assert load_model(model).config.rank == 2
    assert main(["eval", "--model", str(model), "--data", str(data)]) == EXIT_OK
    assert "accuracy=" in capsys.readouterr().out


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small run\nrank = 3\nhidden=4\nepochs=2\nquiet=true\nsynth-n-per-class=5\n")
    assert main(["train", "--config", str(cfg), "--rank", "1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "Rank-1 FNN" in out and "Q=4" in out and "epochs=2" in out


def test_required_option_from_config(tmp_path, capsys):
    save_fcfnn(Fcfnn.random(200, 2, 3), tmp_path / "f.bin")
    cfg = tmp_path / "eval.cfg"
    cfg.write_text(f"model={tmp_path / 'f.bin'}\nsynth_n_per_class=4\n")
    assert main(["eval", "--config", str(cfg)]) == EXIT_OK
    assert "FCFNN" in capsys.readouterr().out


def test_config_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_key=1\n")
    assert main(["train", "--config", str(cfg)]) == EXIT_INVALID
    cfg.write_text("rank=abc\n")
    assert main(["train", "--config", str(cfg)]) == EXIT_INVALID
    cfg.write_text("just a line\n")
    assert main(["train", "--config", str(cfg)]) == EXIT_INVALID
    assert main(["train", "--config", str(tmp_path / "missing.cfg")]) == EXIT_INVALID


def test_exit_codes(tmp_path, capsys):
    assert main(["train", "--rank", "0"]) == EXIT_INVALID
    assert main(["bogus"]) == EXIT_INVALID
    assert main(["eval", "--model", str(tmp_path / "missing.bin")]) == EXIT_INVALID
    rc = main(["train", "--learning-rate", "1e200", "--activation", "relu", "--hidden", "4",
               "--epochs", "20", "--quiet", "--synth-n-per-class", "10"])
    assert rc == EXIT_RUNTIME
    assert "diverged" in capsys.readouterr().err


def test_convert_fcfnn(tmp_path, capsys):
    src, out = tmp_path / "f.bin", tmp_path / "m.bin"
    rc = main(["convert-fcfnn", "--shape", "2,3,2", "--hidden", "3", "--classes", "2",
               "--save-source", str(src), "--out", str(out), "--trials", "200"])
    assert rc == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    assert load_model(out).config.rank == 4
    assert main(["convert-fcfnn", "--fcfnn", str(src), "--shape", "3,4"]) == EXIT_OK
    assert main(["convert-fcfnn", "--fcfnn", str(src), "--shape", "5,5"]) == EXIT_INVALID
    assert main(["convert-fcfnn", "--fcfnn", str(out), "--shape", "2,3,2"]) == EXIT_INVALID


def test_gradcheck(capsys):
    assert main(["gradcheck", "--trials", "3"]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    # a step this large cannot reach the tolerance
    assert main(["gradcheck", "--trials", "2", "--step", "0.5", "--tol", "1e-12"]) == EXIT_CHECK_FAILED


def test_experiment_and_compare(tmp_path, capsys):
    args = ["experiment", "--ranks", "1", "--hidden", "4", "--runs", "3", "--checkpoints", "2,4",
            "--synth-n-per-class", "20", "--quiet"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == EXIT_OK
    assert (tmp_path / "a" / "raw.csv").read_bytes() == (tmp_path / "b" / "raw.csv").read_bytes()
    rc = main(["compare", "--a", str(tmp_path / "a" / "aggregate.csv"), "--b", str(tmp_path / "b" / "aggregate.csv"),
               "--out", str(tmp_path / "c.csv")])
    assert rc == EXIT_OK
    assert (tmp_path / "c.csv").read_text().startswith("rank,checkpoint,p_welch,p_mwu,reject_5pct\n")


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "rankr_fnn", "param-table"], capture_output=True, text=True)
    assert res.returncode == 0 and "9150" in res.stdout


@pytest.mark.parametrize("cmd", ["train", "eval", "experiment", "param-table", "convert-fcfnn",
                                 "gradcheck", "synth-data", "noise", "compare"])
def test_every_subcommand_has_help(cmd, capsys):
    assert main([cmd, "--help"]) == EXIT_OK

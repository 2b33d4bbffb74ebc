import json

import numpy as np
import pytest

from rulnet.cli import main
from rulnet.cmapss_io import parse_rul_truth, parse_trajectories, read_table
from rulnet.nn.model import ModelConfig, init_params, load_checkpoint, save_checkpoint
from rulnet.pipeline import load_preprocessed

TINY_FLAGS = ["--filters1", "4", "--filters2", "6", "--hidden", "3", "--attention-units", "4",
              "--fc1-units", "5", "--fc2-units", "4", "--max-epochs", "2", "--batch-size", "64"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--out", str(root / "raw"), "--engines", "8", "--min-life", "60",
                 "--max-life", "90", "--seed", "7"]) == 0
    raw = root / "raw"
    assert main(["preprocess", "--train", str(raw / "train_SYN.txt"), "--test",
                 str(raw / "test_SYN.txt"), "--truth", str(raw / "RUL_SYN.txt"),
                 "--out", str(root / "pp")]) == 0
    assert main(["train", "--data", str(root / "pp"), "--out", str(root / "run"),
                 "--seed", "42", *TINY_FLAGS]) == 0
    return root


def test_generate_outputs_parse(workspace):
    raw = workspace / "raw"
    assert len(parse_trajectories(raw / "train_SYN.txt")) == 8
    assert len(parse_trajectories(raw / "test_SYN.txt")) == len(parse_rul_truth(raw / "RUL_SYN.txt"))
    manifest = json.loads((raw / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["command"] == "generate"


def test_generate_is_reproducible(workspace, tmp_path):
    main(["generate", "--out", str(tmp_path), "--engines", "8", "--min-life", "60",
          "--max-life", "90", "--seed", "7"])
    for name in ("train_SYN.txt", "test_SYN.txt", "RUL_SYN.txt"):
        assert (tmp_path / name).read_bytes() == (workspace / "raw" / name).read_bytes()


def test_invalid_flag_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as info:
        main(["generate", "--out", "x", "--engines", "zero"])
    assert info.value.code != 0
    assert "usage" in capsys.readouterr().err
    assert main(["generate", "--out", "x", "--min-life", "50", "--max-life", "10"]) == 1
    assert "usage" in capsys.readouterr().err


def test_preprocess_missing_input(tmp_path, capsys):
    missing = tmp_path / "nope.txt"
    assert main(["preprocess", "--train", str(missing), "--out", str(tmp_path / "o")]) == 1
    assert str(missing) in capsys.readouterr().err


def test_preprocess_metadata(workspace):
    meta = json.loads((workspace / "pp" / "preprocess_meta.json").read_text())
    data = load_preprocessed(workspace / "pp")
    assert meta["test_shape"] == [8, 30, data.selection.n_features]
    assert data.selection.n_features == 3 + 21 - 7


def test_train_is_deterministic(workspace, tmp_path):
    assert main(["train", "--data", str(workspace / "pp"), "--out", str(tmp_path),
                 "--seed", "42", *TINY_FLAGS]) == 0
    assert (tmp_path / "checkpoint.bin").read_bytes() == \
        (workspace / "run" / "checkpoint.bin").read_bytes()
    header, rows = read_table(tmp_path / "history.csv")
    assert header == ["epoch", "train_loss", "val_loss", "learning_rate", "seconds"]
    assert len(rows) == 2


def test_config_file_precedence(workspace, tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("# overrides\nlearning_rate = 0.01\nmax_epochs = 1\nhidden = 2\n")
    out = tmp_path / "run"
    flags = [f for f in TINY_FLAGS]
    flags[flags.index("--max-epochs") + 1] = "3"
    assert main(["train", "--data", str(workspace / "pp"), "--out", str(out),
                 "--config", str(cfg), *flags]) == 0
    _, meta = load_checkpoint(out / "checkpoint.bin")
    assert meta["train_config"]["learning_rate"] == 0.01     # from file
    assert meta["train_config"]["max_epochs"] == 3           # flag beats file
    assert meta["epochs_run"] == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["model"]["hidden"] == 3        # flag beats file
    cfg.write_text("bogus = 1\n")
    assert main(["train", "--data", str(workspace / "pp"), "--out", str(out),
                 "--config", str(cfg)]) == 1


def test_evaluate_and_explain(workspace):
    ev = workspace / "eval"
    assert main(["evaluate", "--checkpoint", str(workspace / "run" / "checkpoint.bin"),
                 "--data", str(workspace / "pp"), "--out", str(ev)]) == 0
    metrics = json.loads((ev / "metrics.json").read_text())
    assert {"rmse", "mae", "s_score", "r2", "mape"} <= set(metrics)
    header, rows = read_table(ev / "predictions.csv")
    assert header == ["unit", "true", "predicted", "error"] and len(rows) == 8

    ex = workspace / "explain"
    assert main(["explain", "--checkpoint", str(workspace / "run" / "checkpoint.bin"),
                 "--data", str(workspace / "pp"), "--train",
                 str(workspace / "raw" / "train_SYN.txt"), "--out", str(ex)]) == 0
    header, rows = read_table(ex / "attention.csv")
    assert len(header) == 33 and [r[0] for r in rows] == [1, 2, 3, 4, 5]
    for r in rows:
        assert abs(sum(r[1:31]) - 1.0) < 1e-9
    _, rows = read_table(ex / "profiles.csv")
    assert sorted({r[0] for r in rows}) == [1, 2, 3, 4, 5, 6]
    header, corr = read_table(ex / "correlation.csv")
    assert len(corr) == len(header) == 17
    assert len(read_table(ex / "residuals.csv")[1]) == 8


def test_explain_unknown_unit(workspace, tmp_path, capsys):
    rc = main(["explain", "--checkpoint", str(workspace / "run" / "checkpoint.bin"),
               "--data", str(workspace / "pp"), "--train", str(workspace / "raw" / "train_SYN.txt"),
               "--out", str(tmp_path / "x"), "--units", "1,99"])
    assert rc == 1
    err = capsys.readouterr().err
    assert "99" in err and "valid" in err
    assert not (tmp_path / "x").exists()


def test_evaluate_feature_mismatch_writes_nothing(workspace, tmp_path):
    params, meta = load_checkpoint(workspace / "run" / "checkpoint.bin")
    meta["feature_names"] = list(reversed(meta["feature_names"]))
    save_checkpoint(tmp_path / "bad.bin", params, meta)
    out = tmp_path / "out"
    assert main(["evaluate", "--checkpoint", str(tmp_path / "bad.bin"),
                 "--data", str(workspace / "pp"), "--out", str(out)]) == 1
    assert not out.exists()


def test_perfect_prediction_scores_zero(workspace, tmp_path):
    raw = workspace / "raw"
    n_test = len(parse_rul_truth(raw / "RUL_SYN.txt"))
    (tmp_path / "RUL.txt").write_text("200\n" * n_test)     # every label caps at 130
    pp = tmp_path / "pp"
    assert main(["preprocess", "--train", str(raw / "train_SYN.txt"), "--test",
                 str(raw / "test_SYN.txt"), "--truth", str(tmp_path / "RUL.txt"),
                 "--out", str(pp)]) == 0
    data = load_preprocessed(pp)
    params = init_params(ModelConfig(n_features=data.selection.n_features, filters1=2,
                                     filters2=2, hidden=2, attention_units=2), 0)
    params["out.kernel"] = np.zeros_like(params["out.kernel"])
    params["out.bias"] = np.array([130.0])
    save_checkpoint(tmp_path / "perfect.bin", params,
                    {"feature_names": list(data.selection.retained_feature_names), "window": 30})
    assert main(["evaluate", "--checkpoint", str(tmp_path / "perfect.bin"), "--data", str(pp),
                 "--out", str(tmp_path / "ev")]) == 0
    metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert metrics["rmse"] == 0.0 and metrics["s_score"] == 0.0
    assert metrics["r2"] is None

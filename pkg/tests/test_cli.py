import csv
import json

import pytest

from ignn.cli import (EXIT_CHECK_FAILED, EXIT_CONFIG_MISMATCH, EXIT_DIVERGED, EXIT_INVALID_DATA,
                      EXIT_MISSING_FILE, EXIT_OK, EXIT_USAGE, main)

TINY = ["--epochs", "3", "--hidden", "6", "--edge-hidden", "6", "--readout", "sum", "--num-layers", "2",
        "--splits", "30,10,10"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(out), "--n", "50", "--seed", "2"]) == EXIT_OK
    return out


def _files(d):
    return sorted(p.relative_to(d).as_posix() for p in d.rglob("*"))


def test_exit_codes_are_distinct():
    codes = [EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_MISSING_FILE, EXIT_CONFIG_MISMATCH, EXIT_INVALID_DATA,
             EXIT_DIVERGED]
    assert len(set(codes)) == len(codes)


def test_gradcheck_table(capsys):
    assert main(["gradcheck", "--seed", "7"]) == EXIT_OK
    out = capsys.readouterr().out
    for layer in ("input_embed", "gcn_step", "rgcn_step", "edge_network_forward", "mpnn_message", "gru_update",
                  "set2set_readout", "output_head", "li_loss", "graph_objective", "node_objective"):
        assert layer in out
    assert "FAIL" not in out


def test_bound_check(tmp_path, capsys):
    assert main(["bound-check", "--num-toys", "20", "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 1 and out[0].startswith("toys=20") and out[0].endswith("holds=yes")
    assert (tmp_path / "config.json").exists()


def test_gen_data_writes_config(data):
    assert {"config.json", "dataset.ignd"} <= set(_files(data))
    assert json.loads((data / "config.json").read_text())["spec"]["seed"] == 2


def test_lambda_zero_ignn_equals_mpnn(data, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--data", str(data), "--out", str(a), "--seed", "0", "--scheme", "ignn",
                 "--lambda", "0", *TINY]) == EXIT_OK
    assert main(["train", "--data", str(data), "--out", str(b), "--seed", "0", "--scheme", "mpnn", *TINY]) == EXIT_OK
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    rows = list(csv.DictReader(open(a / "metrics.csv")))
    assert [r["split"] for r in rows] == ["train", "val", "test"]
    assert set(rows[0]) == {"run_id", "split", "mae_0", "mae_mean", "nmae", "r_0"}


def test_train_is_idempotent_and_stays_in_out(data, tmp_path):
    before = _files(tmp_path)
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for o in outs:
        assert main(["train", "--data", str(data / "dataset.ignd"), "--out", str(o), "--seed", "3", *TINY]) == 0
    assert set(_files(tmp_path)) - set(before) == {f"{o.name}/{f}" for o in outs for f in _files(o)} | {
        o.name for o in outs}
    assert _files(outs[0]) == ["config.json", "metrics.csv", "model.ckpt", "run.jsonl", "timing.json"]
    for name in ("config.json", "metrics.csv", "model.ckpt", "run.jsonl"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_config_file_with_flag_override(data, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 4, "epochs": 2, "hidden": 6, "edge_hidden": [6], "readout": "sum",
                               "num_layers": 2, "splits": [30, 10, 10], "lr": 0.01}))
    out = tmp_path / "o"
    assert main(["train", "--data", str(data), "--out", str(out), "--config", str(cfg), "--lr", "0.002"]) == 0
    resolved = json.loads((out / "config.json").read_text())["train_config"]
    assert resolved["lr"] == 0.002 and resolved["seed"] == 4 and resolved["epochs"] == 2


def test_eval_matches_training_test_row(data, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--data", str(data), "--out", str(run), "--seed", "1", *TINY]) == 0
    ev = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--data", str(data), "--out", str(ev),
                 "--split", "test"]) == 0
    test_row = [r for r in csv.DictReader(open(run / "metrics.csv")) if r["split"] == "test"][0]
    ev_row = list(csv.DictReader(open(ev / "metrics.csv")))[0]
    assert test_row["mae_mean"] == ev_row["mae_mean"] and test_row["r_0"] == ev_row["r_0"]


def test_eval_without_checkpoint(data, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--data", str(data), "--out", str(out)]) == EXIT_MISSING_FILE
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.ckpt"), "--data", str(data),
                 "--out", str(out)]) == EXIT_MISSING_FILE
    assert not (out / "metrics.csv").exists()


def test_missing_dataset(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o"),
                 "--seed", "0"]) == EXIT_MISSING_FILE


def test_usage_errors(data, tmp_path):
    assert main(["train", "--data", str(data), "--out", str(tmp_path), "--seed", "0", "--bogus"]) == EXIT_USAGE
    assert main(["train", "--data", str(data), "--out", str(tmp_path), "--seed", "x"]) == EXIT_USAGE
    assert main(["train", "--data", str(data), "--out", str(tmp_path)]) == EXIT_USAGE   # no seed
    assert main(["frobnicate"]) == EXIT_USAGE


def test_fine_tune_architecture_mismatch(data, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--data", str(data), "--out", str(run), "--seed", "0", *TINY]) == 0
    ok = tmp_path / "ft"
    assert main(["fine-tune", "--checkpoint", str(run / "model.ckpt"), "--data", str(data), "--out", str(ok),
                 "--epochs", "1"]) == EXIT_OK
    assert (ok / "model.ckpt").exists()
    bad = tmp_path / "bad"
    assert main(["fine-tune", "--checkpoint", str(run / "model.ckpt"), "--data", str(data), "--out", str(bad),
                 "--hidden", "4"]) == EXIT_CONFIG_MISMATCH
    assert not (bad / "model.ckpt").exists()


def test_invalid_dataset(tmp_path):
    p = tmp_path / "broken.ignd"
    p.write_bytes(b"\x01{\"d_x\": 1}\n")
    assert main(["train", "--data", str(p), "--out", str(tmp_path / "o"), "--seed", "0"]) == EXIT_INVALID_DATA


def test_divergence(data, tmp_path):
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "o"), "--seed", "0", *TINY,
                 "--lr", "1e200"]) == EXIT_DIVERGED

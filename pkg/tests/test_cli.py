"""CLI behavior: exit codes, determinism, reports, eval consistency."""

import json

import numpy as np
import pytest

from f2ind.cli import main
from f2ind.data_model import read_embeddings


def run(argv, capsys=None):
    code = main(argv)
    return code


@pytest.fixture
def synth_file(tmp_path):
    path = tmp_path / "toy.f2e"
    code = main(
        [
            "synth", "--n", "60", "--fake-fraction", "0.25", "--missing-image-fraction", "0.2",
            "--separation", "6", "--seed", "5", "--text-dim", "24", "--image-dim", "10",
            "--out", str(path),
        ]
    )
    assert code == 0
    return path


def train_args(synth_file, out_dir, extra=()):
    return [
        "train", "--data", str(synth_file), "--out", str(out_dir),
        "--folds", "2", "--epochs", "2", "--batch-size", "8", "--hidden-a", "8", "--seed", "1",
        *extra,
    ]


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def test_synth_writes_readable_file(synth_file):
    ds = read_embeddings(synth_file)
    assert len(ds) == 60 and ds.text_dim == 24
    assert int(ds.labels().sum()) == 15


def test_synth_deterministic(tmp_path):
    a, b = tmp_path / "a.f2e", tmp_path / "b.f2e"
    argv = ["synth", "--n", "30", "--fake-fraction", "0.2", "--text-dim", "8", "--image-dim", "6", "--seed", "9"]
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_synth_bad_fraction_exit_2(tmp_path, capsys):
    code = main(["synth", "--n", "30", "--fake-fraction", "1.5", "--out", str(tmp_path / "x.f2e")])
    assert code == 2
    assert "--fake-fraction" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train / ablate
# ---------------------------------------------------------------------------


def test_train_report_shape(synth_file, tmp_path):
    out = tmp_path / "run"
    assert main(train_args(synth_file, out)) == 0
    payload = json.loads((out / "cv_report.json").read_text())
    assert payload["format_version"] == 1
    assert payload["variant"] == "with_anfis"
    assert len(payload["folds"]) == 2
    for fold in payload["folds"]:
        assert len(fold["metrics"]) == 8
        assert (tmp_path / "run" / f"fold_{fold['fold_index']}.f2ckpt").exists()
    assert payload["config"]["epochs"] == 2
    assert (out / "cv_report.txt").exists()


def test_train_no_anfis_variant(synth_file, tmp_path):
    out = tmp_path / "noanfis"
    assert main(train_args(synth_file, out, extra=("--no-anfis",))) == 0
    payload = json.loads((out / "cv_report.json").read_text())
    assert payload["variant"] == "without_anfis"
    assert payload["config"]["use_anfis"] is False


def test_train_epochs_zero_smoke(synth_file, tmp_path):
    out = tmp_path / "smoke"
    argv = train_args(synth_file, out)
    argv[argv.index("--epochs") + 1] = "0"
    assert main(argv) == 0
    payload = json.loads((out / "cv_report.json").read_text())
    assert payload["folds"][0]["best_epoch"] == -1


def test_train_deterministic_metrics(synth_file, tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(train_args(synth_file, out1)) == 0
    assert main(train_args(synth_file, out2)) == 0
    p1 = json.loads((out1 / "cv_report.json").read_text())
    p2 = json.loads((out2 / "cv_report.json").read_text())
    assert p1["folds"][0]["metrics"] == p2["folds"][0]["metrics"]
    assert p1["aggregate"] == p2["aggregate"]


def test_ablate_paired_report(synth_file, tmp_path):
    out = tmp_path / "abl"
    argv = train_args(synth_file, out)
    argv[0] = "ablate"
    assert main(argv) == 0
    paired = json.loads((out / "ablation_report.json").read_text())
    assert "with_anfis" in paired and "without_anfis" in paired
    diff = paired["with_anfis"]["param_count"] - paired["without_anfis"]["param_count"]
    n, f = 4, 2
    assert diff == (2 * n * f + f**n * (n + 1)) - (n + 1)
    assert (out / "with_anfis" / "cv_report.json").exists()
    assert (out / "without_anfis" / "cv_report.json").exists()


# ---------------------------------------------------------------------------
# config file
# ---------------------------------------------------------------------------


def test_config_file_with_unknown_key_exit_2(synth_file, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 1, "bogus_key": 3}))
    code = main(["train", "--config", str(cfg), "--data", str(synth_file), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "bogus_key" in capsys.readouterr().err


def test_config_file_flag_override(synth_file, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(
        json.dumps(
            {
                "k_folds": 2,
                "epochs": 5,
                "batch_size": 8,
                "hidden_a": 8,
                "seed": 1,
                "data": str(synth_file),
                "out": str(tmp_path / "from_cfg"),
            }
        )
    )
    assert main(["train", "--config", str(cfg), "--epochs", "1"]) == 0
    payload = json.loads((tmp_path / "from_cfg" / "cv_report.json").read_text())
    assert payload["config"]["epochs"] == 1  # flag beats file
    assert payload["config"]["batch_size"] == 8  # file beats default


def test_missing_data_flag_exit_2(tmp_path):
    assert main(["train", "--out", str(tmp_path / "o")]) == 2


def test_unreadable_data_exit_3(tmp_path):
    code = main(["train", "--data", str(tmp_path / "nope.f2e"), "--out", str(tmp_path / "o")])
    assert code == 3


# ---------------------------------------------------------------------------
# eval / predict / inspect
# ---------------------------------------------------------------------------


@pytest.fixture
def trained(synth_file, tmp_path):
    out = tmp_path / "trained"
    assert main(train_args(synth_file, out)) == 0
    payload = json.loads((out / "cv_report.json").read_text())
    return synth_file, out, payload


def test_eval_reproduces_fold_metrics(trained, tmp_path, capsys):
    synth_file, out, payload = trained
    fold = payload["folds"][0]
    idx_file = tmp_path / "val_idx.json"
    idx_file.write_text(json.dumps(fold["val_indices"]))
    eval_out = tmp_path / "eval.json"
    code = main(
        [
            "eval", "--checkpoint", fold["checkpoint"], "--data", str(synth_file),
            "--indices", f"@{idx_file}", "--batch-size", "8", "--out", str(eval_out),
        ]
    )
    assert code == 0
    report = json.loads(eval_out.read_text())
    assert report["metrics"] == fold["metrics"]


def test_predict_masked_sample_attention(trained, tmp_path, capsys):
    synth_file, out, payload = trained
    ds = read_embeddings(synth_file)
    masked = next(i for i, s in enumerate(ds.samples) if not s.has_image)
    code = main(
        [
            "predict", "--checkpoint", payload["folds"][0]["checkpoint"],
            "--data", str(synth_file), "--indices", str(masked),
        ]
    )
    assert code == 0
    line = [l for l in capsys.readouterr().out.splitlines() if not l.startswith(("#", "sample_id"))][0]
    sid, prob, a_img, a_txt = line.split("\t")
    assert int(sid) == ds.samples[masked].sample_id
    assert float(a_img) == 0.0 and float(a_txt) == 1.0
    assert 0.0 < float(prob) < 1.0


def test_inspect_rule_table(trained, tmp_path, capsys):
    synth_file, out, payload = trained
    code = main(
        ["inspect", "--checkpoint", payload["folds"][0]["checkpoint"], "--data", str(synth_file)]
    )
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    data_rows = [l for l in lines if not l.startswith("#") and not l.startswith("rule_index")]
    assert len(data_rows) == 16  # 2**4 rules
    total = sum(float(r.split("\t")[2]) for r in data_rows)
    assert abs(total - 1.0) < 1e-6  # mean normalized firing sums to 1


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


def test_gradcheck_cli_pass(capsys):
    code = main(
        ["gradcheck", "--seeds", "1", "--text-dim", "30", "--image-dim", "20",
         "--coords-per-block", "6", "--hidden-a", "8"]
    )
    assert code == 0
    assert "pass" in capsys.readouterr().out


def test_gradcheck_cli_fault_injection_exit_1(capsys):
    code = main(
        ["gradcheck", "--seeds", "1", "--text-dim", "30", "--image-dim", "20",
         "--coords-per-block", "6", "--hidden-a", "8", "--inject-fault", "anfis.intercepts"]
    )
    assert code == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "anfis.intercepts" in out

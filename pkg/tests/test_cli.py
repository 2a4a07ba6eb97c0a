import json

import numpy as np

from helo.cli import run
from helo.data import DMER_SCHEMA, WESAD_SCHEMA, load_dataset

SMALL = [
    "--set", "embed_dim=8",
    "--set", "heads=2",
    "--set", "ffn_dim=6",
    "--set", "head_hidden1=10",
    "--set", "head_hidden2=6",
    "--set", "tokens_per_modality=2",
    "--set", "batch_size=8",
]

def gen(tmp_path, schema="wesad", subjects=3, trials=6, seed=0, name="data.jsonl"):
    path = tmp_path / name
    assert (
        run(
            [
                "generate", "--schema", schema, "--subjects", str(subjects),
                "--trials", str(trials), "--seed", str(seed), "--out", str(path),
            ]
        )
        == 0
    )
    return path

def test_generate_line_count(tmp_path):
    path = gen(tmp_path, schema="dmer", subjects=2, trials=3)
    assert len(path.read_text().strip().splitlines()) == 6
    assert len(load_dataset(path, DMER_SCHEMA)) == 6

def test_generate_deterministic_bytes(tmp_path):
    a = gen(tmp_path, seed=4, name="a.jsonl").read_bytes()
    b = gen(tmp_path, seed=4, name="b.jsonl").read_bytes()
    assert a == b


def test_missing_required_flag_is_usage_error(capsys):
    assert run(["train"]) == 1
    assert "required" in capsys.readouterr().err


def test_unknown_flag_rejected():
    assert run(["generate", "--schema", "dmer", "--bogus", "1"]) == 1


def test_unknown_command_rejected():
    assert run(["explode"]) == 1


def test_validation_errors_exit_2(tmp_path):
    missing = tmp_path / "missing.jsonl"
    assert run(["train", "--data", str(missing), "--out-dir", str(tmp_path)]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"subject": 0}\n')
    assert run(["train", "--data", str(bad), "--out-dir", str(tmp_path)]) == 2


def test_train_evaluate_report_roundtrip(tmp_path):
    data = gen(tmp_path, subjects=3, trials=6, seed=1)
    out = tmp_path / "run"
    code = run(
        ["train", "--data", str(data), "--split", "subject-dependent",
         "--out-dir", str(out), "--epochs", "2", "--seed", "3", *SMALL]
    )
    assert code == 0
    assert (out / "history.csv").exists()
    assert (out / "checkpoint.json").exists()
    assert (out / "label_correlation.csv").exists()

    # evaluate reproduces the final-epoch test metrics recorded in history
    eval_csv = tmp_path / "eval_full.csv"
    code = run(
        ["evaluate", "--checkpoint", str(out / "checkpoint.json"),
         "--data", str(data), "--out", str(eval_csv), "--method", "full"]
    )
    assert code == 0
    hist_rows = [
        l for l in (out / "history.csv").read_text().splitlines()
        if l and not l.startswith(("#", "epoch"))
    ]
    final = [float(x) for x in hist_rows[-1].split(",")[2:]]
    eval_row = eval_csv.read_text().splitlines()[2].split(",")
    evaluated = [float(x) for x in eval_row[1:]]
    np.testing.assert_allclose(evaluated, final, atol=1e-12)

    second = tmp_path / "eval_b.csv"
    second.write_text(
        eval_csv.read_text().replace("full,", "variant_b,").replace("# ", "# b "),
    )
    table_csv = tmp_path / "ranks.csv"
    code = run(["report", str(eval_csv), str(second), "--out", str(table_csv)])
    assert code == 0
    text = table_csv.read_text()
    assert "average_rank" in text and "full" in text and "variant_b" in text


def test_train_loso_single_fold(tmp_path):
    data = gen(tmp_path, subjects=3, trials=4, seed=2)
    out = tmp_path / "loso"
    code = run(
        ["train", "--data", str(data), "--split", "loso", "--fold", "1",
         "--out-dir", str(out), "--epochs", "1", *SMALL]
    )
    assert code == 0
    assert (out / "fold_01" / "history.csv").exists()
    assert (out / "summary.csv").exists()


def test_train_byte_identical_runs(tmp_path):
    data = gen(tmp_path, subjects=2, trials=6, seed=5)
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert (
            run(
                ["train", "--data", str(data), "--out-dir", str(out),
                 "--epochs", "2", "--seed", "9", *SMALL]
            )
            == 0
        )
        outs.append(out)
    for artifact in ("history.csv", "checkpoint.json", "label_correlation.csv"):
        assert (outs[0] / artifact).read_bytes() == (outs[1] / artifact).read_bytes()


def test_config_file_with_flag_override(tmp_path):
    data = gen(tmp_path, subjects=2, trials=5, seed=6)
    cfg = tmp_path / "config.json"
    cfg.write_text(
        json.dumps(
            {
                "embed_dim": 8, "heads": 2, "ffn_dim": 6, "head_hidden1": 10,
                "head_hidden2": 6, "tokens_per_modality": 2, "batch_size": 8,
                "epochs": 7,
            }
        )
    )
    out = tmp_path / "cfgrun"
    assert (
        run(
            ["train", "--data", str(data), "--config", str(cfg),
             "--out-dir", str(out), "--epochs", "1"]
        )
        == 0
    )
    doc = json.loads((out / "checkpoint.json").read_text())
    assert doc["config"]["epochs"] == 1  # flag beats the config file
    assert doc["config"]["embed_dim"] == 8


def test_gradcheck_runs_with_diagnostics(tmp_path, capsys):
    diag = tmp_path / "sinkhorn.csv"
    assert run(["gradcheck", "--seed", "7", "--sinkhorn-csv", str(diag)]) == 0
    printed = capsys.readouterr().out
    assert "max relative gradient error" in printed
    assert float(printed.strip().rsplit(" ", 1)[1]) <= 1e-4
    lines = diag.read_text().splitlines()
    assert lines[0] == "iteration,violation"
    assert len(lines) > 1


def test_corrupted_checkpoint_exits_3(tmp_path):
    data = gen(tmp_path, subjects=2, trials=5, seed=7)
    out = tmp_path / "run3"
    assert run(["train", "--data", str(data), "--out-dir", str(out),
                "--epochs", "1", *SMALL]) == 0
    ckpt = out / "checkpoint.json"
    doc = json.loads(ckpt.read_text())
    doc["params"]["head.w1"]["data"][0] = float("nan")
    ckpt.write_text(json.dumps(doc))
    assert run(["evaluate", "--checkpoint", str(ckpt), "--data", str(data)]) == 3


def test_schema_file_path_flag(tmp_path):
    from helo.data import WESAD_SCHEMA, save_schema

    schema_path = tmp_path / "wesad_schema.json"
    save_schema(WESAD_SCHEMA, schema_path)
    path = tmp_path / "s.jsonl"
    assert run(["generate", "--schema", str(schema_path), "--subjects", "2",
                "--trials", "2", "--out", str(path)]) == 0
    assert len(path.read_text().strip().splitlines()) == 4

import json
import subprocess
import sys

import pytest

from filterprune.cli import main
from filterprune.harness import ExperimentConfig, OptimizerConfig
from filterprune.harness.config import ArchitectureConfig
from filterprune.models import build_resnet, save_checkpoint
from filterprune.pruning import PruningPlan


def run(capsys, *argv):
    """Run the CLI in-process; returns (exit code, stdout, stderr)."""
    try:
        code = main(list(argv))
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


def error_line(err):
    lines = [line for line in err.splitlines() if line.startswith("{")]
    assert len(lines) == 1
    payload = json.loads(lines[0])
    assert set(payload) == {"error", "message"}
    return payload


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "gen.json").write_text(json.dumps({"n_defective": 4, "n_clean": 4, "image_size": 64}))
    config = ExperimentConfig(
        architecture=ArchitectureConfig(depth=18, width_scale=0.0625, input_size=64),
        optimizer=OptimizerConfig(kind="adam", lr=1e-3),
        epochs=1, batch_size=4, augment_padding=4, dataset="data", k=2, repeats=1,
        pruning=PruningPlan(rounds=1, rate=0.3, fine_tune_epochs=1), output_dir=str(root / "out"),
    )
    (root / "exp.json").write_text(config.to_json())
    assert main(["gen-data", str(root / "gen.json"), str(root / "data")]) == 0
    return root


def test_gen_data_summary(workspace, capsys, tmp_path):
    code, out, _ = run(capsys, "gen-data", str(workspace / "gen.json"), str(tmp_path / "d"), "--seed", "2")
    assert code == 0
    assert json.loads(out)["counts"] == {"defective": 4, "non-defective": 4}


def test_train_eval_count_report(workspace, capsys):
    out_dir = workspace / "out" / "train"
    code, out, _ = run(capsys, "train", str(workspace / "exp.json"), "--out", str(out_dir), "--format", "table")
    assert code == 0 and "Mean acc (%)" in out
    assert (out_dir / "report.json").exists() and (out_dir / "checkpoints" / "r0_f1.ckpt").exists()

    code, out, _ = run(capsys, "eval", str(out_dir / "checkpoints" / "r0_f0.ckpt"), str(workspace / "data"))
    assert code == 0 and json.loads(out)["n"] == 8

    code, out, _ = run(capsys, "count", str(out_dir / "checkpoints" / "r0_f0.ckpt"))
    from_ckpt = json.loads(out)["total_params"]
    code, out, _ = run(capsys, "count", str(workspace / "exp.json"))
    assert code == 0 and json.loads(out)["total_params"] == from_ckpt

    code, out, _ = run(capsys, "report", str(workspace / "out"))
    assert code == 0 and isinstance(json.loads(out), list)


def test_prune_hard_shrinks(workspace, capsys):
    out_dir = workspace / "out" / "hard"
    code, out, _ = run(capsys, "prune", str(workspace / "exp.json"), "--method", "hard", "--out", str(out_dir))
    assert code == 0
    report = json.loads(out)
    assert report["method"] == "hard"
    assert report["pruned"][0]["cost"]["total_params"] < report["baseline_cost"]["total_params"]


def test_baseline(workspace, capsys):
    code, out, _ = run(capsys, "baseline", str(workspace / "data"), "--windows", "4", "8", "--thresholds", "0", "1e9")
    assert code == 0
    payload = json.loads(out)
    assert [w["window"] for w in payload["windows"]] == [4, 8]
    assert payload["best"]["accuracy"] == 0.5


def test_count_table(capsys, tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(save_checkpoint(build_resnet(18, 0.0625, (1, 32, 32), 2)))
    code, out, _ = run(capsys, "count", str(path), "--format", "table", "--per-layer")
    assert code == 0 and "stem.conv" in out and "Parameters" in out


@pytest.mark.parametrize("argv, kind", [
    (["count", "missing.json"], "FileNotFoundError"),
    (["report", "nowhere"], "ConfigurationError"),
    (["train", "bad.json"], "ConfigurationError"),
    (["eval", "bad.json", "bad.json"], "FormatError"),
    (["prune", "exp.json"], "UsageError"),
    (["frobnicate"], "UsageError"),
])
def test_failures_emit_error_line(argv, kind, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "bad.json").write_text("{not json")
    (tmp_path / "exp.json").write_text("{}")
    code, _, err = run(capsys, *argv)
    assert code != 0
    assert error_line(err)["error"] == kind


def test_bad_config_values(capsys, tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"k": 1}))
    code, _, err = run(capsys, "train", str(path))
    assert code == 1 and error_line(err)["error"] == "ConfigurationError"


def test_seed_changes_output(workspace, capsys, tmp_path):
    outs = []
    for seed in ("1", "1", "2"):
        code, out, _ = run(capsys, "gen-data", str(workspace / "gen.json"), str(tmp_path / seed), "--seed", seed)
        outs.append((tmp_path / seed / "images" / "img_0000.png").read_bytes())
    assert outs[0] == outs[1] != outs[2]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "filterprune", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for command in ("gen-data", "train", "prune", "eval", "count", "baseline", "report"):
        assert command in proc.stdout

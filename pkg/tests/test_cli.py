"""Command-line behavior: exit codes, config layering, artifact determinism.

Commands run in-process through main(argv); a small toy manifest is built
once per session.
"""

import json

import numpy as np
import pytest

from avrn import cli
from avrn import data as avdata


@pytest.fixture(scope="session")
def manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    pairs = avdata.make_toy_dataset(n_videos=5, n_steps=10, audio_dim=3,
                                    visual_dim=4, seed=21)
    return str(avdata.write_manifest(root, {"main": pairs}))


def _train_args(manifest, out, extra=()):
    return ["train", "--manifest", manifest, "--out", str(out),
            "--hidden-dim", "3", "--epochs", "2", "--lr", "0.01",
            "--seed", "0", *extra]


def test_no_command_prints_help_and_exits_config(capsys):
    assert cli.main([]) == 2
    assert "usage" in capsys.readouterr().out.lower()


def test_unknown_variant_is_rejected():
    with pytest.raises(SystemExit):  # argparse choices
        cli.main(["train", "--variant", "nope"])


def test_missing_manifest_is_config_error(tmp_path, capsys):
    assert cli.main(["train", "--out", str(tmp_path)]) == 2
    assert "manifest" in capsys.readouterr().err


def test_nonexistent_manifest_is_data_error(tmp_path, capsys):
    rc = cli.main(_train_args(str(tmp_path / "nope.json"), tmp_path / "runs"))
    assert rc == 3
    assert "missing manifest" in capsys.readouterr().err


def test_unknown_config_key_is_rejected(tmp_path, manifest, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 1, "bogus": True}))
    rc = cli.main(["train", "--manifest", manifest, "--config", str(cfg),
                   "--out", str(tmp_path / "runs")])
    assert rc == 2
    assert "bogus" in capsys.readouterr().err


def test_flags_override_config_file(tmp_path, manifest):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 4, "hidden_dim": 3, "learning_rate": 0.01}))
    out = tmp_path / "runs"
    rc = cli.main(["train", "--manifest", manifest, "--config", str(cfg),
                   "--epochs", "1", "--out", str(out)])
    assert rc == 0
    trace = json.loads((out / "split-1" / "trace.json").read_text())
    assert len(trace["trace"]["mean_losses"]) == 1  # flag won


def test_train_evaluate_summarize_pipeline(tmp_path, manifest):
    out = tmp_path / "runs"
    assert cli.main(_train_args(manifest, out)) == 0
    for k in range(1, 6):
        assert (out / f"split-{k}" / "checkpoint.avfs").exists()
        assert (out / f"split-{k}" / "trace.json").exists()
    assert (out / "splits.json").exists()

    rc = cli.main(["evaluate", "--manifest", manifest, "--out", str(out),
                   "--hidden-dim", "3", "--seed", "0", "--max-shots", "3"])
    assert rc == 0
    results = json.loads((out / "results.json").read_text())
    assert set(results) == {"videos", "splits", "overall"}
    assert len(results["splits"]) == 5
    assert 0.0 <= results["overall"]["f_measure"] <= 1.0
    csv_text = (out / "results.csv").read_text()
    assert csv_text.startswith("kind,split,video_id,variant")
    assert "\noverall," in csv_text

    vid = results["videos"][0]["video_id"]
    rc = cli.main(["summarize", "--manifest", manifest, "--out", str(out),
                   "--checkpoint", str(out / "split-1" / "checkpoint.avfs"),
                   "--video", vid, "--max-shots", "3"])
    assert rc == 0
    summary = json.loads((out / f"summary-{vid}.json").read_text())
    assert summary["video_id"] == vid
    assert summary["boundaries"][0] == 0
    curve = (out / f"curve-{vid}.csv").read_text().splitlines()
    assert curve[0] == "step,predicted,ground_truth"
    assert len(curve) == 11  # header + 10 steps


def test_artifacts_are_deterministic(tmp_path, manifest):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert cli.main(_train_args(manifest, out)) == 0
        assert cli.main(["evaluate", "--manifest", manifest, "--out", str(out),
                         "--hidden-dim", "3", "--seed", "0"]) == 0
    for rel in ("split-1/checkpoint.avfs", "split-3/checkpoint.avfs",
                "split-1/trace.json", "results.json", "results.csv", "splits.json"):
        assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes(), rel


def test_evaluate_without_checkpoints_is_data_error(tmp_path, manifest, capsys):
    rc = cli.main(["evaluate", "--manifest", manifest,
                   "--out", str(tmp_path / "empty")])
    assert rc == 3
    assert "checkpoint" in capsys.readouterr().err


def test_summarize_unknown_video_is_data_error(tmp_path, manifest, capsys):
    out = tmp_path / "runs"
    assert cli.main(_train_args(manifest, out)) == 0
    rc = cli.main(["summarize", "--manifest", manifest, "--out", str(out),
                   "--checkpoint", str(out / "split-1" / "checkpoint.avfs"),
                   "--video", "ghost"])
    assert rc == 3
    assert "ghost" in capsys.readouterr().err


def test_summarize_requires_video_and_checkpoint(manifest, tmp_path):
    assert cli.main(["summarize", "--manifest", manifest,
                     "--out", str(tmp_path)]) == 2


def test_gradcheck_passes_quickly(capsys):
    rc = cli.main(["gradcheck", "--coords", "4", "--seed", "0"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.count(": ok") == 7  # every variant


def test_gradcheck_corrupt_fails_with_exit_five(capsys):
    rc = cli.main(["gradcheck", "--coords", "4", "--seed", "0", "--corrupt"])
    assert rc == 5
    assert "FAIL" in capsys.readouterr().out


def test_bad_budget_is_config_error(manifest, tmp_path):
    assert cli.main(["train", "--manifest", manifest, "--budget", "1.5",
                     "--out", str(tmp_path)]) == 2


def test_config_file_must_be_json_object(tmp_path, manifest):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2]")
    assert cli.main(["train", "--manifest", manifest, "--config", str(cfg),
                     "--out", str(tmp_path / "r")]) == 2
    cfg.write_text("{broken")
    assert cli.main(["train", "--manifest", manifest, "--config", str(cfg),
                     "--out", str(tmp_path / "r")]) == 2

import json
from pathlib import Path

import numpy as np
import pytest

from aird.cli import main

TINY = [
    "--set", "data.num_ids=3",
    "--set", "data.samples_per_id=6",
    "--set", "data.test_samples_per_id=4",
    "--set", "teacher.blocks=4,8",
    "--set", "student.blocks=4,8",
    "--set", "teacher.embed_dim=16",
    "--set", "student.embed_dim=16",
    "--set", "train.epochs=2",
    "--set", "train.milestones=",
    "--set", "train.batch_size=8",
    "--set", "distill.n_neg=3",
    "--set", "distill.rel_dim=8",
    "--set", "eval.pair_count=30",
]


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Artifacts of a full tiny pipeline, shared across the CLI tests."""
    root = tmp_path_factory.mktemp("pipeline")
    assert run(["gen-data", "--out", root / "data", "--seed", 0, *TINY]) == 0
    assert run(["train-teacher", "--out", root / "teacher", "--data", root / "data", "--seed", 0, *TINY]) == 0
    assert (
        run(
            ["mine-pairs", "--out", root / "pairs", "--data", root / "data",
             "--teacher", root / "teacher" / "teacher.ckpt", "--seed", 0, *TINY]
        )
        == 0
    )
    for mode in ("aird", "vanilla_kd", "scratch_lr"):
        argv = ["distill", "--out", root / f"student-{mode}", "--data", root / "data", "--mode", mode, "--seed", 0, *TINY]
        if mode != "scratch_lr":
            argv += ["--teacher", root / "teacher" / "teacher.ckpt"]
        if mode == "aird":
            argv += ["--pairs", root / "pairs" / "pairs.bin"]
        assert run(argv) == 0
    assert (
        run(
            ["adapt", "--out", root / "adapted", "--data", root / "data",
             "--student", root / "student-aird" / "student.ckpt", "--seed", 0, *TINY]
        )
        == 0
    )
    for name, ckpt in [
        ("scratch", root / "student-scratch_lr" / "student.ckpt"),
        ("kd", root / "student-vanilla_kd" / "student.ckpt"),
        ("aird", root / "student-aird" / "student.ckpt"),
        ("aird_facebn", root / "adapted" / "adapted.ckpt"),
    ]:
        assert (
            run(["eval-verify", "--out", root / f"eval-{name}", "--data", root / "data", "--student", ckpt, "--seed", 0, *TINY])
            == 0
        )
    return root


class TestPipeline:
    def test_final_report_has_all_comparators(self, pipeline):
        final = {}
        for name in ("scratch", "kd", "aird", "aird_facebn"):
            report = json.loads((pipeline / f"eval-{name}" / "report.json").read_text())
            final[name] = report["accuracy"]
        (pipeline / "final_report.json").write_text(json.dumps(final, indent=1))
        assert set(final) == {"scratch", "kd", "aird", "aird_facebn"}
        assert all(0.0 <= v <= 1.0 for v in final.values())

    def test_manifests_record_config_and_checksums(self, pipeline):
        manifest = json.loads((pipeline / "data" / "run.json").read_text())
        assert manifest["command"] == "gen-data"
        assert manifest["seed"] == 0
        assert manifest["config"]["data.num_ids"] == 3
        assert set(manifest["artifacts"]) == {"manifest.json", "hr.f64", "lr.f64"}
        assert manifest["wall_time_s"] >= 0

    def test_adapt_diagnostics_written(self, pipeline):
        diag = json.loads((pipeline / "adapted" / "adapt_diagnostics.json").read_text())
        assert diag["layers"] and all("mean_shift_l2" in v for v in diag["layers"].values())

    def test_identify_verb(self, pipeline, tmp_path):
        code = run(
            ["eval-identify", "--out", tmp_path / "ident", "--data", pipeline / "data",
             "--student", pipeline / "student-aird" / "student.ckpt", "--seed", 0, *TINY]
        )
        assert code == 0
        report = json.loads((tmp_path / "ident" / "report.json").read_text())
        assert "1" in report["topk"] and "5" in report["topk"]

    def test_export_scores(self, pipeline, tmp_path):
        code = run(["export-scores", "--out", tmp_path / "scores", "--report", pipeline / "eval-aird" / "report.json"])
        assert code == 0
        lines = (tmp_path / "scores" / "scores.csv").read_text().strip().splitlines()
        assert lines[0] == "bin_lo,bin_hi,positive,negative"
        assert len(lines) == 101


class TestDeterminism:
    def test_gen_data_reproducible_checksums(self, tmp_path):
        assert run(["gen-data", "--out", tmp_path / "d1", "--seed", 5, *TINY]) == 0
        assert run(["gen-data", "--out", tmp_path / "d2", "--seed", 5, *TINY]) == 0
        m1 = json.loads((tmp_path / "d1" / "run.json").read_text())
        m2 = json.loads((tmp_path / "d2" / "run.json").read_text())
        assert m1["artifacts"] == m2["artifacts"]


class TestUsageErrors:
    def test_missing_teacher_checkpoint(self, tmp_path):
        assert run(["gen-data", "--out", tmp_path / "data", "--seed", 0, *TINY]) == 0
        code = run(
            ["distill", "--out", tmp_path / "st", "--data", tmp_path / "data",
             "--teacher", tmp_path / "missing" / "teacher.ckpt", "--seed", 0, *TINY]
        )
        assert code == 1

    def test_missing_teacher_message_names_checkpoint(self, tmp_path, capsys):
        run(["gen-data", "--out", tmp_path / "data", "--seed", 0, *TINY])
        capsys.readouterr()
        run(
            ["distill", "--out", tmp_path / "st", "--data", tmp_path / "data",
             "--teacher", tmp_path / "nope.ckpt", "--seed", 0, *TINY]
        )
        err = capsys.readouterr().err
        assert "teacher checkpoint" in err and "nope.ckpt" in err

    def test_unknown_verb(self):
        assert run(["frobnicate", "--out", "x"]) == 1

    def test_unknown_config_key(self, tmp_path):
        assert run(["gen-data", "--out", tmp_path / "d", "--set", "data.nope=4"]) == 1

    def test_existing_out_dir_refused_then_forced(self, tmp_path):
        assert run(["gen-data", "--out", tmp_path / "d", "--seed", 0, *TINY]) == 0
        assert run(["gen-data", "--out", tmp_path / "d", "--seed", 0, *TINY]) == 1
        assert run(["gen-data", "--out", tmp_path / "d", "--seed", 0, "--force", *TINY]) == 0


class TestConfigPrecedence:
    def test_cli_override_beats_config_file(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("data.num_ids = 4\ndata.samples_per_id = 6\ndata.test_samples_per_id = 2\n")
        assert (
            run(["gen-data", "--out", tmp_path / "d", "--config", cfg_file, "--set", "data.num_ids=5", "--seed", 1])
            == 0
        )
        manifest = json.loads((tmp_path / "d" / "run.json").read_text())
        assert manifest["config"]["data.num_ids"] == 5  # CLI wins
        assert manifest["config"]["data.samples_per_id"] == 6  # file beats default

    def test_seed_flag_overrides_config(self, tmp_path):
        assert run(["gen-data", "--out", tmp_path / "d", "--seed", 9, *TINY]) == 0
        manifest = json.loads((tmp_path / "d" / "run.json").read_text())
        assert manifest["seed"] == 9

    def test_out_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("AIRD_OUT_ROOT", str(tmp_path))
        assert run(["gen-data", "--out", "rel-dir", "--seed", 0, *TINY]) == 0
        assert (tmp_path / "rel-dir" / "run.json").exists()

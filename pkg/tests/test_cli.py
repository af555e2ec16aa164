"""Command-line pipeline: exit codes, artifacts, end-to-end determinism."""

import json

import pytest

from primdetect.cli import main

SPEC = {
    "counts": {"sphere": 1, "plane": 1},
    "noise_sigma": 0.0,
    "width": 100,
    "height": 100,
    "rng_seed": 23,
    "size_range": [0.08, 0.12],
}


@pytest.fixture
def scene_dir(tmp_path):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(SPEC))
    out = tmp_path / "scene"
    assert main(["generate", "--spec", str(spec_path), "--out", str(out)]) == 0
    return out


class TestPipeline:
    def test_generate_detect_evaluate(self, scene_dir, tmp_path):
        report = tmp_path / "report.json"
        code = main([
            "detect", str(scene_dir / "cloud.ply"), "--out", str(report),
            "--seed", "7", "--refs", "256", "--pairs", "512",
            "--labels", str(tmp_path / "labels.csv"),
        ])
        assert code == 0
        assert report.exists()
        assert (tmp_path / "labels.csv").exists()
        out = tmp_path / "eval"
        code = main([
            "evaluate", "--cloud", str(scene_dir / "cloud.ply"),
            "--gt", str(scene_dir / "groundtruth.json"),
            "--report", str(report), "--out", str(out),
        ])
        assert code == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["recall"] == 1.0
        assert (out / "curves.csv").read_text().startswith("epsilon,p_coverage,s_coverage")

    def test_sphere_only_detection_on_plane_cloud(self, tmp_path):
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({
            "counts": {"plane": 1}, "width": 100, "height": 100,
            "rng_seed": 3, "size_range": [0.10, 0.14],
        }))
        scene = tmp_path / "scene"
        assert main(["generate", "--spec", str(spec_path), "--out", str(scene)]) == 0
        report = tmp_path / "report.json"
        code = main([
            "detect", str(scene / "cloud.ply"), "--out", str(report),
            "--types", "sphere", "--refs", "256", "--pairs", "512",
        ])
        assert code == 0
        data = json.loads(report.read_text())
        assert data["primitives"] == []

    def test_determinism_byte_identical(self, scene_dir, tmp_path):
        outputs = []
        for run in ("a", "b"):
            report = tmp_path / f"report_{run}.json"
            assert main([
                "detect", str(scene_dir / "cloud.ply"), "--out", str(report),
                "--seed", "11", "--refs", "256", "--pairs", "512",
            ]) == 0
            outputs.append(report.read_bytes())
        assert outputs[0] == outputs[1]

    def test_dump_accumulators(self, scene_dir, tmp_path):
        report = tmp_path / "report.json"
        acc_dir = tmp_path / "acc"
        assert main([
            "detect", str(scene_dir / "cloud.ply"), "--out", str(report),
            "--refs", "64", "--pairs", "128", "--dump-acc", str(acc_dir),
        ]) == 0
        for name in ("plane.csv", "sphere.csv", "cylinder.csv", "cone.csv"):
            assert (acc_dir / name).exists()

    def test_ablation_flags_accepted(self, scene_dir, tmp_path):
        for flag in ("--no-spread", "--no-bin-avg", "--nms-cluster"):
            report = tmp_path / f"r{flag}.json"
            assert main([
                "detect", str(scene_dir / "cloud.ply"), "--out", str(report),
                "--refs", "128", "--pairs", "256", flag,
            ]) == 0

    def test_bench_smoke(self, scene_dir, capsys):
        assert main(["bench", str(scene_dir / "cloud.ply"), "--repeats", "1"]) == 0
        out = capsys.readouterr().out
        assert "joint" in out and "voting" in out

    def test_bench_compares_backends(self, scene_dir, capsys):
        assert main([
            "bench", str(scene_dir / "cloud.ply"), "--repeats", "1", "--backend", "both",
        ]) == 0
        out = capsys.readouterr().out
        assert "[numba] joint" in out and "[numpy] joint" in out


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self):
        assert main(["detect", "--definitely-not-a-flag"]) == 1

    def test_missing_subcommand(self):
        assert main([]) == 1

    def test_missing_file_is_io_error(self, tmp_path):
        assert main(["detect", str(tmp_path / "nope.ply"), "--out", "r.json"]) == 2

    def test_malformed_cloud_is_validation_error(self, tmp_path):
        bad = tmp_path / "bad.xyzn"
        bad.write_text("1 2 3\n")
        assert main(["detect", str(bad), "--out", str(tmp_path / "r.json")]) == 3

    def test_bad_scene_spec_is_validation_error(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"counts": {}}))
        assert main(["generate", "--spec", str(spec), "--out", str(tmp_path / "s")]) == 3

    def test_bad_types_value(self, scene_dir, tmp_path):
        assert main([
            "detect", str(scene_dir / "cloud.ply"),
            "--out", str(tmp_path / "r.json"), "--types", "torus",
        ]) == 3

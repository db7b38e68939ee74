import json
import subprocess
import sys

import pytest

from did_geom.cli import run


def tree(path):
    """Bytes of every file under ``path`` except run manifests."""
    return {
        p.relative_to(path).as_posix(): p.read_bytes()
        for p in sorted(path.rglob("*"))
        if p.is_file() and not p.name.endswith("manifest.json")
    }


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, grids = root / "data", root / "grids"
    assert run(["synth", "--seed", "7", "--objects", "5", "--frames", "2", "--perfect-dets", "--out", str(data)]) == 0
    assert run(["gen-labels", "--data", str(data), "--grid", "7x7", "--out", str(grids)]) == 0
    return root, data, grids


class TestPipeline:
    def test_five_records_per_frame(self, pipeline):
        _, data, grids = pipeline
        for fid in ("000000", "000001"):
            rec = json.loads((grids / f"{fid}.json").read_text())
            assert len(rec["objects"]) == 5
            assert all(o["grid"]["shape"] == [7, 7] for o in rec["objects"])
        assert (data / "manifest.json").exists() and (grids / "manifest.json").exists()

    def test_manifest_fields(self, pipeline):
        _, data, _ = pipeline
        m = json.loads((data / "manifest.json").read_text())
        assert m["subcommand"] == "synth" and m["seed"] == 7
        assert {"config", "inputs", "outputs", "tool_version", "duration_s"} <= set(m)

    def test_idempotent(self, pipeline, tmp_path):
        _, data, grids = pipeline
        again_d, again_g = tmp_path / "d", tmp_path / "g"
        assert run(["synth", "--seed", "7", "--objects", "5", "--frames", "2", "--perfect-dets", "--out", str(again_d)]) == 0
        assert run(["gen-labels", "--data", str(again_d), "--out", str(again_g), "--jobs", "2"]) == 0
        assert tree(again_d) == tree(data)
        assert tree(again_g) == tree(grids)

    def test_eval_perfect(self, pipeline, capsys):
        root, data, _ = pipeline
        out = root / "report.json"
        assert run(["eval", "--gt", str(data), "--det", str(data / "det_2"), "--out", str(out)]) == 0
        table = capsys.readouterr().out
        assert "100.00" in table
        rows = json.loads(out.read_text())["results"]
        assert all(r["ap40"] == 1.0 for r in rows if not r["undefined"])
        assert (root / "report.manifest.json").exists()

    def test_augment_and_fuse(self, pipeline, tmp_path, capsys):
        _, data, grids = pipeline
        aug = tmp_path / "aug"
        assert run(["augment", "--in", str(grids), "--out", str(aug), "--seed", "3", "--flip-prob", "0.5"]) == 0
        rec = json.loads((aug / "000000.json").read_text())
        assert rec["transforms"][0]["kind"] == "affine"

        unc = tmp_path / "u.json"
        unc.write_text(json.dumps({"default": {"u_vis": 0.5, "u_att": 0.2, "p2d": 0.9}}))
        fused, dets = tmp_path / "fused", tmp_path / "dets"
        args = ["fuse", "--labels", str(grids), "--uncertainty", str(unc), "--out", str(fused), "--kitti-out", str(dets)]
        assert run(args) == 0
        out = json.loads((fused / "000000.json").read_text())
        bundle = json.loads((grids / "000000.json").read_text())
        for rec, obj in zip(out["objects"], bundle["objects"]):
            # clean labels: every valid cell reconstructs the same depth
            assert rec["d_ins"] == pytest.approx(obj["grid"]["instance_depth"], abs=1e-9)
            assert 0 < rec["score"] <= 0.9
        # recovered boxes evaluate as perfect detections
        report = tmp_path / "r.json"
        assert run(["eval", "--gt", str(data), "--det", str(dets), "--metric", "3d", "--out", str(report)]) == 0
        assert all(r["ap40"] == 1.0 for r in json.loads(report.read_text())["results"] if not r["undefined"])


class TestErrors:
    def test_gradcheck(self, tmp_path, capsys):
        assert run(["gradcheck", "--samples", "1000", "--tol", "1e-5", "--out", str(tmp_path / "g.json")]) == 0
        assert json.loads(capsys.readouterr().out)["passed"] is True

    def test_gradcheck_impossible_tolerance(self):
        assert run(["gradcheck", "--tol", "1e-30"]) == 1

    def test_unknown_subcommand(self, capsys):
        assert run(["train"]) == 1
        assert "unknown subcommand" in capsys.readouterr().err

    def test_missing_subcommand(self):
        assert run([]) == 1

    @pytest.mark.parametrize("grid", ["0x7", "33x7", "7", "axb"])
    def test_grid_validation(self, grid, tmp_path):
        assert run(["gen-labels", "--data", str(tmp_path), "--grid", grid, "--out", str(tmp_path / "o")]) == 1

    def test_io_error(self, tmp_path):
        assert run(["eval", "--gt", str(tmp_path / "nope"), "--det", str(tmp_path / "nope")]) == 2

    def test_frame_mismatch(self, pipeline, tmp_path):
        _, data, _ = pipeline
        det = tmp_path / "det"
        det.mkdir()
        (det / "000000.txt").write_text((data / "det_2" / "000000.txt").read_text())
        assert run(["eval", "--gt", str(data), "--det", str(det)]) == 1

    def test_bad_label_line_reports_location(self, tmp_path, capsys):
        gt = tmp_path / "gt"
        gt.mkdir()
        (gt / "000000.txt").write_text("Car 0 0 0 1 2 3\n")
        assert run(["eval", "--gt", str(gt), "--det", str(gt)]) == 1
        assert "000000.txt:1" in capsys.readouterr().err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "did_geom", "bogus"], capture_output=True, text=True)
        assert proc.returncode == 1

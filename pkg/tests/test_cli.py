import json
import shutil
import subprocess

import pytest

from masklift.cli import main
from masklift.metrics import read_report
from masklift.scene_io import read_cuboids, write_cuboids, Cuboid

OBJECTS = ('[{"track_id":"a","class_label":"car","start":[14,0]},'
           '{"track_id":"b","class_label":"car","start":[4,9],"yaw":1.3,'
           '"speed":1.0},'
           '{"track_id":"p","class_label":"pedestrian","start":[6,-4]}]')


def synth_args(out_dir, seed=21):
    return [
        "synth", "--out", str(out_dir), "--seed", str(seed),
        "--set", f"synth.objects={OBJECTS}",
        "--set", "synth.n_frames=3",
        "--set", "synth.points_per_object=120",
        "--set", "synth.ego_speed=1.0",
        "--set", "synth.scene_id=cli-test",
    ]


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "scene"
    assert main(synth_args(out)) == 0
    return out


@pytest.fixture(scope="module")
def generated(scene, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-gen") / "cm3d.json"
    code = main(["generate", "--scene", str(scene / "scene.json"),
                 "--out", str(out)])
    assert code == 0
    return out


class TestExitCodes:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert capsys.readouterr().out.strip()

    def test_no_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_missing_scene_file(self, tmp_path, capsys):
        code = main(["generate", "--scene", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "out.json")])
        assert code == 2
        assert "does not exist" in capsys.readouterr().err

    def test_corrupt_manifest(self, tmp_path, capsys):
        bad = tmp_path / "scene.json"
        bad.write_text("{not json")
        code = main(["generate", "--scene", str(bad),
                     "--out", str(tmp_path / "out.json")])
        assert code == 1

    def test_bad_override_path(self, scene, tmp_path):
        code = main(["generate", "--scene", str(scene / "scene.json"),
                     "--out", str(tmp_path / "out.json"),
                     "--set", "nonsense.key=1"])
        assert code == 1

    def test_unknown_config_key(self, scene, tmp_path):
        code = main(["generate", "--scene", str(scene / "scene.json"),
                     "--out", str(tmp_path / "out.json"),
                     "--set", "pipeline.bogus=1"])
        assert code == 1

    def test_frames_out_of_range(self, scene, tmp_path):
        code = main(["generate", "--scene", str(scene / "scene.json"),
                     "--out", str(tmp_path / "out.json"),
                     "--frames", "0..9"])
        assert code == 1


class TestSynthCommand:
    def test_writes_manifest_and_gt(self, scene):
        assert (scene / "scene.json").exists()
        assert (scene / "gt.json").exists()
        gts = read_cuboids(scene / "gt.json")
        assert len(gts) == 9  # 3 objects x 3 frames

    def test_seed_changes_output(self, tmp_path):
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        assert main(synth_args(a, seed=1)) == 0
        assert main(synth_args(b, seed=2)) == 0
        assert main(synth_args(c, seed=1)) == 0
        lidar = "lidar/000000.bin"
        assert (a / lidar).read_bytes() != (b / lidar).read_bytes()
        assert (a / lidar).read_bytes() == (c / lidar).read_bytes()
        assert (a / "gt.json").read_bytes() == (c / "gt.json").read_bytes()


class TestGenerateCommand:
    def test_produces_loadable_cuboids(self, generated, capsys):
        cuboids = read_cuboids(generated)
        assert cuboids
        assert {c.source for c in cuboids} == {"cm3d"}
        assert {c.frame_id for c in cuboids} == \
            {"000000", "000001", "000002"}

    def test_config_echoed_into_output(self, scene, tmp_path):
        out = tmp_path / "out.json"
        code = main(["generate", "--scene", str(scene / "scene.json"),
                     "--out", str(out),
                     "--set", "pipeline.score_min=0.25"])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["config"]["score_min"] == 0.25

    def test_env_layer_applies(self, scene, tmp_path, monkeypatch):
        monkeypatch.setenv("MASKLIFT_PIPELINE__SCORE_MIN", "0.35")
        out = tmp_path / "out.json"
        assert main(["generate", "--scene", str(scene / "scene.json"),
                     "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["config"]["score_min"] == 0.35

    def test_set_beats_env(self, scene, tmp_path, monkeypatch):
        monkeypatch.setenv("MASKLIFT_PIPELINE__SCORE_MIN", "0.35")
        out = tmp_path / "out.json"
        assert main(["generate", "--scene", str(scene / "scene.json"),
                     "--out", str(out),
                     "--set", "pipeline.score_min=0.45"]) == 0
        doc = json.loads(out.read_text())
        assert doc["config"]["score_min"] == 0.45

    def test_config_file_layer(self, scene, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text('{"pipeline": {"score_min": 0.15}}')
        out = tmp_path / "out.json"
        assert main(["generate", "--scene", str(scene / "scene.json"),
                     "--out", str(out), "--config", str(cfg_path)]) == 0
        doc = json.loads(out.read_text())
        assert doc["config"]["score_min"] == 0.15

    def test_frames_subset(self, scene, tmp_path):
        out = tmp_path / "out.json"
        assert main(["generate", "--scene", str(scene / "scene.json"),
                     "--out", str(out), "--frames", "1..2"]) == 0
        frames = {c.frame_id for c in read_cuboids(out)}
        assert frames == {"000001", "000002"}
        assert main(["generate", "--scene", str(scene / "scene.json"),
                     "--out", str(out), "--frames", "0"]) == 0
        assert {c.frame_id for c in read_cuboids(out)} == {"000000"}

    def test_jobs_do_not_change_output(self, scene, tmp_path, generated):
        out = tmp_path / "par.json"
        assert main(["generate", "--scene", str(scene / "scene.json"),
                     "--out", str(out), "--jobs", "3"]) == 0
        a = json.loads(out.read_text())
        b = json.loads(generated.read_text())
        assert a["cuboids"] == b["cuboids"]

    def test_per_frame_counts_printed(self, scene, tmp_path, capsys):
        out = tmp_path / "out.json"
        assert main(["generate", "--scene", str(scene / "scene.json"),
                     "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "frame 000000:" in printed
        assert "wrote" in printed


class TestEvalCommand:
    def test_scores_own_ground_truth(self, scene, generated, tmp_path,
                                     capsys):
        report_path = tmp_path / "report.json"
        code = main(["eval", "--pred", str(generated),
                     "--gt", str(scene / "gt.json"),
                     "--out", str(report_path)])
        assert code == 0
        printed = capsys.readouterr().out
        assert "NDS:" in printed
        report = read_report(report_path)
        assert "car" in report.per_class
        # lifted boxes should land within the 2 m gate on this scene
        assert report.per_class["car"]["ap@2"] > 0.5

    def test_class_agnostic_flag(self, scene, generated, tmp_path):
        report_path = tmp_path / "report.json"
        assert main(["eval", "--pred", str(generated),
                     "--gt", str(scene / "gt.json"),
                     "--out", str(report_path),
                     "--class-agnostic"]) == 0
        report = read_report(report_path)
        assert list(report.per_class) == ["object"]

    def test_eval_config_override(self, scene, generated, tmp_path):
        report_path = tmp_path / "report.json"
        assert main(["eval", "--pred", str(generated),
                     "--gt", str(scene / "gt.json"),
                     "--out", str(report_path),
                     "--set", "eval.dist_thresholds=[2.0]"]) == 0
        report = read_report(report_path)
        assert report.config["dist_thresholds"] == [2.0]
        assert set(k for k in report.per_class["car"] if
                   k.startswith("ap@")) == {"ap@2"}

    def test_mismatched_gt_is_validation_error(self, generated, tmp_path,
                                               capsys):
        other_gt = tmp_path / "gt.json"
        write_cuboids([Cuboid(
            frame_id="zz", class_label="car", score=1.0,
            center=(0.0, 0.0, 0.0), dims=(1.0, 1.0, 1.0), yaw=0.0,
            velocity=None, source="ground_truth")], other_gt)
        code = main(["eval", "--pred", str(generated),
                     "--gt", str(other_gt),
                     "--out", str(tmp_path / "report.json")])
        assert code == 1


class TestFuseCommand:
    @pytest.fixture()
    def external_file(self, generated, tmp_path):
        cuboids = read_cuboids(generated)
        external = [Cuboid(
            frame_id=c.frame_id, class_label=c.class_label, score=2.0,
            center=(c.center[0] + 0.2, c.center[1], c.center[2]),
            dims=(c.dims[0] * 1.1, c.dims[1] * 1.1, c.dims[2]),
            yaw=c.yaw, velocity=(0.5, 0.0), source="external",
        ) for c in cuboids[:4]]
        path = tmp_path / "external.json"
        write_cuboids(external, path)
        return path

    def test_fuse_flow(self, generated, external_file, tmp_path, capsys):
        out = tmp_path / "fused.json"
        code = main(["fuse", "--cm3d", str(generated),
                     "--external", str(external_file),
                     "--out", str(out)])
        assert code == 0
        printed = capsys.readouterr().out
        assert "matched" in printed
        fused = read_cuboids(out)
        assert len(fused) == len(read_cuboids(generated))
        assert "fused" in {c.source for c in fused}

    def test_tau_flag_recorded_and_applied(self, generated, external_file,
                                           tmp_path):
        out = tmp_path / "fused.json"
        assert main(["fuse", "--cm3d", str(generated),
                     "--external", str(external_file),
                     "--out", str(out), "--tau", "3.5"]) == 0
        doc = json.loads(out.read_text())
        assert doc["config"]["tau"] == 3.5

    def test_wrong_source_rejected(self, generated, tmp_path):
        code = main(["fuse", "--cm3d", str(generated),
                     "--external", str(generated),
                     "--out", str(tmp_path / "fused.json")])
        assert code == 1


@pytest.mark.skipif(shutil.which("masklift") is None,
                    reason="console script not on PATH")
def test_console_script_smoke():
    proc = subprocess.run(["masklift", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip()

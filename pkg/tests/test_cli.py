import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from s3d.cli import main
from s3d.config import RunConfig
from s3d.errors import ConfigError
from s3d.net.serial import load_model

SMOKE_CONFIG = {
    "seed": 7,
    "num_train_videos": 2,
    "num_test_videos": 1,
    "epochs": 1,
    "batch_size": 4,
    "data": {
        "duration_range_sec": [24.0, 32.0],
        "instances_per_video": [1, 3],
        "seed": 7,
    },
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(SMOKE_CONFIG))
    assert main(["--config", str(cfg_path), "gen", "--out", str(root / "ds")]) == 0
    return root


def cfg_args(workspace):
    return ["--config", str(workspace / "config.json")]


class TestConfig:
    def test_defaults_validate(self):
        RunConfig()

    def test_flag_overrides_win(self, workspace):
        cfg = RunConfig.from_json_file(workspace / "config.json")
        assert cfg.seed == 7
        assert cfg.with_overrides(seed=99).seed == 99

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            RunConfig.from_dict({"not_a_key": 1})

    def test_instance_longer_than_window_rejected(self):
        with pytest.raises(ConfigError, match="window"):
            RunConfig.from_dict({"data": {"instance_length_range_sec": [2.0, 24.0]}})

    def test_config_hash_stable(self):
        assert RunConfig().config_hash() == RunConfig().config_hash()
        assert RunConfig().config_hash() != RunConfig(seed=1).config_hash()


class TestGen:
    def test_refuses_nonempty_dir_without_force(self, workspace, capsys):
        assert main(cfg_args(workspace) + ["gen", "--out", str(workspace / "ds")]) == 1
        assert "--force" in capsys.readouterr().err

    def test_deterministic_across_runs(self, workspace, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(cfg_args(workspace) + ["gen", "--out", str(a)]) == 0
        assert main(cfg_args(workspace) + ["gen", "--out", str(b)]) == 0
        for split in ("train", "test"):
            am = (a / split / "manifest.json").read_bytes()
            bm = (b / split / "manifest.json").read_bytes()
            assert am == bm
            for f in sorted((a / split / "videos").iterdir()):
                assert f.read_bytes() == (b / split / "videos" / f.name).read_bytes()

    def test_infeasible_config_exits_nonzero(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(
            json.dumps(
                {
                    "data": {
                        "duration_range_sec": [8.0, 8.0],
                        "instance_length_range_sec": [6.0, 6.0],
                        "instances_per_video": [3, 3],
                    }
                }
            )
        )
        code = main(["--config", str(bad), "gen", "--out", str(tmp_path / "out")])
        assert code == 1
        assert "place" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained(workspace):
    model = workspace / "model.s3d"
    code = main(
        cfg_args(workspace)
        + [
            "train",
            "--data",
            str(workspace / "ds" / "train"),
            "--out",
            str(model),
            "--log-csv",
            str(workspace / "loss.csv"),
        ]
    )
    assert code == 0
    return model


class TestTrainDetectEvalPlot:
    def test_loss_csv_schema(self, workspace, trained):
        lines = (workspace / "loss.csv").read_text().strip().splitlines()
        assert lines[0] == "step,loc,conf,act,total"
        first = lines[1].split(",")
        assert int(first[0]) == 1
        loc, conf, act, total = map(float, first[1:])
        assert total == pytest.approx(loc + conf + act, rel=1e-9)

    def test_zero_epochs_saves_initialization(self, workspace, tmp_path):
        out = tmp_path / "init.s3d"
        code = main(
            cfg_args(workspace)
            + ["train", "--data", str(workspace / "ds" / "train"), "--out", str(out), "--epochs", "0"]
        )
        assert code == 0
        net = load_model(out)
        fresh_cfg = RunConfig.from_json_file(workspace / "config.json")
        from s3d.net.network import Network
        from s3d.pipeline import KEY_INIT, derived_rng

        fresh = Network(fresh_cfg.make_network_config(), rng=derived_rng(fresh_cfg.seed, KEY_INIT))
        for a, b in zip(net.parameter_arrays(), fresh.parameter_arrays()):
            assert np.array_equal(a, b)

    def test_resume_equals_uninterrupted(self, workspace, tmp_path):
        base = cfg_args(workspace) + ["train", "--data", str(workspace / "ds" / "train")]
        full = tmp_path / "full.s3d"
        assert main(base + ["--out", str(full), "--epochs", "2"]) == 0
        part = tmp_path / "part.s3d"
        assert main(base + ["--out", str(part), "--epochs", "1"]) == 0
        assert main(base + ["--out", str(part), "--resume", str(part), "--epochs", "2"]) == 0
        a = load_model(full)
        b = load_model(part)
        for x, y in zip(a.parameter_arrays(), b.parameter_arrays()):
            assert np.array_equal(x, y)

    def test_detect_eval_plot_compose(self, workspace, trained, capsys):
        dets = workspace / "dets.json"
        code = main(
            cfg_args(workspace)
            + ["detect", "--model", str(trained), "--data", str(workspace / "ds" / "test"), "--out", str(dets)]
        )
        assert code == 0
        ann = workspace / "ds" / "test" / "annotations.json"
        code = main(
            cfg_args(workspace)
            + ["eval", "--detections", str(dets), "--annotations", str(ann), "--out-csv", str(workspace / "ap.csv")]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "mAP" in out and "0.50" in out
        svg = workspace / "timeline.svg"
        assert main(cfg_args(workspace) + ["plot", "--detections", str(dets), "--annotations", str(ann), "--out", str(svg)]) == 0
        ET.parse(svg)  # well-formed XML

    def test_detect_score_threshold_one_filters_everything(self, workspace, trained, tmp_path):
        out = tmp_path / "none.json"
        code = main(
            cfg_args(workspace)
            + [
                "detect",
                "--model",
                str(trained),
                "--data",
                str(workspace / "ds" / "test"),
                "--out",
                str(out),
                "--score-threshold",
                "1.0",
            ]
        )
        assert code == 0
        data = json.loads(out.read_text())
        assert all(not rec["detections"] for rec in data)

    def test_eval_perfect_when_detections_equal_annotations(self, workspace, tmp_path, capsys):
        ann_path = workspace / "ds" / "test" / "annotations.json"
        records = json.loads(ann_path.read_text())
        fake = [
            {
                "video_id": rec["video_id"],
                "detections": [
                    {
                        "label": a["label"],
                        "start_sec": a["start_sec"],
                        "end_sec": a["end_sec"],
                        "score": 1.0,
                    }
                    for a in rec["annotations"]
                ],
            }
            for rec in records
        ]
        det_path = tmp_path / "perfect.json"
        det_path.write_text(json.dumps(fake))
        assert main(cfg_args(workspace) + ["eval", "--detections", str(det_path), "--annotations", str(ann_path)]) == 0
        line = [l for l in capsys.readouterr().out.splitlines() if l.startswith("mAP")][0]
        for val in line.split()[1:]:
            assert float(val) == pytest.approx(1.0)

    def test_empty_detections_zero_map(self, workspace, tmp_path, capsys):
        ann_path = workspace / "ds" / "test" / "annotations.json"
        det_path = tmp_path / "empty.json"
        records = json.loads(ann_path.read_text())
        det_path.write_text(json.dumps([{"video_id": r["video_id"], "detections": []} for r in records]))
        assert main(cfg_args(workspace) + ["eval", "--detections", str(det_path), "--annotations", str(ann_path)]) == 0
        line = [l for l in capsys.readouterr().out.splitlines() if l.startswith("mAP")][0]
        for val in line.split()[1:]:
            assert float(val) == 0.0

    def test_plot_empty_inputs_valid_svg(self, workspace, tmp_path):
        det_path = tmp_path / "d.json"
        ann_path = tmp_path / "a.json"
        det_path.write_text("[]")
        ann_path.write_text("[]")
        svg = tmp_path / "empty.svg"
        assert main(cfg_args(workspace) + ["plot", "--detections", str(det_path), "--annotations", str(ann_path), "--out", str(svg)]) == 0
        root = ET.parse(svg).getroot()
        assert root.tag.endswith("svg")


class TestOverfit:
    def test_overfit_one_window_drives_loss_down(self, workspace, tmp_path):
        log = tmp_path / "overfit.csv"
        code = main(
            cfg_args(workspace)
            + [
                "train",
                "--data",
                str(workspace / "ds" / "train"),
                "--out",
                str(tmp_path / "overfit.s3d"),
                "--overfit-one-window",
                "--steps",
                "200",
                "--log-csv",
                str(log),
            ]
        )
        assert code == 0
        rows = log.read_text().strip().splitlines()[1:]
        first = float(rows[0].split(",")[-1])
        last = float(rows[199].split(",")[-1])
        assert last < 0.25 * first


class TestTileBench:
    def test_tile_paper_counts(self, capsys):
        assert main(["tile", "--layers", "32,16,8,4,2,1", "--ratios", "0.25,0.5,0.75,1.0"]) == 0
        assert "252 spans" in capsys.readouterr().out
        assert main(["tile", "--layers", "32,16,8"]) == 0
        assert "224 spans" in capsys.readouterr().out
        assert main(["tile", "--layers", "32,16,8,4,2,1", "--ratios", "1.0"]) == 0
        assert "63 spans" in capsys.readouterr().out

    def test_bench_reports_metadata(self, capsys):
        assert main(["bench", "--windows", "2"]) == 0
        out = capsys.readouterr().out
        assert "FPS" in out and "config_hash=" in out and "threads=" in out
        fps = float(out.split("-> ")[1].split(" FPS")[0])
        assert np.isfinite(fps) and fps > 0

    def test_threads_env_fallback(self, capsys, monkeypatch):
        monkeypatch.setenv("S3D_THREADS", "2")
        assert main(["bench", "--windows", "1"]) == 0
        assert "threads=2" in capsys.readouterr().out

import csv
import json

import numpy as np
import pytest
from PIL import Image

from attnhar import __version__
from attnhar.cli import SEGMENT_GRID, _segment_rows, main
from attnhar.config import ConfigError, load_config, parse_yaml, synth_spec_from_dict
from attnhar.signal_repr import ImageKind

TINY = """\
version: 1
dataset:
  source: synth
  seed: 3
  synth:
    preset: planted
    num_sensors: 3
    num_classes: 3
    num_subjects: 3
    recordings_per_class: 6
    length: 64
windowing: {window_len: 32, stride: 16}
model: {hidden_units: 8, filters_per_kernel: 2}
train: {epochs: 2, batch_size: 16}
viz: {max_segments_per_class: 4}
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestConfigLoading:
    def test_defaults(self):
        cfg = load_config(text="")
        assert cfg.source == "synth" and cfg.variant == "attention"
        assert (cfg.windowing.window_len, cfg.windowing.stride) == (32, 8)
        assert cfg.representation is ImageKind.DFT
        assert cfg.train.lr == 0.001 and cfg.train.deterministic

    def test_file_values(self, tiny_config):
        cfg = load_config(tiny_config)
        assert cfg.train.epochs == 2 and cfg.model.hidden_units == 8 and cfg.synth_seed == 3
        assert cfg.model.kernel_sizes == ((1, 3), (3, 3), (5, 5))

    def test_overrides_win_and_none_is_ignored(self, tiny_config):
        cfg = load_config(tiny_config, {"train.seed": 9, "train.deterministic": False, "output": None})
        assert cfg.train.seed == 9 and not cfg.train.deterministic
        assert cfg.output == "runs/experiment"
        assert cfg.resolved()["train"]["seed"] == 9

    def test_unknown_key_names_field_and_line(self):
        with pytest.raises(ConfigError) as err:
            load_config(text="version: 1\ntrain:\n  epochs: 3\n  learning_rate: 0.1\n")
        assert (err.value.field, err.value.line) == ("train.learning_rate", 4)

    def test_bad_type_names_field_and_line(self):
        with pytest.raises(ConfigError) as err:
            load_config(text="model:\n  variant: attention\n  hidden_units: lots\n")
        assert (err.value.field, err.value.line) == ("model.hidden_units", 3)
        assert "integer" in str(err.value)

    @pytest.mark.parametrize("text,field", [
        ("version: 2\n", "version"),
        ("dataset: {source: ftp}\n", "dataset.source"),
        ("dataset: {source: daily, path: /no/such/dir}\n", "dataset.path"),
        ("representation: wavelet\n", "representation"),
        ("windowing: {window_len: 33, stride: 8}\n", "windowing.window_len"),
        ("windowing: {window_len: 16, stride: 32}\n", "windowing.stride"),
        ("model: {variant: middle}\n", "model.variant"),
        ("train: {lr: fast}\n", "train.lr"),
        ("train: {momentum: 1.5}\n", "train.momentum"),
        ("train: {deterministic: maybe}\n", "train.deterministic"),
        ("dataset: {synth: {preset: nope}}\n", "dataset.synth"),
        ("train: 5\n", "train"),
    ])
    def test_rejections_name_the_field(self, text, field):
        with pytest.raises(ConfigError) as err:
            load_config(text=text)
        assert err.value.field == field
        assert err.value.line == 1

    def test_duplicate_key(self):
        with pytest.raises(ConfigError) as err:
            parse_yaml("train:\n  epochs: 1\n  epochs: 2\n")
        assert (err.value.field, err.value.line) == ("train.epochs", 3)

    def test_syntax_error_has_line(self):
        with pytest.raises(ConfigError) as err:
            parse_yaml("train:\n  epochs: [1, 2\nmodel: {}\n")
        assert err.value.line is not None

    def test_path_recorded(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("bogus: 1\n")
        with pytest.raises(ConfigError) as err:
            load_config(path)
        assert err.value.to_dict()["path"] == str(path)

    def test_odd_window_allowed_for_raw(self):
        assert load_config(text="representation: raw\nwindowing: {window_len: 33, stride: 8}\n")


class TestSynthPresets:
    def test_planted_overrides(self):
        spec = synth_spec_from_dict({"preset": "planted", "num_sensors": 2, "noise_std": 0.0})
        assert spec.num_sensors == 2 and spec.noise_std == 0.0 and spec.relevant_sensor_map[1] == 1

    def test_custom_fields(self):
        spec = synth_spec_from_dict({
            "preset": "custom", "num_sensors": 2, "num_channels": 1, "num_classes": 2, "num_subjects": 1,
            "recordings_per_class": 1, "length": 16, "sample_rate_hz": 16,
            "signatures": {"0": [[1, 0, 3.0, 1.0]]}, "relevant_sensor_map": {"0": 0}})
        assert spec.signatures == {0: [(1, 0, 3.0, 1.0)]} and spec.relevant_sensor_map == {0: 0}

    def test_invalid_custom(self):
        with pytest.raises(ValueError):
            synth_spec_from_dict({"preset": "custom", "num_sensors": 1, "num_channels": 1, "num_classes": 1,
                                  "num_subjects": 1, "recordings_per_class": 1, "length": 16,
                                  "sample_rate_hz": 16, "signatures": {0: [[0, 0, 9.0, 1.0]]}})


class TestSegmentRows:
    def test_grid_on_long_recordings(self):
        rows = _segment_rows(125, ImageKind.DFT)
        assert len(rows) == len(SEGMENT_GRID) == 7
        assert all(win is not None for _, _, win, _ in rows)
        whole = rows[-1][2]
        assert (whole.window_len, whole.stride) == (124, 124)
        assert rows[-1][3] == "window 124"

    def test_raw_keeps_odd_whole_window(self):
        whole = _segment_rows(125, ImageKind.RAW)[-1]
        assert whole[2].window_len == 125 and whole[3] == ""

    def test_short_recordings_skip_long_rows(self):
        rows = _segment_rows(64, ImageKind.DFT)
        skipped = [(length, stride) for length, stride, win, _ in rows if win is None]
        assert skipped == [("96", "24")]
        assert rows[-1][2].window_len == 64


class TestCliErrors:
    def test_version(self, capsys):
        code, out, _ = run(capsys, "--version")
        assert code == 0 and __version__ in out

    def test_unknown_command_is_usage_error(self, capsys):
        code, _, err = run(capsys, "fly")
        assert code == 2 and json.loads(err)["error"] == "UsageError"

    def test_missing_required_option(self, capsys, tmp_path):
        code, _, err = run(capsys, "ablate", "--out", tmp_path)
        assert code == 2 and "--axis" in json.loads(err)["message"]

    def test_config_error_json(self, capsys, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("version: 1\nmodel:\n  hidden_units: 0\n")
        code, out, err = run(capsys, "train", "--config", bad, "--out", tmp_path / "o")
        payload = json.loads(err)
        assert code == 1 and out == ""
        assert payload["error"] == "ConfigError"
        assert (payload["field"], payload["line"], payload["path"]) == ("model.hidden_units", 3, str(bad))

    def test_dataset_error_json(self, capsys, tmp_path):
        root = tmp_path / "daily"
        (root / "a01").mkdir(parents=True)
        cfg = tmp_path / "d.yaml"
        cfg.write_text(f"dataset: {{source: daily, path: {root}, activities: [0], subjects: [0]}}\n")
        code, _, err = run(capsys, "train", "--config", cfg, "--out", tmp_path / "o")
        assert code == 1 and json.loads(err)["error"] == "DatasetError"

    def test_bad_holdout(self, capsys, tiny_config, tmp_path):
        cfg = tmp_path / "h.yaml"
        cfg.write_text(TINY + "eval: {holdout_subject: 7}\n")
        code, _, err = run(capsys, "train", "--config", cfg, "--out", tmp_path / "o")
        assert code == 1 and json.loads(err)["field"] == "eval.holdout_subject"


class TestTrainCommand:
    def test_artifacts_and_run_json(self, capsys, tiny_config, tmp_path):
        out_dir = tmp_path / "run"
        code, out, err = run(capsys, "train", "--config", tiny_config, "--seed", 4, "--out", out_dir)
        assert code == 0, err
        summary = json.loads(out)
        assert summary["holdout_subject"] == 2 and 0 <= summary["accuracy"] <= 1
        for name in ("run.json", "checkpoint.json", "history.csv", "report.csv", "confusion.csv",
                     "metrics.json", "confusion_normalized.csv", "confusion_normalized.png"):
            assert (out_dir / name).exists(), name
        run_json = json.loads((out_dir / "run.json").read_text())
        assert run_json["command"] == "train" and run_json["version"] == __version__
        assert run_json["seed"] == 4 and run_json["deterministic"] is True
        assert run_json["config"]["train"]["seed"] == 4
        assert run_json["config"]["model"]["hidden_units"] == 8
        history = (out_dir / "history.csv").read_text().splitlines()
        assert history[0] == "epoch,loss" and len(history) == 3
        metrics = json.loads((out_dir / "metrics.json").read_text())
        assert metrics["accuracy"] == summary["accuracy"]

    def test_repeat_run_is_identical(self, capsys, tiny_config, tmp_path):
        outs = []
        for name in ("a", "b"):
            code, _, _ = run(capsys, "train", "--config", tiny_config, "--out", tmp_path / name)
            assert code == 0
            outs.append({f: (tmp_path / name / f).read_text()
                         for f in ("checkpoint.json", "history.csv", "metrics.json")})
        assert outs[0] == outs[1]

    def test_viz_from_checkpoint(self, capsys, tiny_config, tmp_path):
        assert run(capsys, "train", "--config", tiny_config, "--out", tmp_path / "t")[0] == 0
        ckpt = tmp_path / "t" / "checkpoint.json"
        code, out, err = run(capsys, "viz", "--config", tiny_config, "--checkpoint", ckpt,
                             "--out", tmp_path / "v")
        assert code == 0, err
        files = {p.name for p in (tmp_path / "v").iterdir()}
        assert "attention_synth_fold2.csv" in files and "attention_synth_fold2.png" in files
        assert "attention-raw_synth_fold2.csv" in files
        cams = sorted(f for f in files if f.startswith("cam_") and f.endswith(".png"))
        assert len(cams) == 3 * 3
        heat = list(csv.reader((tmp_path / "v" / "attention_synth_fold2.csv").open()))
        assert len(heat) == 1 + 3 and len(heat[0]) == 1 + 3
        np.testing.assert_allclose([sum(float(v) for v in row[1:]) for row in heat[1:]], 1.0, atol=1e-9)
        png = Image.open(tmp_path / "v" / cams[0])
        assert png.mode == "RGB"
        assert json.loads(out)["artifacts"]

    def test_viz_rejects_mismatched_checkpoint(self, capsys, tiny_config, tmp_path):
        assert run(capsys, "train", "--config", tiny_config, "--out", tmp_path / "t")[0] == 0
        other = tmp_path / "four.yaml"
        other.write_text(TINY.replace("num_sensors: 3", "num_sensors: 4"))
        code, _, err = run(capsys, "viz", "--config", other, "--checkpoint", tmp_path / "t" / "checkpoint.json",
                           "--out", tmp_path / "v")
        assert code == 1 and "num_sensors" in json.loads(err)["message"]


class TestLosoAndAblate:
    def test_loso_outputs(self, capsys, tiny_config, tmp_path):
        code, out, err = run(capsys, "loso", "--config", tiny_config, "--jobs", 2, "--out", tmp_path)
        assert code == 0, err
        assert json.loads(out)["folds"] == 3
        rows = list(csv.reader((tmp_path / "folds.csv").open()))
        assert [r[0] for r in rows[1:]] == ["0", "1", "2", "mean"]
        doc = json.loads((tmp_path / "loso.json").read_text())
        assert len(doc["folds"]) == 3
        assert json.loads((tmp_path / "run.json").read_text())["jobs"] == 2
        assert (tmp_path / "pooled_confusion_normalized.png").exists()

    def test_ablate_representation(self, capsys, tiny_config, tmp_path):
        cfg = tmp_path / "f.yaml"
        cfg.write_text(TINY + "eval: {folds: [0]}\n")
        code, out, err = run(capsys, "ablate", "--config", cfg, "--axis", "representation", "--out", tmp_path)
        assert code == 0, err
        rows = list(csv.reader((tmp_path / "ablation_representation.csv").open()))
        assert [r[0] for r in rows[1:]] == ["I_RS", "I_DCT", "I_DFT"]
        assert all(0 <= float(r[1]) <= 1 for r in rows[1:])

    def test_ablate_segment_rows(self, capsys, tiny_config, tmp_path):
        cfg = tmp_path / "f.yaml"
        cfg.write_text(TINY.replace("epochs: 2", "epochs: 1") + "eval: {folds: [0]}\n")
        code, _, err = run(capsys, "ablate", "--config", cfg, "--axis", "segment", "--out", tmp_path)
        assert code == 0, err
        rows = list(csv.reader((tmp_path / "ablation_segment.csv").open()))
        assert len(rows) == 1 + 7
        by_label = {(r[0], r[1]): r for r in rows[1:]}
        assert by_label[("96", "24")][2] == "" and by_label[("96", "24")][-1].startswith("skipped")
        assert by_label[("125", "-")][-1] == "window 64"

    def test_ablate_fusion(self, capsys, tiny_config, tmp_path):
        cfg = tmp_path / "f.yaml"
        cfg.write_text(TINY + "eval: {folds: [1]}\n")
        code, _, err = run(capsys, "ablate", "--config", cfg, "--axis", "fusion", "--out", tmp_path)
        assert code == 0, err
        rows = list(csv.reader((tmp_path / "ablation_fusion.csv").open()))
        assert [r[0] for r in rows[1:]] == ["early", "late", "attention"]


class TestSynthCommand:
    def test_default_planted(self, capsys, tmp_path):
        code, out, _ = run(capsys, "synth", "--seed", 2, "--out", tmp_path)
        assert code == 0
        assert json.loads(out)["recordings"] == 4 * 40
        assert (tmp_path / "manifest.txt").exists()
        assert json.loads((tmp_path / "run.json").read_text())["seed"] == 2

    def test_spec_file_and_reload(self, capsys, tmp_path):
        spec = tmp_path / "spec.yaml"
        spec.write_text("preset: planted\nnum_sensors: 2\nnum_classes: 2\nrecordings_per_class: 3\n")
        code, out, _ = run(capsys, "synth", "--config", spec, "--out", tmp_path / "d")
        assert code == 0 and json.loads(out)["recordings"] == 6
        cfg = tmp_path / "c.yaml"
        cfg.write_text(f"dataset: {{source: csv, path: {tmp_path / 'd' / 'manifest.txt'}}}\n")
        meta, recs = load_config(cfg).load_dataset()
        assert meta.num_sensors == 2 and len(recs) == 6

    def test_bad_spec(self, capsys, tmp_path):
        spec = tmp_path / "spec.yaml"
        spec.write_text("preset: planted\nnum_sensors: 0\n")
        code, _, err = run(capsys, "synth", "--config", spec, "--out", tmp_path / "d")
        assert code == 1 and json.loads(err)["field"] == "synth"

import numpy as np
import pytest

from mixinterp.attribution import AttributionMap
from mixinterp.config import ExperimentConfig, config_hash, parse_config
from mixinterp.errors import ConfigError, InvalidArgumentError, MissingArtifactError
from mixinterp.results import ResultRecord, ResultStore
from mixinterp.tensorio import load_map, save_map


class TestMapFormat:
    def test_round_trip_bitwise(self, tmp_path):
        values = np.random.default_rng(0).random((17, 23)).astype(np.float32)
        amap = AttributionMap(values=values, target_class=3, method="iba", normalized=True)
        p = tmp_path / "maps" / "a.map"
        save_map(p, amap)
        back = load_map(p)
        assert np.array_equal(back.values, values)
        assert back.target_class == 3
        assert back.method == "iba"
        assert back.normalized

    def test_header_is_readable_json_line(self, tmp_path):
        import json

        amap = AttributionMap(np.zeros((2, 2), np.float32), 0, "gradcam", True)
        p = tmp_path / "b.map"
        save_map(p, amap)
        with open(p, "rb") as fh:
            header = json.loads(fh.readline())
        assert header == {
            "height": 2, "width": 2, "method": "gradcam", "class": 0, "normalized": True,
        }

    def test_payload_is_little_endian_row_major(self, tmp_path):
        values = np.arange(6, dtype=np.float32).reshape(2, 3)
        p = tmp_path / "c.map"
        save_map(p, AttributionMap(values, 0, "gradcam", False))
        with open(p, "rb") as fh:
            fh.readline()
            raw = np.frombuffer(fh.read(), dtype="<f4")
        assert np.array_equal(raw, np.arange(6, dtype=np.float32))

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            load_map(tmp_path / "nope.map")

    def test_non_2d_rejected(self, tmp_path):
        amap = AttributionMap(np.zeros((2, 2, 2), np.float32), 0, "gradcam", False)
        with pytest.raises(InvalidArgumentError):
            save_map(tmp_path / "d.map", amap)


class TestConfigParsing:
    def test_defaults_when_file_empty(self, tmp_path):
        p = tmp_path / "c.conf"
        p.write_text("# nothing but a comment\n\n")
        assert parse_config(p) == ExperimentConfig()

    def test_parses_typed_values(self, tmp_path):
        p = tmp_path / "c.conf"
        p.write_text(
            "seed = 7\n"
            "out_dir = runs/x\n"
            "train.epochs = 12        # inline comment\n"
            "train.lr = 0.05\n"
            "train.lr_decay_epochs = 6,9\n"
            "attribution.methods = gradcam\n"
        )
        cfg = parse_config(p)
        assert cfg.seed == 7
        assert cfg.out_dir == "runs/x"
        assert cfg.train_epochs == 12
        assert cfg.train_lr == 0.05
        assert cfg.train_lr_decay_epochs == (6, 9)
        assert cfg.methods() == ("gradcam",)

    def test_unknown_key_fails(self, tmp_path):
        p = tmp_path / "c.conf"
        p.write_text("train.eppochs = 12\n")
        with pytest.raises(ConfigError):
            parse_config(p)

    def test_duplicate_key_fails(self, tmp_path):
        p = tmp_path / "c.conf"
        p.write_text("seed = 1\nseed = 2\n")
        with pytest.raises(ConfigError):
            parse_config(p)

    def test_bad_value_fails(self, tmp_path):
        p = tmp_path / "c.conf"
        p.write_text("train.epochs = twelve\n")
        with pytest.raises(ConfigError):
            parse_config(p)

    def test_missing_file_fails(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "absent.conf")

    def test_validation_rejects_bad_fill_policy(self, tmp_path):
        p = tmp_path / "c.conf"
        p.write_text("metrics.fill_policy = zeros\n")
        with pytest.raises(ConfigError):
            parse_config(p)

    def test_validation_rejects_unknown_method(self, tmp_path):
        p = tmp_path / "c.conf"
        p.write_text("attribution.methods = gradcam,shap\n")
        with pytest.raises(ConfigError):
            parse_config(p)


class TestConfigHash:
    def test_stable_for_equal_configs(self):
        assert config_hash(ExperimentConfig()) == config_hash(ExperimentConfig())

    def test_changes_with_any_field(self):
        base = config_hash(ExperimentConfig())
        assert config_hash(ExperimentConfig(seed=1)) != base
        assert config_hash(ExperimentConfig(train_lr=0.2)) != base

    def test_is_short_hex(self):
        h = config_hash(ExperimentConfig())
        assert len(h) == 16
        int(h, 16)


class TestResultStore:
    def test_append_and_load(self, tmp_path):
        store = ResultStore(tmp_path / "r.jsonl")
        rec = ResultRecord("run-a", "hash", "baseline", "energy_pg", value=0.5, se=0.01)
        store.append(rec)
        store.append(ResultRecord("run-b", "hash", "cutout", "ehr", value=0.4))
        loaded = store.load()
        assert len(loaded) == 2
        assert loaded[0].metric == "energy_pg"
        assert loaded[0].value == 0.5

    def test_run_id_filter(self, tmp_path):
        store = ResultStore(tmp_path / "r.jsonl")
        store.append(ResultRecord("run-a", "h", "m", "x", value=1.0))
        store.append(ResultRecord("run-b", "h", "m", "x", value=2.0))
        assert [r.value for r in store.load("run-b")] == [2.0]

    def test_canonical_drops_timestamp(self):
        a = ResultRecord("r", "h", "m", "x", value=1.0, timestamp=100.0)
        b = ResultRecord("r", "h", "m", "x", value=1.0, timestamp=200.0)
        assert a.canonical() == b.canonical()
        assert "timestamp" not in a.canonical()

    def test_payload_round_trip(self, tmp_path):
        store = ResultStore(tmp_path / "r.jsonl")
        payload = {"x": [0.0, 0.5, 1.0], "y": [1.0, 0.4, 0.0]}
        store.append(ResultRecord("r", "h", "m", "curve", payload=payload))
        assert store.load()[0].payload == payload

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            ResultStore(tmp_path / "none.jsonl").load()

    def test_timestamp_filled_on_append(self, tmp_path):
        store = ResultStore(tmp_path / "r.jsonl")
        store.append(ResultRecord("r", "h", "m", "x", value=1.0))
        assert store.load()[0].timestamp > 0

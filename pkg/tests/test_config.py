import json

import pytest

from xbm import config as cfg
from xbm.errors import ConfigError


class TestResolve:
    def test_defaults_complete(self):
        flat = cfg.resolve({})
        assert flat == cfg.DEFAULTS
        assert flat is not cfg.DEFAULTS

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="'nope'"):
            cfg.resolve({"nope": 1})

    @pytest.mark.parametrize(
        "key, value, expected",
        [("lr", 1, 1.0), ("iterations", 10.0, 10), ("hidden_dims", 32, [32]), ("xbm.enabled", False, False)],
    )
    def test_coercion(self, key, value, expected):
        assert cfg.resolve({key: value})[key] == expected

    @pytest.mark.parametrize("key, value", [("iterations", 1.5), ("xbm.enabled", "yes"), ("lr", True), ("P", "four")])
    def test_bad_values_name_key(self, key, value):
        with pytest.raises(ConfigError, match=key):
            cfg.resolve({key: value})


class TestFiles:
    def test_toml_tables_are_dotted_keys(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('seed = 3\n[xbm]\nmemory_ratio = 0.5\n[loss]\nscheme = "ms"\n')
        flat = cfg.load_config(p)
        assert (flat["seed"], flat["xbm.memory_ratio"], flat["loss.scheme"]) == (3, 0.5, "ms")

    def test_manifest(self, tmp_path):
        p = tmp_path / "manifest.json"
        p.write_text(json.dumps({"config": {**cfg.DEFAULTS, "seed": 12}}))
        assert cfg.load_config(p)["seed"] == 12

    def test_malformed_toml(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("seed = = 3")
        with pytest.raises(ConfigError, match="c.toml"):
            cfg.load_config(p)


class TestOverrides:
    @pytest.mark.parametrize(
        "text, expected",
        [
            ("xbm.enabled=false", ("xbm.enabled", False)),
            ("lr = 0.01", ("lr", 0.01)),
            ("lr_decay_at=[100, 200]", ("lr_decay_at", [100, 200])),
            ("loss.scheme=triplet", ("loss.scheme", "triplet")),
        ],
    )
    def test_parse(self, text, expected):
        assert cfg.parse_override(text) == expected

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            cfg.parse_override("lr")

    def test_later_wins(self):
        flat = cfg.apply_overrides(cfg.resolve({}), ["seed=1", "seed=2"])
        assert flat["seed"] == 2


class TestBuilders:
    def test_train_config(self):
        tc = cfg.train_config(cfg.resolve({"xbm.memory_ratio": 0.5, "loss.scheme": "triplet"}))
        assert tc.xbm.memory_ratio == 0.5
        assert tc.loss.scheme == "triplet"
        assert tc.batch_size == 8

    def test_disabled_memory(self):
        assert cfg.train_config(cfg.resolve({"xbm.enabled": False})).xbm is None

    def test_invalid_scheme(self):
        with pytest.raises(ConfigError, match="loss"):
            cfg.train_config(cfg.resolve({"loss.scheme": "lifted"}))

    def test_csv_needs_path(self):
        with pytest.raises(ConfigError, match="data.path"):
            cfg.load_dataset(cfg.resolve({"data.source": "csv"}))

    def test_unknown_source(self):
        with pytest.raises(ConfigError, match="data.source"):
            cfg.load_dataset(cfg.resolve({"data.source": "s3"}))

    def test_synthetic_splits(self):
        train, held = cfg.dataset_splits(cfg.resolve({"data.num_classes": 5, "data.per_class": 4}))
        assert len(train) + len(held) == 20

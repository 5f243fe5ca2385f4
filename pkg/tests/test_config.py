"""Strict JSON config parsing, path resolution, dataset materialization."""

import json

import numpy as np
import pytest

from tbnn.config import (
    RunConfig,
    load_config,
    load_datasets,
    load_ood,
    parse_config,
    resolve_path,
)
from tbnn.data import save_idx
from tbnn.errors import ConfigError, DataError


def _minimal(**over):
    raw = {
        "model": {"in_shape": [2], "out_dim": 2, "hidden": [4]},
        "data": {"kind": "two_gaussians", "n_train": 32, "n_test": 16},
    }
    raw.update(over)
    return raw


class TestParsing:
    def test_minimal_config_defaults(self):
        cfg = parse_config(_minimal())
        assert cfg.model.out_dim == 2
        assert cfg.prior.family == "gaussian"
        assert cfg.sampler.kind == "ggmc"
        assert cfg.chains == 5
        assert cfg.temperature_grid == (1.0,)
        assert cfg.prior_families == ()

    def test_temperature_grid_defaults_to_sampler_temperature(self):
        cfg = parse_config(_minimal(sampler={"temperature": 0.25}))
        assert cfg.temperature_grid == (0.25,)

    def test_non_object_rejected(self):
        with pytest.raises(ConfigError, match="JSON object"):
            parse_config([1, 2, 3])

    def test_missing_model_section(self):
        raw = _minimal()
        del raw["model"]
        with pytest.raises(ConfigError, match="model"):
            parse_config(raw)

    def test_missing_data_section(self):
        raw = _minimal()
        del raw["data"]
        with pytest.raises(ConfigError, match="data"):
            parse_config(raw)

    @pytest.mark.parametrize("mutate,needle", [
        (lambda r: r.update(chians=3), "chians"),
        (lambda r: r["model"].update(hiden=[4]), "hiden"),
        (lambda r: r.update(prior={"famly": "laplace"}), "famly"),
        (lambda r: r.update(sampler={"lr": 0.1}), "lr"),
        (lambda r: r["data"].update(pth="x.csv"), "pth"),
        (lambda r: r.update(eval={"bins": 10}), "bins"),
    ])
    def test_unknown_keys_rejected_per_section(self, mutate, needle):
        raw = _minimal()
        mutate(raw)
        with pytest.raises(ConfigError, match=needle):
            parse_config(raw)

    def test_invalid_model_values_wrapped_in_config_error(self):
        raw = _minimal()
        raw["model"]["activation"] = "swish"
        with pytest.raises(ConfigError, match="model"):
            parse_config(raw)

    def test_unknown_data_kind(self):
        with pytest.raises(ConfigError, match="kind"):
            parse_config(_minimal(data={"kind": "imagenet"}))

    def test_data_kind_required(self):
        with pytest.raises(ConfigError, match="kind"):
            parse_config(_minimal(data={"n_train": 10}))

    @pytest.mark.parametrize("grid", [[], [0.0, 1.0], [-1.0], ["hot"]])
    def test_bad_temperature_grid(self, grid):
        with pytest.raises(ConfigError, match="temperature_grid"):
            parse_config(_minimal(temperature_grid=grid))

    def test_grid_coerced_to_float_tuple(self):
        cfg = parse_config(_minimal(temperature_grid=[1, 0.1]))
        assert cfg.temperature_grid == (1.0, 0.1)

    @pytest.mark.parametrize("chains", [0, -2, 2.5, "five"])
    def test_bad_chain_count(self, chains):
        with pytest.raises(ConfigError, match="chains"):
            parse_config(_minimal(chains=chains))

    def test_prior_families_validated_eagerly(self):
        cfg = parse_config(_minimal(prior_families=["gaussian", "laplace"]))
        assert cfg.prior_families == ("gaussian", "laplace")
        with pytest.raises(ConfigError):
            parse_config(_minimal(prior_families=["gumbel"]))

    def test_ece_bins_validated(self):
        with pytest.raises(ConfigError, match="ece_bins"):
            parse_config(_minimal(eval={"ece_bins": 0}))

    def test_sampler_seed_override(self):
        cfg = parse_config(_minimal(sampler={"seed": 3}), seed_override=99)
        assert cfg.sampler.seed == 99


class TestLoadConfig:
    def test_reads_json_file(self, tmp_path):
        p = tmp_path / "run.json"
        p.write_text(json.dumps(_minimal(chains=2)))
        cfg = load_config(p)
        assert cfg.chains == 2
        assert cfg.base_dir == str(tmp_path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "run.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError, match="valid JSON"):
            load_config(p)

    def test_seed_override_threads_through(self, tmp_path):
        p = tmp_path / "run.json"
        p.write_text(json.dumps(_minimal()))
        assert load_config(p, seed_override=7).sampler.seed == 7


class TestPathResolution:
    def test_config_dir_first(self, tmp_path, monkeypatch):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        (tmp_path / "a" / "d.csv").write_text("1,2\n")
        (tmp_path / "b" / "d.csv").write_text("3,4\n")
        monkeypatch.chdir(tmp_path / "b")
        assert resolve_path("d.csv", str(tmp_path / "a")) == tmp_path / "a" / "d.csv"

    def test_cwd_fallback(self, tmp_path, monkeypatch):
        (tmp_path / "d.csv").write_text("1,2\n")
        monkeypatch.chdir(tmp_path)
        assert resolve_path("d.csv", str(tmp_path / "missing")) == tmp_path / "d.csv"

    def test_env_var_fallback(self, tmp_path, monkeypatch):
        root = tmp_path / "datasets"
        root.mkdir()
        (root / "d.csv").write_text("1,2\n")
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv("TBNN_DATA_DIR", str(root))
        assert resolve_path("d.csv", str(tmp_path)) == root / "d.csv"

    def test_unresolvable_path(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        monkeypatch.delenv("TBNN_DATA_DIR", raising=False)
        with pytest.raises(ConfigError, match="TBNN_DATA_DIR"):
            resolve_path("ghost.csv", str(tmp_path))

    def test_absolute_path(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1,2\n")
        assert resolve_path(str(p)) == p
        with pytest.raises(ConfigError, match="not found"):
            resolve_path(str(tmp_path / "ghost.csv"))

    def test_validation_requires_referenced_files(self, tmp_path):
        raw = _minimal(data={"kind": "uci_csv", "path": "ghost.csv"})
        with pytest.raises(ConfigError, match="not found"):
            parse_config(raw, base_dir=str(tmp_path))

    def test_idx_kind_requires_all_four_files(self, tmp_path):
        raw = _minimal(data={"kind": "idx", "train_images": "x.idx"})
        with pytest.raises(ConfigError, match="train_labels|not found"):
            parse_config(raw, base_dir=str(tmp_path))


class TestLoadDatasets:
    def test_synthetic_with_subsample(self):
        raw = _minimal()
        raw["data"]["subsample_train"] = 20
        cfg = parse_config(raw)
        train, test = load_datasets(cfg)
        assert train.n == 20
        assert test.n == 16
        assert train.task == "classification"

    def test_digit_glyphs_kind(self):
        cfg = parse_config(_minimal(
            model={"in_shape": [784], "out_dim": 10, "hidden": [16]},
            data={"kind": "digit_glyphs", "n_train": 12, "n_test": 6}))
        train, test = load_datasets(cfg)
        assert train.x.shape == (12, 28, 28)
        assert test.x.shape == (6, 28, 28)
        assert train.split == "train" and test.split == "test"
        assert not np.array_equal(train.x[:6], test.x)

    def test_uci_csv_kind(self, tmp_path):
        rows = "\n".join(f"{i},{i * 0.5},{i * 2.0}" for i in range(20))
        (tmp_path / "t.csv").write_text(rows + "\n")
        cfg = parse_config(_minimal(
            model={"in_shape": [2], "out_dim": 1, "hidden": [4],
                   "task": "regression"},
            data={"kind": "uci_csv", "path": "t.csv", "split_fraction": 0.8}),
            base_dir=str(tmp_path))
        train, test = load_datasets(cfg)
        assert train.n == 16 and test.n == 4
        assert abs(train.y.mean()) < 1e-8

    def test_idx_kind_with_length_mismatch(self, tmp_path):
        rng = np.random.default_rng(0)
        save_idx(tmp_path / "trx.idx", rng.integers(0, 256, (4, 3, 3), dtype=np.uint8))
        save_idx(tmp_path / "try.idx", np.array([0, 1, 0], dtype=np.uint8))
        save_idx(tmp_path / "tex.idx", rng.integers(0, 256, (2, 3, 3), dtype=np.uint8))
        save_idx(tmp_path / "tey.idx", np.array([1, 0], dtype=np.uint8))
        raw = _minimal(
            model={"in_shape": [9], "out_dim": 2, "hidden": [4]},
            data={"kind": "idx", "train_images": "trx.idx", "train_labels": "try.idx",
                  "test_images": "tex.idx", "test_labels": "tey.idx"})
        cfg = parse_config(raw, base_dir=str(tmp_path))
        with pytest.raises(DataError, match="mismatch"):
            load_datasets(cfg)

    def test_idx_kind_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        save_idx(tmp_path / "trx.idx", rng.integers(0, 256, (4, 3, 3), dtype=np.uint8))
        save_idx(tmp_path / "try.idx", np.array([0, 1, 0, 1], dtype=np.uint8))
        save_idx(tmp_path / "tex.idx", rng.integers(0, 256, (2, 3, 3), dtype=np.uint8))
        save_idx(tmp_path / "tey.idx", np.array([1, 0], dtype=np.uint8))
        raw = _minimal(
            model={"in_shape": [9], "out_dim": 2, "hidden": [4]},
            data={"kind": "idx", "train_images": "trx.idx", "train_labels": "try.idx",
                  "test_images": "tex.idx", "test_labels": "tey.idx"})
        cfg = parse_config(raw, base_dir=str(tmp_path))
        train, test = load_datasets(cfg)
        assert train.n == 4 and test.n == 2
        assert train.x.max() <= 1.0
        assert train.y.dtype == np.int64


class TestLoadOod:
    def test_none_when_unconfigured(self):
        cfg = parse_config(_minimal())
        _, test = load_datasets(cfg)
        assert load_ood(cfg, test) is None

    def test_noise_kind_matches_test_shape(self):
        cfg = parse_config(_minimal(eval={"ood_kind": "noise", "ood_n": 7}))
        _, test = load_datasets(cfg)
        ood = load_ood(cfg, test)
        assert ood.shape == (7,) + test.x.shape[1:]
        assert ood.min() >= 0.0 and ood.max() <= 1.0

    def test_glyph_negatives_inverted(self):
        cfg = parse_config(_minimal(
            model={"in_shape": [784], "out_dim": 10, "hidden": [8]},
            data={"kind": "digit_glyphs", "n_train": 8, "n_test": 4},
            eval={"ood_kind": "glyph_negatives", "ood_n": 4}))
        _, test = load_datasets(cfg)
        ood = load_ood(cfg, test)
        assert ood.shape == (4, 28, 28)
        # negatives are bright where glyphs are dark
        assert ood.mean() > 0.5

    def test_idx_ood_kind(self, tmp_path):
        rng = np.random.default_rng(2)
        save_idx(tmp_path / "ood.idx", rng.integers(0, 256, (3, 4, 4), dtype=np.uint8))
        cfg = parse_config(_minimal(eval={"ood_kind": "idx", "ood_images": "ood.idx"}),
                           base_dir=str(tmp_path))
        _, test = load_datasets(cfg)
        assert load_ood(cfg, test).shape == (3, 4, 4)

    def test_unknown_kind_rejected(self):
        cfg = parse_config(_minimal(eval={"ood_kind": "aliens", "ood_n": 3}))
        _, test = load_datasets(cfg)
        with pytest.raises(ConfigError, match="ood_kind"):
            load_ood(cfg, test)

"""JSON run configuration: strict parsing into the typed specs.

A config file is one JSON object with sections ``model``, ``prior``,
``sampler``, ``data`` and ``eval`` plus top-level ``temperature_grid``,
``prior_families`` and ``chains``. Unknown keys anywhere are rejected, so a
typo cannot silently fall back to a default. Validation errors raise
ConfigError; unreadable or malformed data files raise DataError later, at
load time.

Relative dataset paths are resolved against the config file's directory,
then the current directory, then ``TBNN_DATA_DIR``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import data as datamod
from .data import Dataset
from .errors import ConfigError, DataError
from .models import ModelSpec
from .priors import PriorSpec
from .samplers import SamplerConfig

_SYNTHETIC_KINDS = ("two_gaussians", "two_moons", "quadratic_regression", "digit_glyphs")

_DATA_KEYS = {
    "kind", "path", "target_column", "split_seed", "split_fraction",
    "train_images", "train_labels", "test_images", "test_labels",
    "n_train", "n_test", "noise", "seed", "subsample_train", "subsample_test",
    "subsample_seed", "stratified",
}
_EVAL_KEYS = {"ood_kind", "ood_images", "ood_n", "rotation_angles", "ece_bins"}
_TOP_KEYS = {"model", "prior", "sampler", "data", "eval", "temperature_grid",
             "prior_families", "chains"}


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec
    prior: PriorSpec
    sampler: SamplerConfig
    data: dict
    eval: dict = field(default_factory=dict)
    temperature_grid: tuple[float, ...] = (1.0,)
    prior_families: tuple[str, ...] = ()
    chains: int = 5
    base_dir: str = "."


def _check_keys(section: str, given: dict, allowed: set[str]) -> None:
    unknown = set(given) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)} "
                          f"(allowed: {sorted(allowed)})")


def _build(section: str, cls, given: dict):
    spec_fields = {f.name for f in fields(cls)}
    _check_keys(section, given, spec_fields)
    coerced = dict(given)
    for k in ("in_shape", "hidden"):
        if k in coerced and isinstance(coerced[k], list):
            coerced[k] = tuple(coerced[k])
    try:
        return cls(**coerced)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid {section} section: {exc}") from exc


def load_config(path, seed_override: int | None = None) -> RunConfig:
    """Parse and validate one JSON config file."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc
    return parse_config(raw, base_dir=str(p.parent), seed_override=seed_override)


def parse_config(raw: dict, base_dir: str = ".",
                 seed_override: int | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys("config", raw, _TOP_KEYS)
    if "model" not in raw:
        raise ConfigError("config needs a 'model' section")
    if "data" not in raw:
        raise ConfigError("config needs a 'data' section")

    model = _build("model", ModelSpec, raw["model"])
    prior = _build("prior", PriorSpec, raw.get("prior", {}))
    sampler_raw = dict(raw.get("sampler", {}))
    if seed_override is not None:
        sampler_raw["seed"] = seed_override
    sampler = _build("sampler", SamplerConfig, sampler_raw)

    data_sec = dict(raw.get("data", {}))
    _check_keys("data", data_sec, _DATA_KEYS)
    kind = data_sec.get("kind")
    if kind is None:
        raise ConfigError("data section needs 'kind'")
    if kind not in _SYNTHETIC_KINDS + ("idx", "uci_csv"):
        raise ConfigError(f"unknown data kind {kind!r}")

    eval_sec = dict(raw.get("eval", {}))
    _check_keys("eval", eval_sec, _EVAL_KEYS)
    if "ece_bins" in eval_sec and int(eval_sec["ece_bins"]) < 1:
        raise ConfigError("eval.ece_bins must be >= 1")

    grid = raw.get("temperature_grid", [sampler.temperature])
    if not isinstance(grid, (list, tuple)) or not grid:
        raise ConfigError("temperature_grid must be a non-empty list")
    if any(not isinstance(t, (int, float)) or t <= 0 for t in grid):
        raise ConfigError(f"temperature_grid entries must be > 0, got {grid}")

    families = tuple(raw.get("prior_families", []))
    for fam in families:
        _build("prior_families entry", PriorSpec, {**raw.get("prior", {}), "family": fam})

    chains = raw.get("chains", 5)
    if not isinstance(chains, int) or chains < 1:
        raise ConfigError(f"chains must be a positive integer, got {chains!r}")

    cfg = RunConfig(model=model, prior=prior, sampler=sampler, data=data_sec,
                    eval=eval_sec, temperature_grid=tuple(float(t) for t in grid),
                    prior_families=families, chains=chains, base_dir=base_dir)
    _validate_paths(cfg)
    return cfg


def resolve_path(name: str, base_dir: str = ".") -> Path:
    """Locate a data file: config dir, then cwd, then TBNN_DATA_DIR."""
    cand = Path(name)
    if cand.is_absolute():
        if cand.exists():
            return cand
        raise ConfigError(f"data path not found: {cand}")
    for root in (Path(base_dir), Path.cwd(), Path(os.environ.get("TBNN_DATA_DIR", ""))):
        if str(root) and (root / cand).exists():
            return root / cand
    raise ConfigError(f"data path not found: {name} (searched config dir, cwd, TBNN_DATA_DIR)")


def _path_keys(data_sec: dict) -> list[str]:
    kind = data_sec.get("kind")
    if kind == "idx":
        return ["train_images", "train_labels", "test_images", "test_labels"]
    if kind == "uci_csv":
        return ["path"]
    return []


def _validate_paths(cfg: RunConfig) -> None:
    for key in _path_keys(cfg.data):
        if key not in cfg.data:
            raise ConfigError(f"data kind {cfg.data['kind']!r} needs '{key}'")
        resolve_path(cfg.data[key], cfg.base_dir)
    if cfg.eval.get("ood_kind") == "idx":
        if "ood_images" not in cfg.eval:
            raise ConfigError("eval.ood_kind 'idx' needs 'ood_images'")
        resolve_path(cfg.eval["ood_images"], cfg.base_dir)


def load_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    """Materialize (train, test) datasets from the data section."""
    sec = cfg.data
    kind = sec["kind"]
    seed = int(sec.get("seed", 0))
    if kind == "idx":
        xs, ys = {}, {}
        for split in ("train", "test"):
            x = datamod.load_idx(resolve_path(sec[f"{split}_images"], cfg.base_dir))
            y = datamod.load_idx(resolve_path(sec[f"{split}_labels"], cfg.base_dir))
            if x.shape[0] != y.shape[0]:
                raise DataError(f"{split} images/labels length mismatch: "
                                f"{x.shape[0]} vs {y.shape[0]}")
            xs[split], ys[split] = x, y
        n_classes = cfg.model.out_dim
        train = Dataset(xs["train"], ys["train"], task=cfg.model.task,
                        n_classes=n_classes, split="train")
        test = Dataset(xs["test"], ys["test"], task=cfg.model.task,
                       n_classes=n_classes, split="test")
    elif kind == "uci_csv":
        train, test = datamod.load_uci_csv(
            resolve_path(sec["path"], cfg.base_dir),
            target_column=int(sec.get("target_column", -1)),
            split_seed=int(sec.get("split_seed", 0)),
            split_fraction=float(sec.get("split_fraction", 0.9)))
    elif kind == "digit_glyphs":
        train = datamod.make_digit_glyphs(int(sec.get("n_train", 2000)), seed=seed)
        test = datamod.make_digit_glyphs(int(sec.get("n_test", 1000)), seed=seed + 1)
        train.split, test.split = "train", "test"
    else:
        noise = float(sec.get("noise", 0.1))
        train = datamod.make_synthetic(kind, int(sec.get("n_train", 256)), noise, seed)
        test = datamod.make_synthetic(kind, int(sec.get("n_test", 256)), noise, seed + 1)
        train.split, test.split = "train", "test"

    strat = bool(sec.get("stratified", True))
    sub_seed = int(sec.get("subsample_seed", 0))
    if "subsample_train" in sec:
        train = datamod.subsample(train, int(sec["subsample_train"]), sub_seed, strat)
    if "subsample_test" in sec:
        test = datamod.subsample(test, int(sec["subsample_test"]), sub_seed + 1, strat)
    return train, test


def load_ood(cfg: RunConfig, test: Dataset):
    """Out-of-distribution inputs for OOD metrics, or None if unconfigured."""
    kind = cfg.eval.get("ood_kind")
    if kind is None:
        return None
    n = int(cfg.eval.get("ood_n", test.n))
    if kind == "idx":
        return datamod.load_idx(resolve_path(cfg.eval["ood_images"], cfg.base_dir))
    if kind == "noise":
        import numpy as np

        rng = np.random.default_rng(int(cfg.data.get("seed", 0)) + 2)
        return rng.uniform(0.0, 1.0, size=(n,) + test.x.shape[1:])
    if kind == "glyph_negatives":
        ds = datamod.make_digit_glyphs(n, seed=int(cfg.data.get("seed", 0)) + 2)
        return 1.0 - ds.x  # inverted glyphs: in-format but off-manifold
    raise ConfigError(f"unknown eval.ood_kind {kind!r}")

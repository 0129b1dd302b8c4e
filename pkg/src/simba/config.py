"""Run configuration: JSON loading, schema checks, object construction.

Configs are plain JSON.  Validation errors carry the exact field path
(``optim.base_lr``, ``data.csv.path``) and malformed JSON reports its
byte offset.  A run names exactly one data source; referenced files must
exist at load time.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from typing import Optional

from . import data as D
from .errors import ConfigError
from .model import ForecastConfig, ForecastModel, VisionConfig, VisionModel
from .rng import substream
from .train import OptimConfig

DATA_SOURCES = ("synthetic_series", "synthetic_images", "csv", "blob")


@dataclass
class RunConfig:
    task: str
    seed: int
    out_dir: Optional[str]
    model_overrides: dict
    optim: OptimConfig
    data_source: str
    data_spec: dict


def _expect(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


def _typed(raw: dict, path: str, key: str, types, default=None, required: bool = False):
    if key not in raw:
        _expect(not required, f"{path}.{key}" if path else key, "missing required field")
        return default
    value = raw[key]
    if types is float:
        types = (int, float)
    tname = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
    bool_ok = types is bool or (isinstance(types, tuple) and bool in types)
    if not isinstance(value, types) or (isinstance(value, bool) and not bool_ok):
        raise ConfigError(
            f"{path}.{key}" if path else key, f"expected {tname}, got {type(value).__name__}"
        )
    return value


def parse_json(text: str, origin: str = "<config>") -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(origin, f"malformed JSON at byte offset {e.pos}: {e.msg}")


def load_run_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError("config", f"file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        raw = parse_json(f.read(), origin=path)
    return validate_run_config(raw)


def _check_unknown(raw: dict, path: str, allowed) -> None:
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown field")


def validate_run_config(raw: dict) -> RunConfig:
    _expect(isinstance(raw, dict), "", "config root must be a JSON object")
    _check_unknown(raw, "", ("task", "seed", "out_dir", "model", "optim", "data"))
    task = _typed(raw, "", "task", str, required=True)
    _expect(task in ("vision", "forecast"), "task", f"expected 'vision' or 'forecast', got {task!r}")
    seed = _typed(raw, "", "seed", int, default=0)
    out_dir = _typed(raw, "", "out_dir", str, default=None)

    model_raw = _typed(raw, "", "model", dict, default={})
    allowed_model = {f.name for f in fields(VisionConfig if task == "vision" else ForecastConfig)}
    _check_unknown(model_raw, "model", allowed_model)

    optim_raw = _typed(raw, "", "optim", dict, default={})
    allowed_optim = {f.name for f in fields(OptimConfig)}
    _check_unknown(optim_raw, "optim", allowed_optim)
    if "betas" in optim_raw:
        betas = optim_raw["betas"]
        _expect(
            isinstance(betas, list) and len(betas) == 2,
            "optim.betas",
            "expected a [beta1, beta2] pair",
        )
        optim_raw = {**optim_raw, "betas": tuple(betas)}
    optim_raw.setdefault("seed", seed)
    if task == "forecast":
        optim_raw.setdefault("grad_clip_norm", 1.0)
    try:
        optim = OptimConfig(**optim_raw)
    except (TypeError, ValueError) as e:
        raise ConfigError("optim", str(e))

    data_raw = _typed(raw, "", "data", dict, required=True)
    sources = [k for k in data_raw if k in DATA_SOURCES]
    _check_unknown(data_raw, "data", DATA_SOURCES)
    _expect(len(sources) == 1, "data", f"exactly one data source required, got {sources or 'none'}")
    source = sources[0]
    spec = data_raw[source]
    _expect(isinstance(spec, dict), f"data.{source}", "expected a JSON object")
    _validate_data_spec(task, source, spec)
    return RunConfig(
        task=task,
        seed=seed,
        out_dir=out_dir,
        model_overrides=dict(model_raw),
        optim=optim,
        data_source=source,
        data_spec=dict(spec),
    )


def _validate_data_spec(task: str, source: str, spec: dict) -> None:
    path = f"data.{source}"
    if source == "synthetic_series":
        _expect(task == "forecast", path, "series data requires task 'forecast'")
        _check_unknown(
            spec,
            path,
            (
                "channels", "total_len", "lookback", "horizon", "components_min",
                "components_max", "periods", "amplitude_low", "amplitude_high",
                "trend_scale", "noise_std", "coupling",
            ),
        )
        _typed(spec, path, "channels", int, required=True)
        _typed(spec, path, "total_len", int, required=True)
    elif source == "synthetic_images":
        _expect(task == "vision", path, "image data requires task 'vision'")
        _check_unknown(spec, path, ("classes", "per_class", "size"))
        _typed(spec, path, "classes", int, required=True)
        _typed(spec, path, "per_class", int, required=True)
    elif source == "csv":
        _expect(task == "forecast", path, "CSV data requires task 'forecast'")
        _check_unknown(spec, path, ("path", "date_col", "lookback", "horizon"))
        csv_path = _typed(spec, path, "path", str, required=True)
        _expect(os.path.exists(csv_path), f"{path}.path", f"file not found: {csv_path}")
    else:  # blob
        _check_unknown(spec, path, ("stem",))
        stem = _typed(spec, path, "stem", str, required=True)
        _expect(os.path.exists(stem + ".json"), f"{path}.stem", f"container not found: {stem}.json")


def build_dataset(cfg: RunConfig):
    spec = cfg.data_spec
    if cfg.data_source == "synthetic_series":
        series_spec = D.SeriesSpec(
            components_min=spec.get("components_min", 2),
            components_max=spec.get("components_max", 4),
            periods=tuple(spec.get("periods", (12, 24, 48, 96, 168))),
            amplitude_low=spec.get("amplitude_low", 0.5),
            amplitude_high=spec.get("amplitude_high", 1.5),
            trend_scale=spec.get("trend_scale", 0.5),
            noise_std=spec.get("noise_std", 0.1),
            coupling=spec.get("coupling", 0.3),
        )
        return D.gen_synthetic_series(
            cfg.seed,
            spec["channels"],
            spec["total_len"],
            spec=series_spec,
            lookback=spec.get("lookback", 96),
            horizon=spec.get("horizon", 96),
        )
    if cfg.data_source == "synthetic_images":
        return D.gen_synthetic_images(
            cfg.seed, spec["classes"], spec["per_class"], spec.get("size", 32)
        )
    if cfg.data_source == "csv":
        return D.load_csv_series(
            spec["path"],
            date_col_present=spec.get("date_col", True),
            lookback=spec.get("lookback", 96),
            horizon=spec.get("horizon", 96),
        )
    from . import container

    manifest, _ = container.load_arrays(spec["stem"])
    if manifest.get("kind") == "series":
        return D.SeriesDataset.load(spec["stem"])
    return D.ImageDataset.load(spec["stem"])


def build_model(cfg: RunConfig, dataset):
    overrides = dict(cfg.model_overrides)
    overrides.setdefault("dropout", cfg.optim.dropout)
    rng = substream(cfg.seed, "init")
    try:
        if cfg.task == "vision":
            overrides.setdefault("num_classes", dataset.num_classes)
            overrides.setdefault("image_size", dataset.images.shape[-1])
            for key in ("stage_dims", "stage_depths"):
                if key in overrides:
                    overrides[key] = tuple(overrides[key])
            return VisionModel(VisionConfig(**overrides), rng)
        overrides.setdefault("num_channels", dataset.num_channels)
        overrides.setdefault("lookback", dataset.lookback)
        overrides.setdefault("horizon", dataset.horizon)
        mcfg = ForecastConfig(**overrides)
        _expect(
            mcfg.num_channels == dataset.num_channels,
            "model.num_channels",
            f"{mcfg.num_channels} does not match dataset channels {dataset.num_channels}",
        )
        _expect(
            mcfg.lookback == dataset.lookback and mcfg.horizon == dataset.horizon,
            "model.lookback",
            "model lookback/horizon must match the dataset windowing",
        )
        return ForecastModel(mcfg, rng)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError("model", str(e))

"""Model checkpointing on top of the blob + manifest container.

A checkpoint stores every parameter exactly once (little-endian, indexed
by name), plus the model config, training step, RNG states, and the
forecaster's standardization statistics when present.  Loading rebuilds
the model from its config and overwrites the freshly-initialized buffers,
so a save/load roundtrip reproduces forward outputs bit for bit.
"""

from __future__ import annotations

from dataclasses import asdict
from typing import Union

import numpy as np

from . import container
from .errors import DataError
from .model import ForecastConfig, ForecastModel, VisionConfig, VisionModel
from .rng import substream

Model = Union[VisionModel, ForecastModel]


def save_checkpoint(stem: str, model: Model, step: int = 0, rng_states: dict | None = None) -> None:
    params = {name: t.data for name, t in model.named_parameters().items()}
    extra = {
        "kind": "checkpoint",
        "task": "vision" if isinstance(model, VisionModel) else "forecast",
        "model_config": asdict(model.cfg),
        "step": int(step),
        "rng_state": rng_states or {},
    }
    standardization = getattr(model, "standardization", None)
    if standardization is not None:
        extra["standardization"] = standardization
    container.save_arrays(stem, params, extra)


def _config_from_dict(task: str, raw: dict):
    raw = dict(raw)
    for key in ("stage_dims", "stage_depths", "betas", "fractions"):
        if key in raw and isinstance(raw[key], list):
            raw[key] = tuple(raw[key])
    if task == "vision":
        return VisionConfig(**raw)
    if task == "forecast":
        return ForecastConfig(**raw)
    raise DataError(f"checkpoint: unknown task {task!r}")


def load_checkpoint(stem: str) -> tuple[Model, dict]:
    """Rebuild the model and return it with the manifest."""
    manifest, arrays = container.load_arrays(stem)
    if manifest.get("kind") != "checkpoint":
        raise DataError(f"container at {stem!r} is not a checkpoint")
    cfg = _config_from_dict(manifest["task"], manifest["model_config"])
    model_cls = VisionModel if manifest["task"] == "vision" else ForecastModel
    model = model_cls(cfg, substream(0, "checkpoint-load"))
    params = model.named_parameters()
    missing = sorted(set(params) - set(arrays))
    extraneous = sorted(set(arrays) - set(params))
    if missing or extraneous:
        raise DataError(
            f"checkpoint: parameter index mismatch (missing {missing[:3]}, extraneous {extraneous[:3]})"
        )
    for name, t in params.items():
        arr = arrays[name]
        if tuple(arr.shape) != t.shape:
            raise DataError(f"checkpoint: {name} has shape {arr.shape}, model expects {t.shape}")
        t.data = np.ascontiguousarray(arr.astype(t.data.dtype, copy=False))
    if "standardization" in manifest:
        model.standardization = manifest["standardization"]
    return model, manifest

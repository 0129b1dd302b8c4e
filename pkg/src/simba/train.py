"""Optimizer, schedule, losses, metrics, and the train/eval loops.

Everything here is deterministic given (seed, config, dataset): batch
order, dropout masks, and parameter updates all draw from named
substreams of the single run seed.  Non-finite losses or gradients are
flagged and their update skipped rather than crashing, so unstable
configurations remain observable end to end.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import data as D
from . import tensor as T
from .errors import ParameterError, ShapeError
from .model import VisionModel
from .rng import generator_state, substream
from .tensor import Tensor


@dataclass
class OptimConfig:
    """Hyperparameters of one training run."""

    base_lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.05
    warmup_epochs: Optional[float] = None  # None: warm up over 5% of total steps
    total_epochs: int = 1
    max_steps: Optional[int] = None
    label_smoothing: float = 0.0
    dropout: float = 0.1
    grad_clip_norm: Optional[float] = None
    batch_size: int = 32
    seed: int = 0
    abort_after_nonfinite: Optional[int] = None  # consecutive bad steps; None: never abort
    eval_each_epoch: bool = True
    checkpoint_every_epochs: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ParameterError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.warmup_epochs is not None and self.warmup_epochs > self.total_epochs:
            raise ParameterError(
                f"warmup_epochs {self.warmup_epochs} exceeds total_epochs {self.total_epochs}"
            )
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be positive, got {self.batch_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class LrSchedule:
    """Linear warmup to ``base_lr``, then cosine decay to zero."""

    base_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.total_steps < 1:
            raise ParameterError("schedule needs at least one step")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ParameterError(
                f"warmup_steps {self.warmup_steps} outside [0, {self.total_steps}]"
            )


def lr_schedule(step: int, sched: LrSchedule) -> float:
    """Learning rate at an optimizer step (0-based)."""
    if step < 0:
        raise ParameterError(f"step must be >= 0, got {step}")
    if sched.warmup_steps > 0 and step < sched.warmup_steps:
        return sched.base_lr * step / sched.warmup_steps
    span = max(sched.total_steps - sched.warmup_steps, 1)
    progress = min((step - sched.warmup_steps) / span, 1.0)
    return sched.base_lr * 0.5 * (1.0 + np.cos(np.pi * progress))


class AdamState:
    """First/second moment buffers plus the bias-correction step count."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.step = 0


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: OptimConfig,
    lr_t: float,
) -> bool:
    """One decoupled-weight-decay update, in place.

    Returns False (and updates nothing, not even the step count) if any
    gradient contains a non-finite value.
    """
    for g in grads.values():
        if not np.isfinite(g).all():
            return False
    beta1, beta2 = cfg.betas
    state.step += 1
    t = state.step
    corr1 = 1.0 - beta1**t
    corr2 = 1.0 - beta2**t
    for name in sorted(params):
        p, g = params[name], grads[name]
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if cfg.weight_decay:
            p.data *= 1.0 - lr_t * cfg.weight_decay
        p.data -= lr_t * (m / corr1) / (np.sqrt(v / corr2) + cfg.eps)
    return True


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    norm = np.sqrt(total)
    if np.isfinite(norm) and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return float(norm)


# -- losses and metrics -------------------------------------------------------


def cross_entropy_smoothed(logits: Tensor, labels: np.ndarray, smoothing: float = 0.0) -> Tensor:
    """Mean cross entropy against label-smoothed targets."""
    if not 0.0 <= smoothing < 1.0:
        raise ParameterError(f"smoothing must be in [0, 1), got {smoothing}")
    logits = T.as_tensor(logits)
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} != ({b},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ParameterError(f"label out of range [0, {k}): {labels.min()}..{labels.max()}")
    target = np.full((b, k), smoothing / k, dtype=np.float64)
    target[np.arange(b), labels] += 1.0 - smoothing
    lse = T.logsumexp(logits, axis=-1)
    dot = T.sum_(T.mul(logits, Tensor(target, dtype=logits.dtype)), axis=-1)
    return T.mean(T.sub(lse, dot))


def mse(pred, target) -> Tensor:
    pred, target = T.as_tensor(pred), T.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {target.shape} differ")
    diff = T.sub(pred, target)
    return T.mean(T.mul(diff, diff))


def mae(pred, target) -> Tensor:
    pred, target = T.as_tensor(pred), T.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mae: shapes {pred.shape} and {target.shape} differ")
    return T.mean(T.abs_(T.sub(pred, target)))


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((logits.argmax(axis=-1) == labels).mean())


# -- report and loops ---------------------------------------------------------


@dataclass
class TrainReport:
    """Everything a run produced, in memory."""

    step_losses: list = field(default_factory=list)
    epoch_metrics: list = field(default_factory=list)  # dicts: step, split, metric, value
    nonfinite_count: int = 0
    skipped_steps: int = 0
    aborted: bool = False
    wall_time: float = 0.0
    checkpoint_stem: Optional[str] = None
    final_metrics: dict = field(default_factory=dict)

    @property
    def nonfinite_flag(self) -> bool:
        return self.nonfinite_count > 0

    def record_metric(self, step: int, split: str, metric: str, value: float) -> None:
        self.epoch_metrics.append({"step": step, "split": split, "metric": metric, "value": value})


def write_metrics_csv(path: str, report: TrainReport) -> None:
    """Write the run's observations: columns step, split, metric, value."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    lines = ["step,split,metric,value"]
    for step, loss in enumerate(report.step_losses):
        lines.append(f"{step},train,loss,{loss!r}")
    for row in report.epoch_metrics:
        lines.append(f"{row['step']},{row['split']},{row['metric']},{row['value']!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def _steps_per_epoch(dataset, batch: int) -> int:
    if isinstance(dataset, D.ImageDataset):
        return (len(dataset) + batch - 1) // batch
    starts = dataset.window_starts("train")
    return (starts.size + batch - 1) // batch


def _train_batches(dataset, batch: int, rng: np.random.Generator):
    if isinstance(dataset, D.ImageDataset):
        yield from D.image_batches(dataset, batch, shuffle=True, rng=rng)
    else:
        yield from D.window_iter(dataset, "train", batch, shuffle=True, rng=rng)


def _batch_loss(model, batch, cfg: OptimConfig, train: bool, rng) -> Tensor:
    dtype = model.cfg.dtype
    if isinstance(model, VisionModel):
        images, labels = batch
        logits = model.forward(Tensor(images, dtype=dtype), train=train, rng=rng)
        return cross_entropy_smoothed(logits, labels, cfg.label_smoothing)
    x, y = batch
    pred = model.forward(Tensor(x, dtype=dtype), train=train, rng=rng)
    return mse(pred, Tensor(y, dtype=dtype))


def evaluate(model, dataset, split: str = "test", batch: int = 64) -> dict:
    """Pure metric computation on a frozen model; never mutates anything.

    Vision: top-1 accuracy and unsmoothed cross entropy.  Forecast: MSE
    and MAE on de-standardized values.
    """
    dtype = model.cfg.dtype
    with T.no_grad():
        if isinstance(model, VisionModel):
            if split not in ("train", "all"):
                pass  # image sets are not split; evaluated whole
            total, correct, ce_sum = 0, 0.0, 0.0
            for images, labels in D.image_batches(dataset, batch):
                logits = model.forward(Tensor(images, dtype=dtype))
                ce = cross_entropy_smoothed(logits, labels, 0.0)
                n = len(labels)
                total += n
                correct += accuracy(logits.numpy(), labels) * n
                ce_sum += ce.item() * n
            return {"top1": correct / total, "ce": ce_sum / total}
        se_sum, ae_sum, count = 0.0, 0.0, 0
        for x, y in D.window_iter(dataset, split, batch):
            pred = model.forward(Tensor(x, dtype=dtype)).numpy().astype(np.float64)
            pred = dataset.destandardize(pred)
            target = dataset.destandardize(y)
            se_sum += float(((pred - target) ** 2).sum())
            ae_sum += float(np.abs(pred - target).sum())
            count += target.size
        return {"mse": se_sum / count, "mae": ae_sum / count}


def train_loop(
    model,
    dataset,
    cfg: OptimConfig,
    out_dir: Optional[str] = None,
    quiet: bool = True,
) -> TrainReport:
    """Run the optimization loop; returns the full report.

    With ``out_dir`` set, writes ``metrics.csv`` and a final checkpoint
    (and periodic ones at the configured cadence).  Zero-epoch runs write
    the initial checkpoint and an empty loss series.
    """
    from . import checkpoint as ckpt  # local import; checkpoint depends on model

    t_start = time.perf_counter()
    report = TrainReport()
    params = model.named_parameters()
    state = AdamState(params)
    data_rng = substream(cfg.seed, "data")
    dropout_rng = substream(cfg.seed, "dropout")

    if isinstance(dataset, D.SeriesDataset):
        model.standardization = {"mean": dataset.mean.tolist(), "std": dataset.std.tolist()}

    spe = _steps_per_epoch(dataset, cfg.batch_size)
    total_steps = cfg.total_epochs * spe
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)
    warmup = (
        int(round(cfg.warmup_epochs * spe))
        if cfg.warmup_epochs is not None
        else max(1, int(round(0.05 * total_steps)))
    )
    sched = LrSchedule(cfg.base_lr, min(warmup, total_steps), max(total_steps, 1))

    step = 0
    consecutive_bad = 0
    done = total_steps == 0
    epoch = 0
    while not done:
        for batch in _train_batches(dataset, cfg.batch_size, data_rng):
            loss = _batch_loss(model, batch, cfg, train=True, rng=dropout_rng)
            loss_val = loss.item()
            report.step_losses.append(loss_val)
            if not np.isfinite(loss_val):
                report.nonfinite_count += 1
                report.skipped_steps += 1
                consecutive_bad += 1
                T.clear_tape()
            else:
                T.backward(loss)
                grads = {k: np.asarray(t.grad) for k, t in params.items()}
                if cfg.grad_clip_norm is not None:
                    clip_global_norm(grads, cfg.grad_clip_norm)
                stepped = adamw_step(params, grads, state, cfg, lr_schedule(step, sched))
                if stepped:
                    consecutive_bad = 0
                else:
                    report.nonfinite_count += 1
                    report.skipped_steps += 1
                    consecutive_bad += 1
                for t in params.values():
                    t.zero_grad()
            step += 1
            if (
                cfg.abort_after_nonfinite is not None
                and consecutive_bad >= cfg.abort_after_nonfinite
            ):
                report.aborted = True
                done = True
                break
            if step >= total_steps:
                done = True
                break
        epoch += 1
        if not quiet and report.step_losses:
            print(f"epoch {epoch}: step {step}, loss {report.step_losses[-1]:.4f}")
        if cfg.eval_each_epoch and isinstance(dataset, D.SeriesDataset) and not report.aborted:
            try:
                metrics = evaluate(model, dataset, "val")
                for k, v in metrics.items():
                    report.record_metric(step, "val", k, v)
            except Exception:
                pass  # val split may be too short for a window; not an error
        if (
            out_dir
            and cfg.checkpoint_every_epochs
            and epoch % cfg.checkpoint_every_epochs == 0
            and not done
        ):
            ckpt.save_checkpoint(
                os.path.join(out_dir, f"ckpt_epoch{epoch}"),
                model,
                step=step,
                rng_states={"data": generator_state(data_rng), "dropout": generator_state(dropout_rng)},
            )

    if isinstance(dataset, D.SeriesDataset):
        try:
            final = evaluate(model, dataset, "test")
            for k, v in final.items():
                report.record_metric(step, "test", k, v)
            report.final_metrics = final
        except Exception:
            pass
    else:
        final = evaluate(model, dataset)
        for k, v in final.items():
            report.record_metric(step, "eval", k, v)
        report.final_metrics = final

    if out_dir:
        stem = os.path.join(out_dir, "ckpt_final")
        ckpt.save_checkpoint(
            stem,
            model,
            step=step,
            rng_states={"data": generator_state(data_rng), "dropout": generator_state(dropout_rng)},
        )
        report.checkpoint_stem = stem
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), report)
    report.wall_time = time.perf_counter() - t_start
    return report

"""Train the forecaster on a synthetic multivariate series.

Generates a coupled sinusoid-plus-trend series, trains a small model for
a few hundred steps, and compares against the persistence baseline
(repeat the last observed value).  Writes a forecast plot next to this
script if matplotlib is importable.

Run:  python demos/04_train_forecaster.py          (~2 minutes on CPU)
"""

import os

import numpy as np

from simba import data as D
from simba import model as M
from simba import tensor as T
from simba import train as TR
from simba.rng import substream
from simba.tensor import Tensor

SEED = 0
STEPS = 400

series = D.gen_synthetic_series(SEED, channels=7, total_len=6000, lookback=96, horizon=96)
print(f"series: {series.total_len} x {series.num_channels}, "
      f"train/val/test = {series.train_end}/{series.val_end - series.train_end}/"
      f"{series.total_len - series.val_end}")

# persistence: the skill floor every model must clear
se, count = 0.0, 0
for x, y in D.window_iter(series, "test", batch=256):
    pred = D.persistence_forecast(series.destandardize(x), series.horizon)
    target = series.destandardize(y)
    se += ((pred - target) ** 2).sum()
    count += target.size
persistence_mse = se / count
print(f"persistence baseline test MSE: {persistence_mse:.4f}")

cfg = M.ForecastConfig(num_channels=7, lookback=96, horizon=96, dim=32, depth=2,
                       dtype="real32", dropout=0.1)
model = M.ForecastModel(cfg, substream(SEED, "init"))
print(f"model parameters: {sum(t.size for t in model.named_parameters().values())}")

optim = TR.OptimConfig(total_epochs=100, max_steps=STEPS, batch_size=32, base_lr=2e-3,
                       weight_decay=0.01, grad_clip_norm=1.0, dropout=0.1,
                       eval_each_epoch=False, seed=SEED)
report = TR.train_loop(model, series, optim, quiet=False)
print(f"\ntrained {len(report.step_losses)} steps in {report.wall_time:.0f}s, "
      f"loss {report.step_losses[0]:.3f} -> {report.step_losses[-1]:.3f}")
print(f"test MSE {report.final_metrics['mse']:.4f} "
      f"({report.final_metrics['mse'] / persistence_mse:.1%} of persistence)")

# one qualitative window from the test split
start = int(series.window_starts("test")[0])
x_raw, y_raw = series.window(start, standardized=False)
with T.no_grad():
    pred = model.forward(Tensor(series.standardize(x_raw)[None], dtype=cfg.dtype)).numpy()[0]
pred = series.destandardize(pred.astype(np.float64))

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(3, 1, figsize=(9, 7), sharex=True)
    t_in = np.arange(-96, 0)
    t_out = np.arange(96)
    for ax, ch in zip(axes, range(3)):
        ax.plot(t_in, x_raw[:, ch], color="gray", label="lookback")
        ax.plot(t_out, y_raw[:, ch], color="black", label="truth")
        ax.plot(t_out, pred[:, ch], color="tab:red", label="forecast")
        ax.plot(t_out, x_raw[-1, ch] * np.ones(96), color="tab:blue", ls=":", label="persistence")
        ax.set_ylabel(series.channel_names[ch])
    axes[0].legend(ncol=4, fontsize=8)
    axes[-1].set_xlabel("steps relative to forecast origin")
    out = os.path.join(os.path.dirname(__file__), "forecast_demo.png")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print(f"wrote {out}")
except ImportError:
    print("matplotlib not available; skipping the plot")

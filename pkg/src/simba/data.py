"""Synthetic dataset generation and CSV ingestion.

Time series are chronological with leak-free windowing: a
(lookback + horizon) window belongs to the split containing its final
timestamp, and standardization statistics come from the training split
only.  All generators are deterministic functions of their seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import container
from .errors import CsvFormatError, CsvParseError, DataError
from .rng import substream

SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.7, 0.1, 0.2)


# -- multivariate series -----------------------------------------------------


@dataclass
class SeriesDataset:
    """A multivariate series with windowing and standardization metadata."""

    values: np.ndarray  # (T_total, C) float64
    channel_names: list[str]
    lookback: int = 96
    horizon: int = 96
    fractions: tuple = DEFAULT_FRACTIONS
    mean: np.ndarray = field(init=False)
    std: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"series values must be (time, channels), got {self.values.shape}")
        if len(self.channel_names) != self.values.shape[1]:
            raise DataError(
                f"{len(self.channel_names)} channel names for {self.values.shape[1]} channels"
            )
        if abs(sum(self.fractions) - 1.0) > 1e-9 or any(f < 0 for f in self.fractions):
            raise DataError(f"split fractions must be non-negative and sum to 1, got {self.fractions}")
        if self.lookback < 1 or self.horizon < 1:
            raise DataError("lookback and horizon must be positive")
        train_rows = self.values[: self.train_end]
        if train_rows.shape[0] < 2:
            raise DataError("train split too short to compute statistics")
        self.mean = train_rows.mean(axis=0)
        self.std = train_rows.std(axis=0)
        # float noise makes a constant channel's std ~1e-16 |mean|, not 0
        floor = 1e-10 * np.maximum(1.0, np.abs(self.mean))
        flat = np.flatnonzero(self.std <= floor)
        if flat.size:
            raise DataError(f"constant channel {self.channel_names[flat[0]]!r} in train split")

    # split boundaries (row indices, exclusive ends)

    @property
    def total_len(self) -> int:
        return self.values.shape[0]

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]

    @property
    def train_end(self) -> int:
        return int(self.fractions[0] * self.total_len)

    @property
    def val_end(self) -> int:
        return int((self.fractions[0] + self.fractions[1]) * self.total_len)

    def split_bounds(self, split: str) -> tuple[int, int]:
        if split == "train":
            return 0, self.train_end
        if split == "val":
            return self.train_end, self.val_end
        if split == "test":
            return self.val_end, self.total_len
        raise DataError(f"unknown split {split!r}; expected one of {SPLITS}")

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def destandardize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def window_starts(self, split: str) -> np.ndarray:
        """Start indices of windows whose final timestamp lies in ``split``."""
        lo, hi = self.split_bounds(split)
        span = self.lookback + self.horizon
        first = max(0, lo - span + 1) if lo > 0 else 0
        # final index f = start + span - 1 must satisfy lo <= f < hi
        starts = np.arange(max(0, lo - span + 1), hi - span + 1)
        return starts[starts + span - 1 >= lo]

    def window(self, start: int, standardized: bool = True) -> tuple[np.ndarray, np.ndarray]:
        x = self.values[start : start + self.lookback]
        y = self.values[start + self.lookback : start + self.lookback + self.horizon]
        if standardized:
            return self.standardize(x), self.standardize(y)
        return x.copy(), y.copy()

    def save(self, stem: str) -> None:
        container.save_arrays(
            stem,
            {"values": self.values},
            extra={
                "kind": "series",
                "channel_names": self.channel_names,
                "lookback": self.lookback,
                "horizon": self.horizon,
                "fractions": list(self.fractions),
            },
        )

    @staticmethod
    def load(stem: str) -> "SeriesDataset":
        manifest, arrays = container.load_arrays(stem)
        if manifest.get("kind") != "series":
            raise DataError(f"container at {stem!r} is not a series dataset")
        return SeriesDataset(
            values=arrays["values"],
            channel_names=list(manifest["channel_names"]),
            lookback=int(manifest["lookback"]),
            horizon=int(manifest["horizon"]),
            fractions=tuple(manifest["fractions"]),
        )


def window_iter(
    ds: SeriesDataset,
    split: str,
    batch: int,
    shuffle: bool = False,
    rng: np.random.Generator | None = None,
):
    """Yield standardized ``(inputs, targets)`` batches covering every window once.

    Shuffling applies to the train split only; other splits always stream
    chronologically.
    """
    starts = ds.window_starts(split)
    if starts.size == 0:
        raise DataError(
            f"split {split!r} too short for one lookback+horizon window "
            f"({ds.lookback}+{ds.horizon} over {ds.split_bounds(split)})"
        )
    if shuffle and split == "train":
        if rng is None:
            raise DataError("shuffled iteration requires a generator")
        starts = rng.permutation(starts)
    span = ds.lookback
    for i in range(0, starts.size, batch):
        chunk = starts[i : i + batch]
        xs = np.stack([ds.values[s : s + span] for s in chunk])
        ys = np.stack([ds.values[s + span : s + span + ds.horizon] for s in chunk])
        yield ds.standardize(xs), ds.standardize(ys)


@dataclass
class SeriesSpec:
    """Recipe for one synthetic channel family.

    Each channel is a sum of ``components`` sinusoids with periods drawn
    from ``periods``, plus a linear trend and Gaussian noise; channels are
    then blended by a random mixing matrix when ``coupling > 0`` so that
    cross-channel structure is present and learnable.
    """

    components_min: int = 2
    components_max: int = 4
    periods: tuple = (12, 24, 48, 96, 168)
    amplitude_low: float = 0.5
    amplitude_high: float = 1.5
    trend_scale: float = 0.5
    noise_std: float = 0.1
    coupling: float = 0.3


def gen_synthetic_series(
    seed: int,
    channels: int,
    total_len: int,
    spec: SeriesSpec | None = None,
    lookback: int = 96,
    horizon: int = 96,
    fractions: tuple = DEFAULT_FRACTIONS,
) -> SeriesDataset:
    """Deterministic multivariate series; same seed, same bits."""
    if channels < 1:
        raise DataError(f"need at least one channel, got {channels}")
    spec = spec or SeriesSpec()
    rng = substream(seed, "series")
    t = np.arange(total_len, dtype=np.float64)
    raw = np.zeros((total_len, channels))
    for c in range(channels):
        k = int(rng.integers(spec.components_min, spec.components_max + 1))
        periods = rng.choice(spec.periods, size=min(k, len(spec.periods)), replace=False)
        for p in periods:
            amp = rng.uniform(spec.amplitude_low, spec.amplitude_high)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            raw[:, c] += amp * np.sin(2.0 * np.pi * t / p + phase)
        slope = rng.uniform(-1.0, 1.0) * spec.trend_scale
        raw[:, c] += slope * t / max(total_len - 1, 1)
        if spec.noise_std > 0:
            raw[:, c] += rng.normal(0.0, spec.noise_std, size=total_len)
    if spec.coupling > 0 and channels > 1:
        mix = np.eye(channels) + spec.coupling * rng.normal(size=(channels, channels)) / np.sqrt(channels)
        raw = raw @ mix.T
    names = [f"ch{c}" for c in range(channels)]
    return SeriesDataset(raw, names, lookback=lookback, horizon=horizon, fractions=fractions)


def persistence_forecast(x: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the last observed value across the horizon: the skill floor."""
    last = x[..., -1:, :]
    reps = [1] * (x.ndim - 2) + [horizon, 1]
    return np.tile(last, reps)


# -- CSV ingestion ------------------------------------------------------------


def load_csv_series(
    path: str,
    date_col_present: bool = True,
    lookback: int = 96,
    horizon: int = 96,
    fractions: tuple = DEFAULT_FRACTIONS,
) -> SeriesDataset:
    """Parse a header-bearing numeric CSV into a chronological dataset.

    An optional leading timestamp column is skipped for modeling.  Errors
    name the offending location by 1-based file line.
    """
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file, expected a header row")
        start_col = 1 if date_col_present else 0
        names = [h.strip() for h in header[start_col:]]
        if not names:
            raise CsvFormatError(f"{path}: header has no value columns")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}: row {line_no} has {len(row)} cells, expected {len(header)}"
                )
            parsed = []
            for name, cell in zip(names, row[start_col:]):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise CsvParseError(
                        f"{path}: row {line_no}, column {name!r}: could not parse {cell.strip()!r}"
                    )
            rows.append(parsed)
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    return SeriesDataset(
        np.asarray(rows), names, lookback=lookback, horizon=horizon, fractions=fractions
    )


# -- synthetic images ----------------------------------------------------------


@dataclass
class ImageDataset:
    """Class-labelled images in [0, 1], channels-first."""

    images: np.ndarray  # (M, 3, H, W) float64
    labels: np.ndarray  # (M,) int64
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be (M, C, H, W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError("labels must align with images")
        if self.labels.size and self.labels.max() >= self.num_classes:
            raise DataError(f"label {self.labels.max()} out of range for {self.num_classes} classes")

    def __len__(self) -> int:
        return self.images.shape[0]

    def save(self, stem: str) -> None:
        container.save_arrays(
            stem,
            {"images": self.images, "labels": self.labels},
            extra={"kind": "images", "num_classes": self.num_classes},
        )

    @staticmethod
    def load(stem: str) -> "ImageDataset":
        manifest, arrays = container.load_arrays(stem)
        if manifest.get("kind") != "images":
            raise DataError(f"container at {stem!r} is not an image dataset")
        return ImageDataset(arrays["images"], arrays["labels"], int(manifest["num_classes"]))


def gen_synthetic_images(
    seed: int, classes: int = 10, per_class: int = 500, size: int = 32
) -> ImageDataset:
    """Gaussian blobs plus phase-randomized oriented gratings.

    Class identity is carried by the blob position (visible to a pixel
    centroid) and by the grating orientation/frequency (invisible to a
    centroid because the phase is random), so the set is learnable but not
    linearly trivial.
    """
    rng = substream(seed, "images")
    m = classes * per_class
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    yy = (yy + 0.5) / size - 0.5
    xx = (xx + 0.5) / size - 0.5

    images = np.empty((m, 3, size, size))
    labels = np.repeat(np.arange(classes), per_class).astype(np.int64)
    channel_weights = np.array([1.0, 0.85, 0.7])

    for c in range(classes):
        n = per_class
        theta = np.pi * c / classes
        freq = 3.0 + (c % 4)
        angle = 2.0 * np.pi * c / classes
        base_center = 0.27 * np.array([np.sin(angle), np.cos(angle)])

        phases = rng.uniform(0.0, 2.0 * np.pi, size=n)
        centers = base_center + rng.normal(0.0, 0.12, size=(n, 2))
        grating = np.sin(
            2.0 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta))[None, :, :]
            + phases[:, None, None]
        )
        d2 = (yy[None] - centers[:, 0, None, None]) ** 2 + (xx[None] - centers[:, 1, None, None]) ** 2
        blob = np.exp(-d2 / (2.0 * 0.14**2))
        pattern = 0.22 * grating + 0.28 * blob
        noise = rng.normal(0.0, 0.04, size=(n, size, size))
        stack = 0.5 + (pattern + noise)[:, None, :, :] * channel_weights[None, :, None, None]
        images[c * per_class : (c + 1) * per_class] = np.clip(stack, 0.0, 1.0)

    order = rng.permutation(m)
    return ImageDataset(images[order], labels[order], classes)


def nearest_centroid_accuracy(ds: ImageDataset, train_frac: float = 0.8) -> float:
    """Accuracy of a pixel-space nearest-centroid classifier (holdout split)."""
    m = len(ds)
    cut = int(train_frac * m)
    flat = ds.images.reshape(m, -1)
    centroids = np.stack(
        [flat[:cut][ds.labels[:cut] == c].mean(axis=0) for c in range(ds.num_classes)]
    )
    d2 = ((flat[cut:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    pred = d2.argmin(axis=1)
    return float((pred == ds.labels[cut:]).mean())


def image_batches(
    ds: ImageDataset, batch: int, shuffle: bool = False, rng: np.random.Generator | None = None
):
    """Yield (images, labels) covering the dataset once per epoch."""
    idx = np.arange(len(ds))
    if shuffle:
        if rng is None:
            raise DataError("shuffled iteration requires a generator")
        idx = rng.permutation(idx)
    for i in range(0, idx.size, batch):
        chunk = idx[i : i + batch]
        yield ds.images[chunk], ds.labels[chunk]

"""Windowed feature extraction, standardization and the stratified split."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import BodyMovement
from .simulator import PostureLabel, TimedFrame, label_lookup

DEFAULT_WINDOW = 10
STILL_THRESHOLD = 2.0
SPIKE_THRESHOLD = 15.0

FEATURE_NAMES = (
    "mean_amplitude",
    "std_amplitude",
    "max_amplitude",
    "min_amplitude",
    "amplitude_range",
    "stillness_fraction",
    "spike_count",
    "mean_abs_delta",
)
N_FEATURES = len(FEATURE_NAMES)
N_CLASSES = len(PostureLabel)


class SessionTooShort(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class ClassTooSmall(ValueError):
    pass


@dataclass
class LabeledDataset:
    X: np.ndarray  # (n, 8) float64
    y: np.ndarray  # (n,) int64 posture ids
    session_ids: list[str] = field(default_factory=list)  # one per row
    timestamps: np.ndarray | None = None  # (n,) frame timestamps, ms

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=np.float64).reshape(-1, N_FEATURES)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.X) != len(self.y):
            raise ValueError("X and y lengths differ")
        if not self.session_ids:
            self.session_ids = [""] * len(self.y)
        if self.timestamps is None:
            self.timestamps = np.zeros(len(self.y), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx: Sequence[int] | np.ndarray) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.X[idx], self.y[idx], [self.session_ids[i] for i in idx], self.timestamps[idx])

    @classmethod
    def concat(cls, parts: Sequence["LabeledDataset"]) -> "LabeledDataset":
        if not parts:
            return cls(np.empty((0, N_FEATURES)), np.empty(0, dtype=np.int64))
        return cls(
            np.vstack([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            [s for p in parts for s in p.session_ids],
            np.concatenate([p.timestamps for p in parts]),
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([*FEATURE_NAMES, "label"])
            for row, label in zip(self.X, self.y):
                writer.writerow([repr(float(v)) for v in row] + [PostureLabel(int(label)).name.lower()])

    @classmethod
    def from_csv(cls, path: str | Path) -> "LabeledDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        X = np.array([[float(r[name]) for name in FEATURE_NAMES] for r in rows]).reshape(-1, N_FEATURES)
        y = np.array([int(PostureLabel.parse(r["label"])) for r in rows], dtype=np.int64)
        return cls(X, y)


def window_features(amplitudes: Sequence[float]) -> np.ndarray:
    """The eight summary statistics of one window of movement amplitudes."""
    a = np.asarray(amplitudes, dtype=np.float64)
    w = len(a)
    return np.array([
        a.mean(),
        a.std(),
        a.max(),
        a.min(),
        a.max() - a.min(),
        np.count_nonzero(a < STILL_THRESHOLD) / w,
        np.count_nonzero(a > SPIKE_THRESHOLD) / w,
        np.abs(np.diff(a)).mean() if w > 1 else 0.0,
    ])


def movement_series(frames: Sequence[TimedFrame]) -> tuple[np.ndarray, np.ndarray]:
    """Timestamps and amplitudes of the BodyMovement frames, in order."""
    moves = [(f.timestamp_ms, f.frame.amplitude) for f in frames if isinstance(f.frame, BodyMovement)]
    ts = np.array([t for t, _ in moves], dtype=np.int64)
    amps = np.array([a for _, a in moves], dtype=np.float64)
    return ts, amps


def extract_features(frames: Sequence[TimedFrame], truth: Sequence[tuple[int, PostureLabel]] | None,
                     window: int = DEFAULT_WINDOW, session_id: str = "") -> LabeledDataset:
    """One row per movement frame from index ``window - 1`` on, over the trailing window.

    Rows are labeled with the truth posture at the frame's timestamp. With
    ``truth=None`` every label is set to -1 (unlabeled data for inference).
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    ts, amps = movement_series(frames)
    if len(amps) < window:
        raise SessionTooShort(f"need at least {window} movement frames, got {len(amps)}")
    # sliding_window_view gives (n - W + 1, W) without copying
    windows = np.lib.stride_tricks.sliding_window_view(amps, window)
    X = np.empty((len(windows), N_FEATURES))
    X[:, 0] = windows.mean(axis=1)
    X[:, 1] = windows.std(axis=1)
    X[:, 2] = windows.max(axis=1)
    X[:, 3] = windows.min(axis=1)
    X[:, 4] = X[:, 2] - X[:, 3]
    X[:, 5] = (windows < STILL_THRESHOLD).sum(axis=1) / window
    X[:, 6] = (windows > SPIKE_THRESHOLD).sum(axis=1) / window
    X[:, 7] = np.abs(np.diff(windows, axis=1)).mean(axis=1) if window > 1 else 0.0
    row_ts = ts[window - 1:]
    if truth is None:
        y = np.full(len(row_ts), -1, dtype=np.int64)
    else:
        lookup = label_lookup(truth)
        y = np.array([int(lookup(int(t))) for t in row_ts], dtype=np.int64)
    return LabeledDataset(X, y, [session_id] * len(y), row_ts)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_standardizer(X: np.ndarray) -> Standardizer:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyDataset("cannot fit a standardizer on zero rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return Standardizer(mean, std)


def apply_standardizer(params: Standardizer, X: np.ndarray) -> np.ndarray:
    return params.apply(X)


def stratified_split(dataset: LabeledDataset, train_fraction: float = 0.7,
                     seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """Per-class shuffled split; each class gets ``round(train_fraction * n)`` train rows."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx: list[np.ndarray] = []
    val_idx: list[np.ndarray] = []
    for label in np.unique(dataset.y):
        idx = np.flatnonzero(dataset.y == label)
        if len(idx) < 2:
            raise ClassTooSmall(f"class {int(label)} has {len(idx)} row(s); need at least 2")
        idx = rng.permutation(idx)
        n_train = int(np.floor(train_fraction * len(idx) + 0.5))
        n_train = min(max(n_train, 1), len(idx) - 1)
        train_idx.append(idx[:n_train])
        val_idx.append(idx[n_train:])
    train = np.sort(np.concatenate(train_idx)) if train_idx else np.empty(0, dtype=np.int64)
    val = np.sort(np.concatenate(val_idx)) if val_idx else np.empty(0, dtype=np.int64)
    return dataset.subset(train), dataset.subset(val)

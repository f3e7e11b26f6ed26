"""Loading recorded sessions from disk and building labeled datasets from them."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .codec import decode_stream, hex_decode
from .features import DEFAULT_WINDOW, LabeledDataset, extract_features, movement_series
from .ingestion import FrameRecord
from .models import predict
from .simulator import DEFAULT_FRAME_PERIOD, PostureLabel, TimedFrame, read_truth_csv, truth_path_for

log = logging.getLogger(__name__)

SESSION_SUFFIXES = (".hex", ".bin", ".jsonl")


@dataclass
class LoadedSession:
    name: str
    frames: list[TimedFrame]
    truth: list[tuple[int, PostureLabel]] | None


def read_frames(path: str | Path) -> tuple[list, list[int] | None]:
    """Decode a session file; returns (frames, per-frame timestamps or None).

    ``.bin`` is a raw frame stream, ``.jsonl`` ingestion records, anything
    else hex text with one or more frames per line.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".bin":
        frames, _, errors = decode_stream(path.read_bytes())
        _report(path, errors)
        return frames, None
    text = path.read_text(encoding="utf-8")
    if suffix == ".jsonl":
        frames, stamps = [], []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = FrameRecord.from_json(line)
            except (ValueError, KeyError, TypeError) as exc:
                log.warning("%s:%d: skipping record (%s)", path, lineno, exc)
                continue
            decoded, _, _ = decode_stream(hex_decode(rec.hex_payload))
            frames.extend(decoded)
            stamps.extend([rec.recv_timestamp_ms] * len(decoded))
        return frames, stamps
    frames = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        decoded, _, errors = decode_stream(hex_decode(line))
        _report(path, errors, lineno)
        frames.extend(decoded)
    return frames, None


def _report(path: Path, errors: Sequence, lineno: int | None = None) -> None:
    where = f"{path}:{lineno}" if lineno else str(path)
    for err in errors:
        log.warning("%s: %s", where, err)


def load_session(path: str | Path, truth_path: str | Path | None = None,
                 frame_period: float = DEFAULT_FRAME_PERIOD) -> LoadedSession:
    """Frames with timestamps plus truth labels when a ``.truth.csv`` sidecar exists.

    Files without their own timestamps take them from the truth rows (one
    per frame, in order) or, failing that, from ``frame_period`` spacing.
    """
    path = Path(path)
    truth_path = Path(truth_path) if truth_path else truth_path_for(path)
    truth = read_truth_csv(truth_path) if truth_path.exists() else None
    frames, stamps = read_frames(path)
    if stamps is None:
        if truth is not None and len(truth) == len(frames):
            stamps = [t for t, _ in truth]
        else:
            if truth is not None:
                log.warning("%s: truth has %d rows for %d frames; using %.2f s spacing",
                            path, len(truth), len(frames), frame_period)
            stamps = [int(round(i * frame_period * 1000)) for i in range(len(frames))]
    timed = [TimedFrame(t, f) for t, f in zip(stamps, frames)]
    return LoadedSession(path.stem, timed, truth)


def expand_inputs(inputs: Iterable[str | Path]) -> list[Path]:
    """Session files named directly or found (non-recursively) inside directories."""
    paths: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in SESSION_SUFFIXES))
        elif p.exists():
            paths.append(p)
        else:
            raise FileNotFoundError(p)
    return paths


def build_dataset(paths: Sequence[Path], window: int = DEFAULT_WINDOW) -> LabeledDataset:
    parts = []
    for path in paths:
        session = load_session(path)
        if session.truth is None:
            raise ValueError(f"{path}: no ground-truth sidecar {truth_path_for(path).name}")
        parts.append(extract_features(session.frames, session.truth, window, session_id=session.name))
    return LabeledDataset.concat(parts)


@dataclass
class Classified:
    predictions: list[tuple[int, int]]  # (timestamp_ms, posture id) per window
    scores: list[list[float]]
    amplitudes: list[tuple[int, float]]  # (timestamp_ms, amplitude) per movement frame


def classify_frames(model, frames: Sequence[TimedFrame], window: int = DEFAULT_WINDOW) -> Classified:
    ds = extract_features(frames, None, window)
    labels, scores = predict(model, ds.X)
    ts, amps = movement_series(frames)
    return Classified(
        predictions=[(int(t), int(p)) for t, p in zip(ds.timestamps, labels)],
        scores=scores.tolist(),
        amplitudes=[(int(t), float(a)) for t, a in zip(ts, amps)],
    )

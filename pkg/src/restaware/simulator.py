"""Synthetic radar sessions with ground-truth posture labels.

Stands in for the physical sensor. Every generated frame goes through
:func:`restaware.codec.encode_frame`, so simulator output always decodes
cleanly.
"""
from __future__ import annotations

import bisect
import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codec import (
    BodyMovement,
    Heartbeat,
    Presence,
    PresenceState,
    RadarFrame,
    encode_frame,
    hex_encode,
)

DEFAULT_FRAME_PERIOD = 1.64
SESSION_SECONDS = 600.0
HEARTBEAT_PERIOD = 30.0
PRESENCE_EVERY = 5
MOVING_THRESHOLD = 15.0
BURST_FRACTION = 0.2
BURST_RANGE = (20.0, 40.0)


class PostureLabel(enum.IntEnum):
    PRONE = 0
    SUPINE = 1
    SIDE_SLEEP = 2
    SUPINE_TO_SIDE = 3
    SUPINE_TO_PRONE = 4
    SIDE_TO_SUPINE = 5
    SIDE_TO_PRONE = 6
    ROLL_OVER = 7

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @classmethod
    def parse(cls, text: str | int) -> "PostureLabel":
        if isinstance(text, (int, np.integer)):
            return cls(int(text))
        key = str(text).strip()
        if key.isdigit():
            return cls(int(key))
        norm = key.lower().replace("-", "_").replace(" ", "_")
        for label in cls:
            if norm in (label.name.lower(), label.display_name.replace(" ", "_").replace("-", "_")):
                return label
        raise ValueError(f"unknown posture label {text!r}")


_DISPLAY_NAMES = {
    PostureLabel.PRONE: "prone",
    PostureLabel.SUPINE: "supine",
    PostureLabel.SIDE_SLEEP: "side sleep",
    PostureLabel.SUPINE_TO_SIDE: "supine to side",
    PostureLabel.SUPINE_TO_PRONE: "supine to prone",
    PostureLabel.SIDE_TO_SUPINE: "side to supine",
    PostureLabel.SIDE_TO_PRONE: "side to prone",
    PostureLabel.ROLL_OVER: "roll-over",
}

TRANSITION_POSTURES = frozenset({
    PostureLabel.SUPINE_TO_SIDE,
    PostureLabel.SUPINE_TO_PRONE,
    PostureLabel.SIDE_TO_SUPINE,
    PostureLabel.SIDE_TO_PRONE,
    PostureLabel.ROLL_OVER,
})

# (base amplitude, noise sigma) per posture
SIGNAL_MODEL: dict[PostureLabel, tuple[float, float]] = {
    PostureLabel.SUPINE: (4.0, 1.5),
    PostureLabel.PRONE: (6.0, 1.5),
    PostureLabel.SIDE_SLEEP: (8.0, 1.5),
    PostureLabel.SUPINE_TO_SIDE: (25.0, 5.0),
    PostureLabel.SUPINE_TO_PRONE: (30.0, 5.0),
    PostureLabel.SIDE_TO_SUPINE: (22.0, 5.0),
    PostureLabel.SIDE_TO_PRONE: (28.0, 5.0),
    PostureLabel.ROLL_OVER: (38.0, 5.0),
}


class EmptyScript(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    posture: PostureLabel
    duration: float


@dataclass(frozen=True)
class ScenarioScript:
    segments: tuple[Segment, ...]
    frame_period: float = DEFAULT_FRAME_PERIOD
    seed: int = 0

    @property
    def total_duration(self) -> float:
        return sum(s.duration for s in self.segments)

    def validate(self) -> None:
        if not self.segments or self.total_duration <= 0:
            raise EmptyScript("script has no positive-duration segments")
        if any(s.duration <= 0 for s in self.segments):
            raise EmptyScript("segment durations must be > 0")
        if not self.frame_period > 0:
            raise ValueError("frame_period must be > 0")


@dataclass(frozen=True)
class TimedFrame:
    timestamp_ms: int
    frame: RadarFrame


@dataclass
class SimulatedSession:
    frames: list[TimedFrame]
    truth: list[tuple[int, PostureLabel]]
    # latent amplitude at each frame, useful for plotting and debugging
    amplitudes: list[float] = field(default_factory=list)

    def shifted(self, offset_ms: int) -> "SimulatedSession":
        return SimulatedSession(
            [TimedFrame(f.timestamp_ms + offset_ms, f.frame) for f in self.frames],
            [(t + offset_ms, label) for t, label in self.truth],
            list(self.amplitudes),
        )


def default_protocol_script(seed: int, duration: float = SESSION_SECONDS,
                            frame_period: float = DEFAULT_FRAME_PERIOD) -> ScenarioScript:
    """Visit all eight postures in random order, 40-120 s each, for exactly ``duration`` s.

    Draws are rejected until the first seven segments leave at least 40 s for
    the eighth. If the eight segments end early, extra random segments fill
    the remainder; the last segment is truncated to land on ``duration``.
    """
    rng = np.random.default_rng(seed)
    labels = list(PostureLabel)
    min_d, max_d = 40.0, 120.0
    while True:
        order = [labels[i] for i in rng.permutation(len(labels))]
        durations = [float(d) for d in rng.uniform(min_d, max_d, size=len(labels))]
        if sum(durations[:-1]) <= duration - min_d:
            break
    segments: list[Segment] = []
    elapsed = 0.0
    for posture, d in zip(order, durations):
        d = min(d, duration - elapsed)
        segments.append(Segment(posture, d))
        elapsed += d
    while duration - elapsed > 1e-9:
        prev = segments[-1].posture
        choices = [p for p in labels if p != prev]
        posture = choices[int(rng.integers(len(choices)))]
        d = min(float(rng.uniform(min_d, max_d)), duration - elapsed)
        segments.append(Segment(posture, d))
        elapsed += d
    # absorb float drift so the total is exactly `duration`
    last = segments[-1]
    segments[-1] = Segment(last.posture, duration - sum(s.duration for s in segments[:-1]))
    return ScenarioScript(tuple(segments), frame_period=frame_period, seed=seed)


def _segment_bounds(script: ScenarioScript) -> list[tuple[float, float, PostureLabel]]:
    bounds = []
    t = 0.0
    for seg in script.segments:
        bounds.append((t, t + seg.duration, seg.posture))
        t += seg.duration
    return bounds


def generate_session(script: ScenarioScript) -> SimulatedSession:
    """Render a script into timestamped frames plus per-frame truth.

    Sample slots fall every ``frame_period`` seconds over ``[0, total)``.
    Every fifth slot carries a Presence frame, the others BodyMovement.
    Heartbeats are extra frames at each 30 s mark; if one lands on a slot
    timestamp it is nudged 1 ms later.
    """
    script.validate()
    rng = np.random.default_rng(script.seed)
    total = script.total_duration
    bounds = _segment_bounds(script)
    period_ms = script.frame_period * 1000.0

    n_slots = int(np.ceil(total / script.frame_period - 1e-9))
    slot_ms = [int(round(k * period_ms)) for k in range(n_slots)]
    slot_ms = [t for t in slot_ms if t < total * 1000.0]

    seg_idx = 0
    events: list[tuple[int, RadarFrame, PostureLabel, float]] = []
    for k, t_ms in enumerate(slot_ms):
        t = t_ms / 1000.0
        while seg_idx < len(bounds) - 1 and t >= bounds[seg_idx][1]:
            seg_idx += 1
        start, end, posture = bounds[seg_idx]
        base, sigma = SIGNAL_MODEL[posture]
        amp = base + rng.normal(0.0, sigma)
        if posture in TRANSITION_POSTURES and t < start + BURST_FRACTION * (end - start):
            amp += rng.uniform(*BURST_RANGE)
        amp = float(np.clip(amp, 0.0, 100.0))
        if k % PRESENCE_EVERY == PRESENCE_EVERY - 1:
            state = PresenceState.PRESENT_MOVING if amp > MOVING_THRESHOLD else PresenceState.PRESENT_STATIONARY
            frame: RadarFrame = Presence(state)
        else:
            frame = BodyMovement(amp)
        events.append((t_ms, frame, posture, amp))

    slot_set = set(slot_ms)
    hb_ms = []
    m = 1
    while m * HEARTBEAT_PERIOD < total:
        t_ms = int(round(m * HEARTBEAT_PERIOD * 1000.0))
        if t_ms in slot_set:
            t_ms += 1
        hb_ms.append(t_ms)
        m += 1
    for t_ms in hb_ms:
        posture = _label_at(bounds, t_ms / 1000.0)
        events.append((t_ms, Heartbeat(), posture, float("nan")))

    events.sort(key=lambda e: e[0])
    return SimulatedSession(
        frames=[TimedFrame(t, f) for t, f, _, _ in events],
        truth=[(t, p) for t, _, p, _ in events],
        amplitudes=[a for _, _, _, a in events],
    )


def _label_at(bounds, t: float) -> PostureLabel:
    for start, end, posture in bounds:
        if start <= t < end:
            return posture
    return bounds[-1][2]


# -- output formats ---------------------------------------------------------

def truth_path_for(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".truth.csv")


def write_truth_csv(path: str | Path, truth: Iterable[tuple[int, PostureLabel]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_ms", "label"])
        for t, label in truth:
            writer.writerow([t, PostureLabel(label).name.lower()])


def read_truth_csv(path: str | Path) -> list[tuple[int, PostureLabel]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [(int(row["timestamp_ms"]), PostureLabel.parse(row["label"])) for row in csv.DictReader(fh)]


def write_session(session: SimulatedSession, path: str | Path, fmt: str | None = None,
                  device_id: str = "sim", start_ms: int = 0) -> Path:
    """Write frames as ``bin``, ``hex`` (one frame per line) or ``jsonl``; returns the truth CSV path.

    Timestamps in the JSONL records and the truth CSV are offset by ``start_ms``.
    """
    path = Path(path)
    fmt = fmt or {".bin": "bin", ".jsonl": "jsonl"}.get(path.suffix.lower(), "hex")
    if fmt == "bin":
        path.write_bytes(b"".join(encode_frame(f.frame) for f in session.frames))
    elif fmt == "hex":
        path.write_text("".join(hex_encode(encode_frame(f.frame)) + "\n" for f in session.frames), encoding="utf-8")
    elif fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for f in session.frames:
                rec = {"device_id": device_id, "recv_timestamp_ms": f.timestamp_ms + start_ms,
                       "hex_payload": hex_encode(encode_frame(f.frame))}
                fh.write(json.dumps(rec) + "\n")
    else:
        raise ValueError(f"unknown session format {fmt!r}")
    truth_path = truth_path_for(path)
    write_truth_csv(truth_path, [(t + start_ms, p) for t, p in session.truth])
    return truth_path


def label_lookup(truth: Sequence[tuple[int, PostureLabel]]):
    """Return ``f(timestamp_ms) -> PostureLabel`` treating truth as a step function."""
    times = [t for t, _ in truth]
    labels = [p for _, p in truth]
    if not times:
        raise ValueError("empty truth sequence")

    def lookup(t_ms: int) -> PostureLabel:
        i = bisect.bisect_right(times, t_ms) - 1
        return labels[max(i, 0)]

    return lookup

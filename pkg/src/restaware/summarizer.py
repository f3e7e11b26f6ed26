"""Sleep summary generation.

aggregate a classified session -> build a prompt -> generate text ->
split into sentences -> rank them with TextRank -> keep the top N.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .llm import Backend, generate_text
from .simulator import PostureLabel


class EmptySession(ValueError):
    pass


@dataclass(frozen=True)
class EventThresholds:
    still_below: float = 2.0
    low_breathing_below: float = 4.0
    min_event_seconds: float = 30.0
    deep_sleep_seconds: float = 120.0


@dataclass
class SleepAggregate:
    participant_id: str
    duration_s: float
    posture_counts: dict[PostureLabel, int]
    transition_count: int
    deep_sleep_events: int
    low_breathing_count: int
    no_move_count: int
    avg_movement_intensity: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["posture_counts"] = {PostureLabel(k).name.lower(): v for k, v in self.posture_counts.items()}
        return d


def _runs(mask: np.ndarray, breaks: np.ndarray | None = None) -> list[tuple[int, int]]:
    """Maximal [start, end] index runs where ``mask`` holds, split where ``breaks[i]`` is set."""
    runs = []
    start = None
    for i, ok in enumerate(mask):
        if ok and start is not None and breaks is not None and breaks[i]:
            runs.append((start, i - 1))
            start = i
        elif ok and start is None:
            start = i
        elif not ok and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    return runs


def _count_long_runs(ts: np.ndarray, runs: list[tuple[int, int]], min_seconds: float) -> int:
    # a run's duration is the span between its first and last sample
    return sum(1 for a, b in runs if (ts[b] - ts[a]) / 1000.0 >= min_seconds)


def aggregate_session(labels: Sequence[tuple[int, int]], amplitudes: Sequence[tuple[int, float]],
                      participant_id: str = "P1", thresholds: EventThresholds | None = None) -> SleepAggregate:
    """Summarize predicted postures and movement amplitudes into event counts.

    ``labels`` holds (timestamp_ms, predicted posture) per classified window,
    ``amplitudes`` holds (timestamp_ms, amplitude) per movement frame.
    """
    th = thresholds or EventThresholds()
    if not labels:
        raise EmptySession("no classified windows")
    lab_ts = np.array([t for t, _ in labels], dtype=np.int64)
    lab = np.array([int(p) for _, p in labels], dtype=np.int64)
    transitions = int(np.count_nonzero(lab[1:] != lab[:-1]))
    counts = {p: int(np.count_nonzero(lab == int(p))) for p in PostureLabel}

    amp_ts = np.array([t for t, _ in amplitudes], dtype=np.int64)
    amp = np.array([a for _, a in amplitudes], dtype=np.float64)
    start = min(lab_ts.min(), amp_ts.min()) if len(amp_ts) else lab_ts.min()
    end = max(lab_ts.max(), amp_ts.max()) if len(amp_ts) else lab_ts.max()

    no_move = low = deep = 0
    if len(amp):
        still = amp < th.still_below
        low_breath = (amp >= th.still_below) & (amp < th.low_breathing_below)
        no_move = _count_long_runs(amp_ts, _runs(still), th.min_event_seconds)
        low = _count_long_runs(amp_ts, _runs(low_breath), th.min_event_seconds)
        # posture at each amplitude sample: latest window at or before it, else the first window
        idx = np.searchsorted(lab_ts, amp_ts, side="right") - 1
        posture = lab[np.clip(idx, 0, None)]
        changed = np.r_[False, posture[1:] != posture[:-1]]
        quiet = amp < th.low_breathing_below
        deep = _count_long_runs(amp_ts, _runs(quiet, changed), th.deep_sleep_seconds)

    return SleepAggregate(
        participant_id=participant_id,
        duration_s=float(end - start) / 1000.0,
        posture_counts=counts,
        transition_count=transitions,
        deep_sleep_events=deep,
        low_breathing_count=low,
        no_move_count=no_move,
        avg_movement_intensity=float(amp.mean()) if len(amp) else 0.0,
    )


INSTRUCTION = ("Write a short narrative summary of this person's sleep, describing deep sleep, "
               "posture, movement and any disruptions.")


def construct_prompt(agg: SleepAggregate) -> str:
    postures = ", ".join(f"{p.display_name}: {agg.posture_counts.get(p, 0)}" for p in PostureLabel)
    return (
        f"Sleep data for participant {agg.participant_id}.\n"
        f"Session duration: {agg.duration_s / 60.0:.1f} minutes ({agg.duration_s:.0f} seconds).\n"
        f"Posture counts: {postures}.\n"
        f"Posture transitions: {agg.transition_count}.\n"
        f"Deep sleep events: {agg.deep_sleep_events}.\n"
        f'There were {agg.low_breathing_count} instances of "Low Breathing" and '
        f'{agg.no_move_count} instances of "No Move".\n'
        f"Average movement intensity: {agg.avg_movement_intensity:.1f}.\n"
        f"{INSTRUCTION}\n"
    )


# -- sentence splitting -----------------------------------------------------

MIN_SENTENCE_TOKENS = 3
_BOUNDARY = re.compile(r"(?<=[.!?])\s+")
_WORD = re.compile(r"[A-Za-z0-9']+")


@dataclass(frozen=True)
class Sentence:
    index: int
    text: str


def split_sentences(text: str) -> list[Sentence]:
    """Split after '.', '!' or '?' followed by whitespace or the end.

    A piece with fewer than three word tokens is not a sentence on its own:
    it is glued to the piece after it ("Dr." + "Smith slept."), and dropped
    if nothing follows.
    """
    pieces = [p.strip() for p in _BOUNDARY.split(text.strip())] if text.strip() else []
    sentences: list[Sentence] = []
    pending = ""
    for piece in pieces:
        if not piece:
            continue
        candidate = f"{pending} {piece}" if pending else piece
        if len(_WORD.findall(candidate)) < MIN_SENTENCE_TOKENS:
            pending = candidate
            continue
        sentences.append(Sentence(len(sentences), candidate))
        pending = ""
    return sentences


# -- TextRank ---------------------------------------------------------------

STOP_WORDS = frozenset("""
a about above after again against all am an and any are as at be because been before being below
between both but by can could did do does doing down during each few for from further had has have
having he her here hers herself him himself his how i if in into is it its itself just me more most
my myself no nor not now of off on once only or other our ours ourselves out over own same she should
so some such than that the their theirs them themselves then there these they this those through to
too under until up very was we were what when where which while who whom why will with would you
your yours yourself yourselves also may which there's it's
""".split())


def content_words(sentence: str) -> list[str]:
    return [w for w in (t.lower() for t in _WORD.findall(sentence)) if w not in STOP_WORDS]


def sentence_similarity(a: Sequence[str], b: Sequence[str]) -> float:
    """Shared-word overlap over the log-length sum of two content-word lists."""
    if len(a) <= 1 or len(b) <= 1:
        return 0.0
    shared = len(set(a) & set(b))
    return shared / max(math.log(len(a)) + math.log(len(b)), 1e-9)


def similarity_matrix(word_lists: Sequence[Sequence[str]]) -> np.ndarray:
    n = len(word_lists)
    W = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            W[i, j] = W[j, i] = sentence_similarity(word_lists[i], word_lists[j])
    return W


def pagerank(W: np.ndarray, damping: float = 0.85, max_iterations: int = 100,
             epsilon: float = 1e-6) -> np.ndarray:
    """Damped power iteration on the row-normalized weight matrix; zero rows become uniform."""
    n = W.shape[0]
    if n == 0:
        return np.zeros(0)
    row_sums = W.sum(axis=1, keepdims=True)
    M = np.where(row_sums > 0, W / np.where(row_sums > 0, row_sums, 1.0), 1.0 / n)
    s = np.full(n, 1.0 / n)
    for _ in range(max_iterations):
        nxt = (1.0 - damping) / n + damping * (M.T @ s)
        delta = np.abs(nxt - s).max()
        s = nxt
        if delta < epsilon:
            break
    return s


def textrank_scores(sentences: Sequence[str | Sentence], damping: float = 0.85, max_iterations: int = 100,
                    epsilon: float = 1e-6) -> list[float]:
    """TextRank score per sentence, aligned with the input order."""
    texts = [s.text if isinstance(s, Sentence) else s for s in sentences]
    W = similarity_matrix([content_words(t) for t in texts])
    return pagerank(W, damping, max_iterations, epsilon).tolist()


@dataclass(frozen=True)
class SummaryConfig:
    n_sentences: int = 5
    backend: str = "template"
    damping: float = 0.85
    max_iterations: int = 100
    convergence_epsilon: float = 1e-6
    max_tokens: int = 512

    def __post_init__(self) -> None:
        if self.n_sentences < 1:
            raise ValueError("n_sentences must be >= 1")
        if not 0 < self.damping < 1:
            raise ValueError("damping must be in (0, 1)")


@dataclass
class Summary:
    sentences: list[Sentence]
    scores: list[float]

    @property
    def text(self) -> str:
        return " ".join(s.text for s in self.sentences)


def extract_summary(text: str, config: SummaryConfig | None = None) -> Summary:
    """Top-N sentences by TextRank score (ties: earlier first), returned in original order."""
    cfg = config or SummaryConfig()
    sentences = split_sentences(text)
    if not sentences:
        return Summary([], [])
    scores = textrank_scores(sentences, cfg.damping, cfg.max_iterations, cfg.convergence_epsilon)
    ranked = sorted(range(len(sentences)), key=lambda i: (-scores[i], i))
    keep = sorted(ranked[: cfg.n_sentences])
    return Summary([sentences[i] for i in keep], [scores[i] for i in keep])


@dataclass
class SummaryResult:
    aggregate: SleepAggregate
    prompt: str
    generated_text: str
    summary: Summary
    all_sentences: list[Sentence] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "sentences": [s.text for s in self.summary.sentences],
            "scores": self.summary.scores,
            "sentence_indices": [s.index for s in self.summary.sentences],
            "aggregate": self.aggregate.to_dict(),
            "prompt": self.prompt,
            "generated_text": self.generated_text,
        }


def summarize(aggregate: SleepAggregate, backend: Backend, config: SummaryConfig | None = None) -> SummaryResult:
    cfg = config or SummaryConfig()
    prompt = construct_prompt(aggregate)
    text = generate_text(backend, prompt, cfg.max_tokens)
    return SummaryResult(aggregate, prompt, text, extract_summary(text, cfg), split_sentences(text))


def write_summary(result: SummaryResult, path: str | Path) -> Path:
    """Write the summary text and a ``.json`` sidecar next to it; returns the sidecar path.

    If ``path`` itself ends in ``.json`` the sidecar becomes ``<stem>.summary.json``.
    """
    path = Path(path)
    path.write_text(result.summary.text + "\n", encoding="utf-8")
    sidecar = path.with_suffix(".json")
    if sidecar == path:
        sidecar = path.with_name(path.stem + ".summary.json")
    sidecar.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar

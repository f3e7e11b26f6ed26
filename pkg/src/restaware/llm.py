"""Text generation backends: an offline template narrator and a chat-completion HTTP client."""
from __future__ import annotations

import logging
import os
import re
import time
from dataclasses import dataclass
from typing import Protocol

import httpx

log = logging.getLogger(__name__)

TOKEN_ENV = "RESTAWARE_LLM_TOKEN"


class BackendError(RuntimeError):
    pass


class BackendUnavailable(BackendError):
    pass


class HttpStatus(BackendError):
    def __init__(self, code: int, body: str = "") -> None:
        super().__init__(f"LLM endpoint returned HTTP {code}")
        self.code = code
        self.body = body


class MalformedResponse(BackendError):
    pass


class Timeout(BackendError):
    pass


class Backend(Protocol):
    def generate(self, prompt: str, max_tokens: int = 512) -> str: ...


def generate_text(backend: Backend, prompt: str, max_tokens: int = 512) -> str:
    return backend.generate(prompt, max_tokens=max_tokens)


@dataclass
class HttpBackend:
    """POSTs ``{model, messages, max_tokens}`` to ``{base_url}/chat/completions``."""

    base_url: str
    model: str
    token: str | None = None
    timeout: float = 60.0
    retries: int = 2
    backoff: float = 0.5

    def __post_init__(self) -> None:
        if self.token is None:
            self.token = os.environ.get(TOKEN_ENV)

    @property
    def endpoint(self) -> str:
        base = self.base_url.rstrip("/")
        return base if base.endswith("/chat/completions") else base + "/chat/completions"

    def generate(self, prompt: str, max_tokens: int = 512) -> str:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        body = {"model": self.model, "messages": [{"role": "user", "content": prompt}], "max_tokens": max_tokens}
        last: BackendError | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = httpx.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
            except httpx.TimeoutException as exc:
                last = Timeout(f"no response from {self.endpoint} within {self.timeout}s")
                last.__cause__ = exc
                continue
            except httpx.TransportError as exc:
                last = BackendUnavailable(f"cannot reach {self.endpoint}: {exc}")
                last.__cause__ = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = HttpStatus(resp.status_code, resp.text)
                log.warning("LLM endpoint returned %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise HttpStatus(resp.status_code, resp.text)
            return _first_choice(resp)
        assert last is not None
        raise last


def _first_choice(resp: httpx.Response) -> str:
    try:
        payload = resp.json()
        choice = payload["choices"][0]
        text = choice["message"]["content"] if "message" in choice else choice["text"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"unexpected completion payload: {resp.text[:200]!r}") from exc
    if not isinstance(text, str):
        raise MalformedResponse("completion content is not a string")
    return text


# -- offline narrator -------------------------------------------------------

_FIELDS = {
    "participant": r"Sleep data for participant (?P<v>.+?)\.\n",
    "duration_min": r"Session duration: (?P<v>\d+(?:\.\d+)?) minutes",
    "transitions": r"Posture transitions: (?P<v>\d+)",
    "deep_sleep": r"Deep sleep events: (?P<v>\d+)",
    "low_breathing": r'(?P<v>\d+) instances of "Low Breathing"',
    "no_move": r'(?P<v>\d+) instances of "No Move"',
    "intensity": r"Average movement intensity: (?P<v>\d+(?:\.\d+)?)",
    "postures": r"Posture counts: (?P<v>[^\n]+?)\.\n",
}


def _parse_prompt(prompt: str) -> dict:
    found = {}
    for key, pattern in _FIELDS.items():
        m = re.search(pattern, prompt)
        if m is None:
            raise MalformedResponse(f"template backend cannot find {key!r} in the prompt")
        found[key] = m.group("v")
    counts = {}
    for part in found["postures"].split(", "):
        name, _, n = part.rpartition(": ")
        counts[name] = int(n)
    found["postures"] = counts
    return found


class TemplateBackend:
    """Deterministic narrator that reads the metrics back out of the prompt.

    Exists so the whole summary path runs offline and reproducibly.
    """

    def generate(self, prompt: str, max_tokens: int = 512) -> str:
        f = _parse_prompt(prompt)
        pid = f["participant"]
        minutes = float(f["duration_min"])
        transitions = int(f["transitions"])
        deep = int(f["deep_sleep"])
        low = int(f["low_breathing"])
        still = int(f["no_move"])
        intensity = float(f["intensity"])
        postures = f["postures"]
        ranked = sorted(postures.items(), key=lambda kv: (-kv[1], kv[0]))
        top, top_n = ranked[0]
        total = sum(postures.values()) or 1
        share = 100.0 * top_n / total

        if deep >= 3:
            deep_line = f"{pid} had a restful night with {deep} periods of deep sleep, which supports physical recovery."
        elif deep:
            deep_line = f"{pid} reached deep sleep {deep} time{'s' if deep != 1 else ''} during the recording, a sign of some restorative rest."
        else:
            deep_line = f"{pid} did not reach a sustained deep sleep period during the recording."
        if intensity < 5:
            move_line = f"Average movement intensity was low at {intensity:.1f}, so the body stayed largely relaxed."
        elif intensity < 15:
            move_line = f"Average movement intensity was moderate at {intensity:.1f}, with some shifting in bed."
        else:
            move_line = f"Average movement intensity was high at {intensity:.1f}, which points to restless sleep."
        if transitions <= 3:
            change_line = f"Only {transitions} posture changes were detected, so sleep posture stayed stable."
        else:
            change_line = f"The sleeper changed posture {transitions} times, which suggests frequent repositioning."
        second = [name for name, n in ranked[1:] if n > 0]
        other_line = (f"Other postures observed include {', '.join(second[:3])}."
                      if second else "No other sleep postures were observed during the session.")

        sentences = [
            f"This summary covers {minutes:.1f} minutes of radar sleep monitoring for {pid}.",
            deep_line,
            f"The most common sleep posture was {top}, covering about {share:.0f} percent of classified windows.",
            other_line,
            change_line,
            f'The radar recorded {low} instances of "Low Breathing" during quiet sleep periods.',
            f'There were {still} instances of "No Move" where the sleeper stayed completely still.',
            move_line,
            ("Frequent posture changes and movement spikes may indicate disrupted or fragmented sleep."
             if transitions > 3 or intensity >= 15 else
             "Few disruptions were detected, so the night appears calm and continuous."),
            "Overall, these sleep patterns give a useful picture of rest quality and physical relaxation.",
        ]
        return _truncate_words(" ".join(sentences), max_tokens)


def _truncate_words(text: str, max_tokens: int) -> str:
    words = text.split(" ")
    if len(words) <= max_tokens:
        return text
    return " ".join(words[:max_tokens])


def make_backend(name: str, base_url: str | None = None, model: str | None = None,
                 token: str | None = None, timeout: float = 60.0) -> Backend:
    if name == "template":
        return TemplateBackend()
    if name == "http":
        if not base_url:
            raise BackendUnavailable("the http backend needs a base URL")
        return HttpBackend(base_url, model or "mistralai/Mistral-7B-Instruct-v0.1", token, timeout)
    raise ValueError(f"unknown backend {name!r}")

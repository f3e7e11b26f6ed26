"""Frame ingestion: MQTT subscriber, file import, JSONL store and session segmentation."""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence
from urllib.parse import urlparse

from .codec import CodecError, decode_stream, hex_decode
from .simulator import DEFAULT_FRAME_PERIOD, TimedFrame

log = logging.getLogger(__name__)

TOPIC_PREFIX = "restaware"
DEFAULT_TOPIC = "restaware/+/raw"
SESSION_GAP_MS = 60_000
MIN_SESSION_MS = 30_000
BROKER_URL_ENV = "RESTAWARE_BROKER_URL"
BROKER_TOKEN_ENV = "RESTAWARE_BROKER_TOKEN"


class IngestError(RuntimeError):
    pass


class ConnectionFailed(IngestError):
    pass


class StoreWriteFailed(IngestError):
    pass


class UnrecognizedFormat(ValueError):
    pass


class InvalidPayload(ValueError):
    pass


@dataclass(frozen=True)
class FrameRecord:
    device_id: str
    recv_timestamp_ms: int
    hex_payload: str

    def to_json(self) -> str:
        return json.dumps({"device_id": self.device_id, "recv_timestamp_ms": self.recv_timestamp_ms,
                           "hex_payload": self.hex_payload})

    @classmethod
    def from_json(cls, line: str) -> "FrameRecord":
        d = json.loads(line)
        if set(d) != {"device_id", "recv_timestamp_ms", "hex_payload"}:
            raise ValueError(f"unexpected record fields {sorted(d)}")
        rec = cls(str(d["device_id"]), int(d["recv_timestamp_ms"]), str(d["hex_payload"]))
        validate_record(rec)
        return rec


def validate_payload(hex_payload: str) -> list:
    """Decode a hex payload that must hold only whole, valid frames; returns the frames."""
    try:
        raw = hex_decode(hex_payload)
    except CodecError as exc:
        raise InvalidPayload(str(exc)) from exc
    frames, consumed, errors = decode_stream(raw)
    if not frames or consumed != len(raw) or errors:
        raise InvalidPayload(f"payload is not a sequence of whole frames: {errors}")
    return frames


def validate_record(rec: FrameRecord) -> None:
    if not rec.device_id:
        raise ValueError("empty device_id")
    if rec.recv_timestamp_ms < 0:
        raise ValueError("negative timestamp")
    validate_payload(rec.hex_payload)


class SessionLog:
    """Append-only JSONL store of FrameRecords, one per line.

    A single writer appends; readers skip a torn or corrupt line with a
    warning instead of failing.
    """

    def __init__(self, path: str | Path, fsync_interval: float = 1.0) -> None:
        self.path = Path(path)
        self.fsync_interval = fsync_interval
        self._fh = None
        self._last_sync = 0.0
        self._last_ts: dict[str, int] = {}
        self._lock = threading.Lock()

    def __enter__(self) -> "SessionLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _open(self) -> None:
        if self._fh is None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            # a torn last line from a previous crash must not swallow our first record
            needs_newline = self.path.exists() and self.path.stat().st_size > 0 and \
                self.path.read_bytes()[-1:] != b"\n"
            self._fh = open(self.path, "a", encoding="utf-8")
            if needs_newline:
                self._fh.write("\n")
            for rec in self.read():
                self._last_ts[rec.device_id] = max(self._last_ts.get(rec.device_id, 0), rec.recv_timestamp_ms)

    def append(self, rec: FrameRecord) -> FrameRecord:
        """Write one record and flush it. Timestamps are clamped to be non-decreasing per device."""
        with self._lock:
            try:
                self._open()
                prev = self._last_ts.get(rec.device_id)
                if prev is not None and rec.recv_timestamp_ms < prev:
                    log.warning("clock went backwards for %s (%d < %d); clamping", rec.device_id,
                                rec.recv_timestamp_ms, prev)
                    rec = FrameRecord(rec.device_id, prev, rec.hex_payload)
                self._fh.write(rec.to_json() + "\n")
                self._fh.flush()
                self._last_ts[rec.device_id] = rec.recv_timestamp_ms
                now = time.monotonic()
                if now - self._last_sync >= self.fsync_interval:
                    os.fsync(self._fh.fileno())
                    self._last_sync = now
            except OSError as exc:
                raise StoreWriteFailed(f"cannot append to {self.path}: {exc}") from exc
        return rec

    def sync(self) -> None:
        with self._lock:
            if self._fh is not None:
                try:
                    self._fh.flush()
                    os.fsync(self._fh.fileno())
                except OSError as exc:
                    raise StoreWriteFailed(f"cannot sync {self.path}: {exc}") from exc
                self._last_sync = time.monotonic()

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.flush()
                os.fsync(self._fh.fileno())
                self._fh.close()
                self._fh = None

    def read(self) -> list[FrameRecord]:
        if not self.path.exists():
            return []
        records = []
        with open(self.path, encoding="utf-8", errors="replace") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    records.append(FrameRecord.from_json(line))
                except (ValueError, KeyError, TypeError) as exc:
                    log.warning("%s:%d: skipping unreadable record (%s)", self.path, lineno, exc)
        return records

    def device_ids(self) -> list[str]:
        return sorted({r.device_id for r in self.read()})


# -- file import ------------------------------------------------------------

def _sniff(lines: Sequence[str]) -> str:
    for line in lines:
        s = line.strip()
        if not s:
            continue
        if s.startswith("{"):
            return "jsonl"
        if all(ch in "0123456789abcdefABCDEF \t" for ch in s):
            return "hex"
        raise UnrecognizedFormat(f"cannot tell the format from line {s[:40]!r}")
    return "empty"


def ingest_file(path: str | Path, device_id: str | None, store: SessionLog,
                frame_period: float = DEFAULT_FRAME_PERIOD) -> int:
    """Append the valid lines of a hex-lines or JSONL file to ``store``; returns how many.

    JSONL keeps its own timestamps (and device ids unless ``device_id`` is
    given). Hex lines are stamped ``frame_period`` apart starting at the
    file's mtime.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    lines = path.read_text(encoding="utf-8", errors="replace").splitlines()
    fmt = _sniff(lines)
    count = 0
    if fmt == "jsonl":
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                rec = FrameRecord.from_json(line)
            except (ValueError, KeyError, TypeError) as exc:
                log.warning("%s:%d: skipping invalid record (%s)", path, lineno, exc)
                continue
            if device_id:
                rec = FrameRecord(device_id, rec.recv_timestamp_ms, rec.hex_payload)
            store.append(rec)
            count += 1
    elif fmt == "hex":
        if not device_id:
            raise ValueError("hex-line files need an explicit device_id")
        start_ms = int(path.stat().st_mtime * 1000)
        slot = 0
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            ts = start_ms + int(round(slot * frame_period * 1000))
            slot += 1
            payload = "".join(line.split()).upper()
            try:
                validate_payload(payload)
            except InvalidPayload as exc:
                log.warning("%s:%d: skipping invalid hex line (%s)", path, lineno, exc)
                continue
            store.append(FrameRecord(device_id, ts, payload))
            count += 1
    return count


# -- sessions ---------------------------------------------------------------

@dataclass
class Session:
    device_id: str
    start_ms: int
    end_ms: int
    frames: list[TimedFrame]


def segment_records(records: Iterable[FrameRecord], device_id: str, gap_ms: int = SESSION_GAP_MS,
                    min_session_ms: int = MIN_SESSION_MS) -> list[Session]:
    recs = sorted((r for r in records if r.device_id == device_id), key=lambda r: r.recv_timestamp_ms)
    groups: list[list[FrameRecord]] = []
    for rec in recs:
        if groups and rec.recv_timestamp_ms - groups[-1][-1].recv_timestamp_ms <= gap_ms:
            groups[-1].append(rec)
        else:
            groups.append([rec])
    sessions = []
    for group in groups:
        start, end = group[0].recv_timestamp_ms, group[-1].recv_timestamp_ms
        if end - start < min_session_ms:
            log.info("dropping %.1f s session for %s starting at %d (shorter than %.0f s)",
                     (end - start) / 1000, device_id, start, min_session_ms / 1000)
            continue
        frames = []
        for rec in group:
            decoded, _, _ = decode_stream(hex_decode(rec.hex_payload))
            frames.extend(TimedFrame(rec.recv_timestamp_ms, f) for f in decoded)
        sessions.append(Session(device_id, start, end, frames))
    return sessions


def segment_sessions(store: SessionLog, device_id: str, gap_ms: int = SESSION_GAP_MS,
                     min_session_ms: int = MIN_SESSION_MS) -> list[Session]:
    """Split a device's records wherever consecutive timestamps are more than ``gap_ms`` apart.

    Records already hold whole frames, so each one is decoded on its own and
    its frames inherit its timestamp.
    """
    return segment_records(store.read(), device_id, gap_ms, min_session_ms)


# -- MQTT -------------------------------------------------------------------

@dataclass
class IngestSummary:
    records: int = 0
    decode_errors: int = 0


def device_from_topic(topic: str) -> str | None:
    parts = topic.split("/")
    if len(parts) == 3 and parts[0] == TOPIC_PREFIX and parts[2] == "raw" and parts[1]:
        return parts[1]
    return None


@dataclass(frozen=True)
class BrokerAddress:
    host: str
    port: int
    tls: bool
    username: str | None
    password: str | None


def parse_broker_url(url: str, token: str | None = None) -> BrokerAddress:
    u = urlparse(url if "://" in url else f"mqtt://{url}")
    if u.scheme not in ("mqtt", "tcp", "mqtts", "ssl"):
        raise ValueError(f"unsupported broker scheme {u.scheme!r}")
    tls = u.scheme in ("mqtts", "ssl")
    port = u.port or (8883 if tls else 1883)
    password = token if token is not None else u.password
    username = u.username or ("restaware" if password else None)
    return BrokerAddress(u.hostname or "localhost", port, tls, username, password)


def _make_client(client_id: str = ""):
    import paho.mqtt.client as mqtt

    return mqtt.Client(mqtt.CallbackAPIVersion.VERSION2, client_id=client_id, protocol=mqtt.MQTTv311)


def ingest_mqtt(broker_url: str, topic_filter: str, store: SessionLog, stop_signal: threading.Event,
                token: str | None = None, clock: Callable[[], int] | None = None, max_retries: int = 5,
                backoff: float = 0.5, ca_certs: str | None = None, client_id: str = "",
                on_ready: Callable[[], None] | None = None) -> IngestSummary:
    """Subscribe at QoS 1 and append one FrameRecord per valid message until ``stop_signal`` is set.

    ``clock`` returns the receive timestamp in epoch milliseconds. Bad
    payloads are counted and logged; a failed store write stops the loop
    and raises StoreWriteFailed.
    """
    clock = clock or (lambda: time.time_ns() // 1_000_000)
    addr = parse_broker_url(broker_url, token)
    summary = IngestSummary()
    fatal: list[BaseException] = []
    subscribed = threading.Event()

    client = _make_client(client_id)
    if addr.username is not None:
        client.username_pw_set(addr.username, addr.password)
    if addr.tls:
        client.tls_set(ca_certs=ca_certs)

    def on_connect(cl, userdata, flags, reason_code, properties):
        if reason_code.is_failure:
            log.error("broker refused connection: %s", reason_code)
            return
        cl.subscribe(topic_filter, qos=1)

    def on_subscribe(cl, userdata, mid, reason_codes, properties):
        subscribed.set()

    def on_message(cl, userdata, msg):
        if fatal:
            return
        device = device_from_topic(msg.topic)
        try:
            if device is None:
                raise InvalidPayload(f"topic {msg.topic!r} does not match restaware/<device>/raw")
            text = msg.payload.decode("ascii")
            payload = "".join(text.split()).upper()
            validate_payload(payload)
        except (InvalidPayload, UnicodeDecodeError) as exc:
            summary.decode_errors += 1
            log.warning("dropping message on %s: %s", msg.topic, exc)
            return
        try:
            store.append(FrameRecord(device, int(clock()), payload))
        except StoreWriteFailed as exc:
            fatal.append(exc)
            stop_signal.set()
            return
        summary.records += 1

    client.on_connect = on_connect
    client.on_subscribe = on_subscribe
    client.on_message = on_message

    for attempt in range(max_retries + 1):
        try:
            client.connect(addr.host, addr.port, keepalive=30)
            break
        except OSError as exc:
            if attempt == max_retries:
                raise ConnectionFailed(f"cannot connect to {addr.host}:{addr.port}: {exc}") from exc
            delay = backoff * 2 ** attempt
            log.warning("connect to %s:%d failed (%s); retrying in %.1fs", addr.host, addr.port, exc, delay)
            if stop_signal.wait(delay):
                return summary

    client.loop_start()
    try:
        if on_ready is not None:
            subscribed.wait(10)
            on_ready()
        while not stop_signal.wait(1.0):
            store.sync()
    finally:
        client.disconnect()
        client.loop_stop()
        try:
            store.sync()
        except StoreWriteFailed as exc:
            fatal.append(exc)
    if fatal:
        raise StoreWriteFailed(str(fatal[0])) from fatal[0]
    return summary


def publish_frames(broker_url: str, device_id: str, payloads: Sequence[str],
                   offsets: Sequence[float] | None = None, token: str | None = None) -> None:
    """Publish hex payloads on ``restaware/<device_id>/raw`` at QoS 1, in order.

    ``offsets`` gives each message's send time in seconds after the first,
    for paced replays. Sleeps target absolute times so overshoot does not
    accumulate.
    """
    addr = parse_broker_url(broker_url, token)
    client = _make_client()
    if addr.username is not None:
        client.username_pw_set(addr.username, addr.password)
    connected = threading.Event()
    client.on_connect = lambda *args: connected.set()
    client.connect(addr.host, addr.port, keepalive=30)
    client.loop_start()
    topic = f"{TOPIC_PREFIX}/{device_id}/raw"
    try:
        # publishes made before CONNACK are queued and would go out in one burst
        if not connected.wait(10):
            raise ConnectionFailed(f"no CONNACK from {addr.host}:{addr.port}")
        infos = []
        t0 = time.monotonic()
        for i, payload in enumerate(payloads):
            if offsets is not None:
                wait = t0 + offsets[i] - time.monotonic()
                if wait > 0:
                    time.sleep(wait)
            infos.append(client.publish(topic, payload, qos=1))
        for info in infos:
            info.wait_for_publish(timeout=10)
    finally:
        client.disconnect()
        client.loop_stop()

"""Radar frame codec: CRC, frame encode/decode and a resynchronizing stream parser.

Wire layout (all multi-byte integers little-endian)::

    0x55 | len(2) | kind=0x04 | 0x03 | addr2 | payload | crc(2)

``len`` counts the bytes from ``kind`` through ``crc`` inclusive and the CRC
(CRC-16/MODBUS) covers every byte before it, the 0x55 header included.
"""
from __future__ import annotations

import enum
import math
import re
import struct
from dataclasses import dataclass
from typing import Union

HEADER = 0x55
KIND_REPORT = 0x04
ADDR1 = 0x03
ADDR_PRESENCE = 0x05
ADDR_MOVEMENT = 0x06
ADDR_HEARTBEAT = 0x07

# payload size per addr2 code
PAYLOAD_SIZES = {ADDR_PRESENCE: 1, ADDR_MOVEMENT: 4, ADDR_HEARTBEAT: 0}
HEADER_SIZE = 6  # 0x55, len lo, len hi, kind, addr1, addr2
CRC_SIZE = 2
MAX_FRAME_SIZE = HEADER_SIZE + max(PAYLOAD_SIZES.values()) + CRC_SIZE


class CodecError(ValueError):
    """Raised for values that cannot be put on the wire."""


class InvalidAmplitude(CodecError):
    pass


class InvalidHexDigit(CodecError):
    pass


class OddLength(CodecError):
    pass


def _make_crc_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0xA001 if crc & 1 else crc >> 1
        table.append(crc)
    return table


_CRC_TABLE = _make_crc_table()


def crc16(data: bytes | bytearray | memoryview) -> int:
    """CRC-16/MODBUS (reflected poly 0x8005, init 0xFFFF, no final xor)."""
    crc = 0xFFFF
    table = _CRC_TABLE
    for b in data:
        crc = (crc >> 8) ^ table[(crc ^ b) & 0xFF]
    return crc


class PresenceState(enum.IntEnum):
    UNOCCUPIED = 0x00
    PRESENT_STATIONARY = 0x01
    PRESENT_MOVING = 0x02


@dataclass(frozen=True)
class Presence:
    state: PresenceState

    def __post_init__(self) -> None:
        object.__setattr__(self, "state", PresenceState(self.state))


@dataclass(frozen=True)
class BodyMovement:
    """Movement amplitude report, a dimensionless index in [0, 100].

    The amplitude is rounded to float32 on construction so that a frame
    compares equal to its own decoded wire form.
    """

    amplitude: float

    def __post_init__(self) -> None:
        a = float(self.amplitude)
        if not math.isfinite(a) or not 0.0 <= a <= 100.0:
            raise InvalidAmplitude(f"amplitude must be finite and in [0, 100], got {self.amplitude!r}")
        object.__setattr__(self, "amplitude", struct.unpack("<f", struct.pack("<f", a))[0])


@dataclass(frozen=True)
class Heartbeat:
    pass


RadarFrame = Union[Presence, BodyMovement, Heartbeat]


# Decode diagnostics. These are returned by decode_stream, never raised.

@dataclass(frozen=True)
class DecodeError:
    offset: int
    skipped: int


@dataclass(frozen=True)
class NeedMoreBytes(DecodeError):
    """Buffer ends inside a frame (or is empty); nothing was skipped."""


@dataclass(frozen=True)
class ChecksumMismatch(DecodeError):
    expected: int = 0
    actual: int = 0


@dataclass(frozen=True)
class UnknownFrameKind(DecodeError):
    code: int = 0


@dataclass(frozen=True)
class MalformedLength(DecodeError):
    length: int = 0


@dataclass(frozen=True)
class InvalidPayload(DecodeError):
    reason: str = ""


@dataclass(frozen=True)
class Resync(DecodeError):
    """A run of bytes that could not start a frame was discarded."""


def encode_frame(frame: RadarFrame) -> bytes:
    if isinstance(frame, Presence):
        addr2, payload = ADDR_PRESENCE, bytes([int(frame.state)])
    elif isinstance(frame, BodyMovement):
        a = frame.amplitude
        if not math.isfinite(a) or not 0.0 <= a <= 100.0:
            raise InvalidAmplitude(f"amplitude must be finite and in [0, 100], got {a!r}")
        addr2, payload = ADDR_MOVEMENT, struct.pack("<f", a)
    elif isinstance(frame, Heartbeat):
        addr2, payload = ADDR_HEARTBEAT, b""
    else:
        raise TypeError(f"not a radar frame: {frame!r}")
    length = 3 + len(payload) + CRC_SIZE
    body = bytes([HEADER]) + struct.pack("<H", length) + bytes([KIND_REPORT, ADDR1, addr2]) + payload
    return body + struct.pack("<H", crc16(body))


def _expected_length(addr2: int) -> int:
    return 3 + PAYLOAD_SIZES[addr2] + CRC_SIZE


def _check_header(buf: bytes, pos: int, avail: int) -> DecodeError | None:
    """Validate whatever part of the 6-byte header is available."""
    if avail >= 3:
        length = buf[pos + 1] | (buf[pos + 2] << 8)
        if length not in (5, 6, 9):
            return MalformedLength(pos, 1, length=length)
    if avail >= 4 and buf[pos + 3] != KIND_REPORT:
        return UnknownFrameKind(pos, 1, code=buf[pos + 3])
    if avail >= 5 and buf[pos + 4] != ADDR1:
        return UnknownFrameKind(pos, 1, code=buf[pos + 4])
    if avail >= 6:
        addr2 = buf[pos + 5]
        if addr2 not in PAYLOAD_SIZES:
            return UnknownFrameKind(pos, 1, code=addr2)
        length = buf[pos + 1] | (buf[pos + 2] << 8)
        if length != _expected_length(addr2):
            return MalformedLength(pos, 1, length=length)
    return None


def _parse_payload(addr2: int, payload: bytes) -> RadarFrame:
    if addr2 == ADDR_PRESENCE:
        return Presence(PresenceState(payload[0]))
    if addr2 == ADDR_MOVEMENT:
        return BodyMovement(struct.unpack("<f", payload)[0])
    return Heartbeat()


def decode_stream(buffer: bytes | bytearray) -> tuple[list[RadarFrame], int, list[DecodeError]]:
    """Decode every complete frame in ``buffer``.

    Returns ``(frames, consumed, errors)``. ``consumed`` stops before a
    trailing partial frame so the caller can keep those bytes and retry once
    more data arrives. Corrupt candidates are skipped one byte at a time.
    """
    buf = bytes(buffer)
    n = len(buf)
    frames: list[RadarFrame] = []
    errors: list[DecodeError] = []
    if n == 0:
        return frames, 0, [NeedMoreBytes(0, 0)]

    pos = 0
    junk_start = -1
    while pos < n:
        if buf[pos] != HEADER:
            if junk_start < 0:
                junk_start = pos
            pos += 1
            continue
        if junk_start >= 0:
            errors.append(Resync(junk_start, pos - junk_start))
            junk_start = -1

        avail = n - pos
        err = _check_header(buf, pos, min(avail, HEADER_SIZE))
        if err is not None:
            errors.append(err)
            pos += 1
            continue
        if avail < HEADER_SIZE:
            errors.append(NeedMoreBytes(pos, 0))
            return frames, pos, errors

        addr2 = buf[pos + 5]
        total = 3 + _expected_length(addr2)
        if avail < total:
            errors.append(NeedMoreBytes(pos, 0))
            return frames, pos, errors

        expected = crc16(buf[pos:pos + total - CRC_SIZE])
        actual = buf[pos + total - 2] | (buf[pos + total - 1] << 8)
        if expected != actual:
            errors.append(ChecksumMismatch(pos, 1, expected=expected, actual=actual))
            pos += 1
            continue
        try:
            frame = _parse_payload(addr2, buf[pos + HEADER_SIZE:pos + total - CRC_SIZE])
        except (ValueError, CodecError) as exc:
            errors.append(InvalidPayload(pos, 1, reason=str(exc)))
            pos += 1
            continue
        frames.append(frame)
        pos += total

    if junk_start >= 0:
        errors.append(Resync(junk_start, n - junk_start))
    return frames, n, errors


_HEX_RE = re.compile(r"[0-9A-Fa-f]*")


def hex_decode(text: str) -> bytes:
    """Parse ASCII hex; whitespace between byte pairs is ignored."""
    compact = "".join(text.split())
    if not _HEX_RE.fullmatch(compact):
        bad = next(ch for ch in compact if ch not in "0123456789abcdefABCDEF")
        raise InvalidHexDigit(f"invalid hex digit {bad!r}")
    if len(compact) % 2:
        raise OddLength(f"hex string has odd length {len(compact)}")
    # whitespace inside a byte pair ("5 5") is not a separator between pairs
    for token in text.split():
        if len(token) % 2:
            raise OddLength(f"hex token {token!r} splits a byte")
    return bytes.fromhex(compact)


def hex_encode(data: bytes | bytearray) -> str:
    return bytes(data).hex().upper()


def frame_to_dict(frame: RadarFrame) -> dict:
    """JSON-friendly view of a frame."""
    if isinstance(frame, Presence):
        return {"type": "presence", "state": frame.state.name.lower()}
    if isinstance(frame, BodyMovement):
        return {"type": "body_movement", "amplitude": frame.amplitude}
    return {"type": "heartbeat"}

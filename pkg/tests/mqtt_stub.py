"""Minimal in-process MQTT 3.1.1 broker for loopback tests.

Handles CONNECT, SUBSCRIBE (with + and # filters), PUBLISH at QoS 0/1,
PUBACK, PINGREQ and DISCONNECT. No retained messages, no sessions, no auth.
"""
from __future__ import annotations

import socket
import socketserver
import struct
import threading


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed")
        buf += chunk
    return buf


def _read_packet(sock: socket.socket) -> tuple[int, int, bytes]:
    first = _read_exact(sock, 1)[0]
    mult, length = 1, 0
    while True:
        b = _read_exact(sock, 1)[0]
        length += (b & 0x7F) * mult
        if not b & 0x80:
            break
        mult *= 128
    return first >> 4, first & 0x0F, _read_exact(sock, length)


def _encode_length(n: int) -> bytes:
    out = bytearray()
    while True:
        b = n % 128
        n //= 128
        out.append(b | 0x80 if n else b)
        if not n:
            return bytes(out)


def _packet(ptype: int, flags: int, body: bytes) -> bytes:
    return bytes([(ptype << 4) | flags]) + _encode_length(len(body)) + body


def _utf8(s: str) -> bytes:
    b = s.encode()
    return struct.pack("!H", len(b)) + b


def topic_matches(filt: str, topic: str) -> bool:
    f, t = filt.split("/"), topic.split("/")
    for i, part in enumerate(f):
        if part == "#":
            return True
        if i >= len(t) or (part != "+" and part != t[i]):
            return False
    return len(f) == len(t)


class StubBroker:
    def __init__(self, host: str = "127.0.0.1") -> None:
        broker = self
        self._lock = threading.Lock()
        self._subs: list[tuple["_Handler", str, int]] = []
        self.published: list[tuple[str, bytes]] = []

        class _Handler(socketserver.BaseRequestHandler):
            def setup(self):
                # without this, Nagle plus delayed ACK holds small packets for ~40 ms
                self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                self.send_lock = threading.Lock()
                self.next_id = 1

            def send(self, data: bytes) -> None:
                with self.send_lock:
                    self.request.sendall(data)

            def handle(self):
                sock = self.request
                try:
                    while True:
                        ptype, flags, body = _read_packet(sock)
                        if ptype == 1:  # CONNECT
                            self.send(_packet(2, 0, b"\x00\x00"))
                        elif ptype == 3:  # PUBLISH
                            qos = (flags >> 1) & 3
                            tlen = struct.unpack("!H", body[:2])[0]
                            topic = body[2:2 + tlen].decode()
                            pos = 2 + tlen
                            if qos:
                                pid = body[pos:pos + 2]
                                pos += 2
                                self.send(_packet(4, 0, pid))
                            broker._route(topic, body[pos:], qos)
                        elif ptype == 8:  # SUBSCRIBE
                            pid = body[:2]
                            pos, granted = 2, []
                            while pos < len(body):
                                flen = struct.unpack("!H", body[pos:pos + 2])[0]
                                filt = body[pos + 2:pos + 2 + flen].decode()
                                qos = body[pos + 2 + flen] & 3
                                pos += 3 + flen
                                granted.append(min(qos, 1))
                                with broker._lock:
                                    broker._subs.append((self, filt, min(qos, 1)))
                            self.send(_packet(9, 0, pid + bytes(granted)))
                        elif ptype == 12:  # PINGREQ
                            self.send(_packet(13, 0, b""))
                        elif ptype == 14:  # DISCONNECT
                            return
                        # PUBACK (4) from subscribers is ignored
                except (ConnectionError, OSError):
                    return
                finally:
                    with broker._lock:
                        broker._subs = [s for s in broker._subs if s[0] is not self]

            def deliver(self, topic: str, payload: bytes, qos: int) -> None:
                body = _utf8(topic)
                if qos:
                    with self.send_lock:
                        pid = self.next_id
                        self.next_id = self.next_id % 65535 + 1
                    body += struct.pack("!H", pid)
                self.send(_packet(3, qos << 1, body + payload))

        class _Server(socketserver.ThreadingTCPServer):
            daemon_threads = True
            allow_reuse_address = True

        self._server = _Server((host, 0), _Handler)
        self.host, self.port = self._server.server_address[:2]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        return f"mqtt://{self.host}:{self.port}"

    def _route(self, topic: str, payload: bytes, qos: int) -> None:
        with self._lock:
            self.published.append((topic, payload))
            targets = [(h, q) for h, f, q in self._subs if topic_matches(f, topic)]
        for handler, sub_qos in targets:
            try:
                handler.deliver(topic, payload, min(qos, sub_qos))
            except OSError:
                pass

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

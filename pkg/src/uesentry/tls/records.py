"""Just enough of the TLS record and handshake layers to probe a server.

Nothing here does cryptography: ClientHello/ServerHello/Alert/heartbeat
records are built and parsed, never completed into a session.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Optional, Union

MAX_OFFERED_CIPHERS = 512
MAX_RECORD_BODY = (1 << 14) + 2048
RECORD_HEADER = struct.Struct("!BHH")


class ContentType(IntEnum):
    CHANGE_CIPHER_SPEC = 0x14
    ALERT = 0x15
    HANDSHAKE = 0x16
    APPLICATION_DATA = 0x17
    HEARTBEAT = 0x18


class HandshakeType(IntEnum):
    CLIENT_HELLO = 1
    SERVER_HELLO = 2
    CERTIFICATE = 11
    SERVER_HELLO_DONE = 14


class AlertLevel(IntEnum):
    WARNING = 1
    FATAL = 2


class AlertDescription(IntEnum):
    CLOSE_NOTIFY = 0
    UNEXPECTED_MESSAGE = 10
    HANDSHAKE_FAILURE = 40
    ILLEGAL_PARAMETER = 47
    DECODE_ERROR = 50
    PROTOCOL_VERSION = 70
    INTERNAL_ERROR = 80


class Extension(IntEnum):
    SUPPORTED_GROUPS = 0x000A
    SIGNATURE_ALGORITHMS = 0x000D
    HEARTBEAT = 0x000F
    SUPPORTED_VERSIONS = 0x002B


class TlsVersion(Enum):
    # value: (display name, protocol version code)
    TLS1_0 = ("TLS1.0", 0x0301)
    TLS1_1 = ("TLS1.1", 0x0302)
    TLS1_2 = ("TLS1.2", 0x0303)
    TLS1_3 = ("TLS1.3", 0x0304)

    @property
    def label(self) -> str:
        return self.value[0]

    @property
    def code(self) -> int:
        return self.value[1]

    @property
    def record_version(self) -> int:
        # TLS 1.3 hellos carry the legacy 1.0 record version.
        return 0x0301 if self is TlsVersion.TLS1_3 else self.code

    @classmethod
    def from_label(cls, label: str) -> "TlsVersion":
        for v in cls:
            if v.label == label:
                return v
        raise ValueError(f"unknown TLS version {label!r}")

    @classmethod
    def from_code(cls, code: int) -> Optional["TlsVersion"]:
        for v in cls:
            if v.code == code:
                return v
        return None

    def __lt__(self, other):
        if not isinstance(other, TlsVersion):
            return NotImplemented
        return self.code < other.code


def is_tls13_suite(cipher_id: int) -> bool:
    return cipher_id >> 8 == 0x13


def suite_fits_version(cipher_id: int, version: TlsVersion) -> bool:
    """TLS 1.3 suites are only negotiable in TLS 1.3, and vice versa."""
    return is_tls13_suite(cipher_id) == (version is TlsVersion.TLS1_3)


@dataclass(frozen=True)
class ProbeSpec:
    offered_version: TlsVersion
    offered_ciphers: tuple[int, ...]
    include_heartbeat_extension: bool = False

    def __post_init__(self):
        if not self.offered_ciphers:
            raise ValueError("ProbeSpec needs at least one offered cipher")
        if len(self.offered_ciphers) > MAX_OFFERED_CIPHERS:
            raise ValueError(f"ProbeSpec offers more than {MAX_OFFERED_CIPHERS} ciphers")
        if any(not 0 <= c <= 0xFFFF for c in self.offered_ciphers):
            raise ValueError("cipher ids must be 16-bit")
        object.__setattr__(self, "offered_ciphers", tuple(self.offered_ciphers))


def _u8(n: int) -> bytes:
    return struct.pack("!B", n)


def _u16(n: int) -> bytes:
    return struct.pack("!H", n)


def _u24(n: int) -> bytes:
    return struct.pack("!I", n)[1:]


def _ext(ext_type: int, body: bytes) -> bytes:
    return _u16(ext_type) + _u16(len(body)) + body


def record(content_type: int, version: int, body: bytes) -> bytes:
    return RECORD_HEADER.pack(content_type, version, len(body)) + body


def _handshake(msg_type: int, body: bytes) -> bytes:
    return _u8(msg_type) + _u24(len(body)) + body


_GROUPS = (0x001D, 0x0017, 0x0018, 0x0100)
_SIG_ALGS = (0x0403, 0x0503, 0x0804, 0x0805, 0x0401, 0x0501, 0x0201, 0x0203)


def build_client_hello(spec: ProbeSpec, random: Optional[bytes] = None) -> bytes:
    random = os.urandom(32) if random is None else random
    if len(random) != 32:
        raise ValueError("client random must be 32 bytes")
    tls13 = spec.offered_version is TlsVersion.TLS1_3
    client_version = 0x0303 if tls13 else spec.offered_version.code
    ciphers = b"".join(_u16(c) for c in spec.offered_ciphers)
    body = _u16(client_version) + random + _u8(0)
    body += _u16(len(ciphers)) + ciphers
    body += _u8(1) + _u8(0)  # null compression only

    groups = b"".join(_u16(g) for g in _GROUPS)
    sigs = b"".join(_u16(s) for s in _SIG_ALGS)
    exts = _ext(Extension.SUPPORTED_GROUPS, _u16(len(groups)) + groups)
    exts += _ext(Extension.SIGNATURE_ALGORITHMS, _u16(len(sigs)) + sigs)
    if tls13:
        exts += _ext(Extension.SUPPORTED_VERSIONS, _u8(2) + _u16(TlsVersion.TLS1_3.code))
    if spec.include_heartbeat_extension:
        exts += _ext(Extension.HEARTBEAT, _u8(1))  # peer_allowed_to_send
    body += _u16(len(exts)) + exts
    return record(ContentType.HANDSHAKE, spec.offered_version.record_version, _handshake(HandshakeType.CLIENT_HELLO, body))


class _Short(Exception):
    pass


class _Reader:
    """Bounds-checked cursor; running off the end raises ``_Short``."""

    def __init__(self, data: bytes, start: int = 0, end: Optional[int] = None):
        self.data = data
        self.pos = start
        self.end = len(data) if end is None else end

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise _Short()
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("!H", self.take(2))[0]

    def u24(self) -> int:
        return int.from_bytes(self.take(3), "big")

    def sub(self, n: int) -> "_Reader":
        start = self.pos
        self.take(n)
        return _Reader(self.data, start, start + n)

    @property
    def remaining(self) -> int:
        return self.end - self.pos


def _parse_extensions(r: _Reader) -> dict[int, bytes]:
    exts: dict[int, bytes] = {}
    if r.remaining == 0:
        return exts
    block = r.sub(r.u16())
    while block.remaining:
        ext_type = block.u16()
        exts[ext_type] = block.take(block.u16())
    return exts


# -- server side (used by the fixture) ----------------------------------------

@dataclass(frozen=True)
class ClientHello:
    record_version: int
    client_version: int
    ciphers: tuple[int, ...]
    extensions: dict = field(hash=False, compare=False, default_factory=dict)

    @property
    def offered_versions(self) -> list[int]:
        sv = self.extensions.get(Extension.SUPPORTED_VERSIONS)
        if sv is not None:
            r = _Reader(sv)
            try:
                lst = r.sub(r.u8())
                return [lst.u16() for _ in range(lst.remaining // 2)]
            except _Short:
                return []
        return [min(self.client_version, 0x0303)]

    @property
    def wants_heartbeat(self) -> bool:
        return Extension.HEARTBEAT in self.extensions


def parse_client_hello(data: bytes) -> ClientHello:
    """Parse a single handshake record holding a ClientHello; ValueError if malformed."""
    try:
        r = _Reader(bytes(data))
        ctype, rversion, length = r.u8(), r.u16(), r.u16()
        if ctype != ContentType.HANDSHAKE:
            raise ValueError("not a handshake record")
        body = r.sub(length)
        if r.remaining:
            raise ValueError("trailing bytes after record")
        if body.u8() != HandshakeType.CLIENT_HELLO:
            raise ValueError("not a ClientHello")
        hello = body.sub(body.u24())
        client_version = hello.u16()
        hello.take(32)
        hello.take(hello.u8())
        suites = hello.sub(hello.u16())
        if suites.remaining % 2:
            raise ValueError("odd cipher suite list length")
        ciphers = tuple(suites.u16() for _ in range(suites.remaining // 2))
        hello.take(hello.u8())
        exts = _parse_extensions(hello)
    except _Short:
        raise ValueError("truncated ClientHello") from None
    return ClientHello(rversion, client_version, ciphers, exts)


def build_server_hello(
    version: TlsVersion,
    cipher: int,
    heartbeat: bool = False,
    certificate: bytes = b"",
    random: Optional[bytes] = None,
) -> bytes:
    random = bytes(32) if random is None else random
    tls13 = version is TlsVersion.TLS1_3
    body = _u16(0x0303 if tls13 else version.code) + random + _u8(0) + _u16(cipher) + _u8(0)
    exts = b""
    if tls13:
        exts += _ext(Extension.SUPPORTED_VERSIONS, _u16(version.code))
    if heartbeat:
        exts += _ext(Extension.HEARTBEAT, _u8(1))
    if exts:
        body += _u16(len(exts)) + exts
    payload = _handshake(HandshakeType.SERVER_HELLO, body)
    if certificate and not tls13:
        cert_list = _u24(len(certificate)) + certificate
        payload += _handshake(HandshakeType.CERTIFICATE, _u24(len(cert_list)) + cert_list)
        payload += _handshake(HandshakeType.SERVER_HELLO_DONE, b"")
    return record(ContentType.HANDSHAKE, 0x0303 if tls13 else version.code, payload)


def build_alert(description: int, level: int = AlertLevel.FATAL, version: int = 0x0303) -> bytes:
    return record(ContentType.ALERT, version, _u8(level) + _u8(description))


# -- client side (used by the scanner) ----------------------------------------

@dataclass(frozen=True)
class ServerHello:
    version_code: int
    cipher: int
    extensions: frozenset[int] = frozenset()

    @property
    def version(self) -> Optional[TlsVersion]:
        return TlsVersion.from_code(self.version_code)

    @property
    def heartbeat(self) -> bool:
        return Extension.HEARTBEAT in self.extensions


@dataclass(frozen=True)
class Alert:
    level: int
    code: int

    @property
    def name(self) -> str:
        try:
            return AlertDescription(self.code).name.lower()
        except ValueError:
            return f"alert_{self.code}"


@dataclass(frozen=True)
class Unparseable:
    reason: str = ""


ServerResponse = Union[ServerHello, Alert, Unparseable]


def parse_server_response(data: bytes) -> ServerResponse:
    """Classify the first record of a server's reply. Never raises on bad input."""
    try:
        r = _Reader(bytes(data))
        ctype = r.u8()
        r.u16()  # record-layer version is not trusted
        length = r.u16()
        if length > MAX_RECORD_BODY:
            return Unparseable("oversized record")
        body = r.sub(length)
        if ctype == ContentType.ALERT:
            if length != 2:
                return Unparseable("bad alert length")
            return Alert(body.u8(), body.u8())
        if ctype != ContentType.HANDSHAKE:
            return Unparseable(f"unexpected content type 0x{ctype:02x}")
        if body.u8() != HandshakeType.SERVER_HELLO:
            return Unparseable("first handshake message is not ServerHello")
        hello = body.sub(body.u24())
        version = hello.u16()
        hello.take(32)
        sid_len = hello.u8()
        if sid_len > 32:
            return Unparseable("session id too long")
        hello.take(sid_len)
        cipher = hello.u16()
        hello.u8()
        exts = _parse_extensions(hello)
        if hello.remaining:
            return Unparseable("trailing bytes in ServerHello")
        sv = exts.get(Extension.SUPPORTED_VERSIONS)
        if sv is not None:
            if len(sv) != 2:
                return Unparseable("bad supported_versions extension")
            version = struct.unpack("!H", sv)[0]
        return ServerHello(version, cipher, frozenset(exts))
    except _Short:
        return Unparseable("truncated")


def build_heartbeat_request(version_code: int, payload: bytes, declared_length: Optional[int] = None) -> bytes:
    declared = len(payload) if declared_length is None else declared_length
    return record(ContentType.HEARTBEAT, version_code, _u8(1) + _u16(declared) + payload)


@dataclass(frozen=True)
class HeartbeatMessage:
    kind: int
    declared_length: int
    payload: bytes  # bytes actually present after the length field


def parse_heartbeat(data: bytes) -> Optional[HeartbeatMessage]:
    try:
        r = _Reader(bytes(data))
        ctype = r.u8()
        r.u16()  # record-layer version is not trusted
        length = r.u16()
        if ctype != ContentType.HEARTBEAT:
            return None
        body = r.sub(length)
        kind = body.u8()
        declared = body.u16()
        return HeartbeatMessage(kind, declared, body.take(body.remaining))
    except _Short:
        return None


def split_records(data: bytes) -> tuple[list[bytes], bytes]:
    """Split complete records off the front of ``data``; returns (records, rest)."""
    out = []
    pos = 0
    while len(data) - pos >= RECORD_HEADER.size:
        _, _, length = RECORD_HEADER.unpack_from(data, pos)
        end = pos + RECORD_HEADER.size + length
        if end > len(data):
            break
        out.append(bytes(data[pos:end]))
        pos = end
    return out, bytes(data[pos:])


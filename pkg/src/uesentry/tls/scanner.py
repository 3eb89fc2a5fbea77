"""Version / cipher-suite enumeration and exploit indicators over raw TLS records."""

from __future__ import annotations

import logging
import socket
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

from .records import (
    RECORD_HEADER,
    MAX_RECORD_BODY,
    Alert,
    ContentType,
    ProbeSpec,
    ServerHello,
    TlsVersion,
    build_client_hello,
    build_heartbeat_request,
    parse_heartbeat,
    parse_server_response,
    suite_fits_version,
)

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 2.0
DEFAULT_PARALLELISM = 4
MAX_ENUMERATION_ROUNDS = 512
EXPORT_DHE = frozenset({0x0011, 0x0014, 0x0019})
HEARTBEAT_DECLARED = 64
HEARTBEAT_PAYLOAD = b"\x42"

Endpoint = tuple[str, int]


class ScannerError(RuntimeError):
    pass


class ProbeStatus(str, Enum):
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"
    UNPARSEABLE = "Unparseable"
    TIMEOUT = "Timeout"
    CONNECT_ERROR = "ConnectError"


class HeartbeatStatus(str, Enum):
    YES = "Yes"
    NO = "No"
    NOT_TESTED = "NotTested"


@dataclass(frozen=True)
class TlsProbeResult:
    spec: ProbeSpec
    status: ProbeStatus
    selected_cipher: Optional[int] = None
    negotiated_version: Optional[TlsVersion] = None
    alert_code: Optional[int] = None
    heartbeat_offered_back: bool = False
    note: str = ""

    @property
    def accepted(self) -> bool:
        return self.status == ProbeStatus.ACCEPTED


@dataclass(frozen=True)
class EndpointPosture:
    accepted_versions: frozenset[TlsVersion]
    accepted_ciphers_by_version: Mapping[TlsVersion, tuple[int, ...]]
    heartbeat_overread_detected: HeartbeatStatus
    export_dhe_accepted: bool
    heartbeat_note: str = ""
    probes: tuple[TlsProbeResult, ...] = field(default=(), compare=False, repr=False)

    def accepted_ciphers(self) -> set[int]:
        return {c for cs in self.accepted_ciphers_by_version.values() for c in cs}


def _recv_record(sock: socket.socket, deadline: float) -> Optional[bytes]:
    """One complete record, or whatever arrived before EOF/timeout (None if nothing)."""
    buf = b""
    need = RECORD_HEADER.size
    while len(buf) < need:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise socket.timeout()
        sock.settimeout(remaining)
        chunk = sock.recv(need - len(buf))
        if not chunk:
            return buf or None
        buf += chunk
        if len(buf) == RECORD_HEADER.size and need == RECORD_HEADER.size:
            length = RECORD_HEADER.unpack(buf)[2]
            if length > MAX_RECORD_BODY:
                return buf
            need += length
    return buf


class Scanner:
    """Probes one endpoint. Every probe result is kept in ``audit``."""

    def __init__(self, endpoint: Endpoint, timeout: float = DEFAULT_TIMEOUT, parallelism: int = DEFAULT_PARALLELISM):
        self.endpoint = endpoint
        self.timeout = timeout
        self.parallelism = max(1, parallelism)
        self.audit: list[TlsProbeResult] = []

    def _connect(self) -> socket.socket:
        return socket.create_connection(self.endpoint, timeout=self.timeout)

    def probe(self, spec: ProbeSpec) -> TlsProbeResult:
        result = self._probe(spec)
        self.audit.append(result)
        return result

    def _probe(self, spec: ProbeSpec) -> TlsProbeResult:
        try:
            sock = self._connect()
        except OSError as exc:
            return TlsProbeResult(spec, ProbeStatus.CONNECT_ERROR, note=str(exc))
        with sock:
            try:
                sock.sendall(build_client_hello(spec))
                data = _recv_record(sock, time.monotonic() + self.timeout)
            except socket.timeout:
                return TlsProbeResult(spec, ProbeStatus.TIMEOUT)
            except OSError as exc:
                return TlsProbeResult(spec, ProbeStatus.UNPARSEABLE, note=f"transport: {exc}")
        return classify(spec, data or b"")

    def enumerate_versions(self, versions: Iterable[TlsVersion], candidates: Sequence[int]) -> set[TlsVersion]:
        specs = []
        for version in versions:
            offered = [c for c in candidates if suite_fits_version(c, version)]
            if offered:
                specs.append(ProbeSpec(version, tuple(offered[:512])))
        with ThreadPoolExecutor(self.parallelism) as pool:
            results = list(pool.map(self.probe, specs))
        if results and all(r.status == ProbeStatus.CONNECT_ERROR for r in results):
            raise ScannerError("endpoint unreachable")
        return {r.spec.offered_version for r in results if r.accepted}

    def enumerate_ciphers(self, version: TlsVersion, candidates: Sequence[int]) -> list[int]:
        remaining = [c for c in candidates if suite_fits_version(c, version)]
        found: list[int] = []
        for _ in range(MAX_ENUMERATION_ROUNDS):
            if not remaining:
                break
            result = self.probe(ProbeSpec(version, tuple(remaining[:512])))
            if not result.accepted:
                break
            found.append(result.selected_cipher)
            remaining = [c for c in remaining if c != result.selected_cipher]
        else:
            raise ScannerError("protocol anomaly: cipher enumeration did not terminate")
        return sorted(found)

    def probe_heartbeat_overread(self, version: Optional[TlsVersion], candidates: Sequence[int]) -> tuple[HeartbeatStatus, str]:
        if version is None or version is TlsVersion.TLS1_3:
            return HeartbeatStatus.NOT_TESTED, "no TLS<=1.2 version accepted"
        offered = tuple(c for c in candidates if suite_fits_version(c, version))[:512]
        spec = ProbeSpec(version, offered, include_heartbeat_extension=True)
        try:
            sock = self._connect()
        except OSError as exc:
            return HeartbeatStatus.NOT_TESTED, f"transport: {exc}"
        with sock:
            try:
                sock.sendall(build_client_hello(spec))
                hello = classify(spec, _recv_record(sock, time.monotonic() + self.timeout) or b"")
                self.audit.append(hello)
                if not hello.accepted:
                    return HeartbeatStatus.NOT_TESTED, f"hello with heartbeat extension not accepted ({hello.status.value})"
                if not hello.heartbeat_offered_back:
                    return HeartbeatStatus.NOT_TESTED, "heartbeat extension not negotiated"
                sock.sendall(build_heartbeat_request(version.code, HEARTBEAT_PAYLOAD, HEARTBEAT_DECLARED))
                deadline = time.monotonic() + self.timeout
                while True:
                    data = _recv_record(sock, deadline)
                    if not data:
                        return HeartbeatStatus.NO, "connection closed without heartbeat response"
                    if data[0] == ContentType.ALERT:
                        return HeartbeatStatus.NO, "alert in reply to heartbeat"
                    if data[0] == ContentType.HEARTBEAT:
                        break
            except socket.timeout:
                return HeartbeatStatus.NO, "no heartbeat response"
            except OSError as exc:
                return HeartbeatStatus.NOT_TESTED, f"transport: {exc}"
        hb = parse_heartbeat(data)
        if hb is None or hb.kind != 2:
            return HeartbeatStatus.NO, "malformed heartbeat response"
        echoed = min(hb.declared_length, len(hb.payload))
        if echoed > len(HEARTBEAT_PAYLOAD):
            return HeartbeatStatus.YES, f"{echoed} payload bytes echoed for {len(HEARTBEAT_PAYLOAD)} sent"
        return HeartbeatStatus.NO, "echo limited to bytes sent"

    def scan(self, candidates: Sequence[int]) -> EndpointPosture:
        candidates = list(dict.fromkeys(candidates))
        versions = self.enumerate_versions(list(TlsVersion), candidates)
        ordered = sorted(versions)
        with ThreadPoolExecutor(self.parallelism) as pool:
            futures = {v: pool.submit(self.enumerate_ciphers, v, candidates) for v in ordered}
            hb_version = max((v for v in ordered if v is not TlsVersion.TLS1_3), default=None)
            hb_future = pool.submit(self.probe_heartbeat_overread, hb_version, candidates)
            by_version = {v: tuple(f.result()) for v, f in futures.items()}
            heartbeat, note = hb_future.result()
        accepted_ids = {c for cs in by_version.values() for c in cs}
        audit = tuple(sorted(self.audit, key=_audit_key))
        return EndpointPosture(
            accepted_versions=frozenset(versions),
            accepted_ciphers_by_version=by_version,
            heartbeat_overread_detected=heartbeat,
            export_dhe_accepted=bool(accepted_ids & EXPORT_DHE),
            heartbeat_note=note,
            probes=audit,
        )


def _audit_key(r: TlsProbeResult):
    return (r.spec.offered_version.code, -len(r.spec.offered_ciphers), r.spec.include_heartbeat_extension, r.status.value)


def classify(spec: ProbeSpec, data: bytes) -> TlsProbeResult:
    """Turn a raw server reply into a probe outcome, enforcing the offered-cipher invariant."""
    response = parse_server_response(data)
    if isinstance(response, Alert):
        return TlsProbeResult(spec, ProbeStatus.REJECTED, alert_code=response.code, note=response.name)
    if isinstance(response, ServerHello):
        if response.cipher not in spec.offered_ciphers:
            return TlsProbeResult(spec, ProbeStatus.UNPARSEABLE, note=f"server selected unoffered cipher 0x{response.cipher:04X}")
        if response.version is not spec.offered_version:
            return TlsProbeResult(spec, ProbeStatus.REJECTED, note=f"negotiated 0x{response.version_code:04X} instead")
        return TlsProbeResult(
            spec, ProbeStatus.ACCEPTED, response.cipher, response.version,
            heartbeat_offered_back=response.heartbeat,
        )
    if not data:
        return TlsProbeResult(spec, ProbeStatus.TIMEOUT, note="connection closed without reply")
    return TlsProbeResult(spec, ProbeStatus.UNPARSEABLE, note=response.reason)


def enumerate_versions(endpoint: Endpoint, candidates: Sequence[int], **kw) -> set[TlsVersion]:
    return Scanner(endpoint, **kw).enumerate_versions(list(TlsVersion), candidates)


def enumerate_ciphers(endpoint: Endpoint, version: TlsVersion, candidates: Sequence[int], **kw) -> list[int]:
    return Scanner(endpoint, **kw).enumerate_ciphers(version, candidates)


def probe_heartbeat_overread(endpoint: Endpoint, version: Optional[TlsVersion], candidates: Sequence[int], **kw) -> HeartbeatStatus:
    return Scanner(endpoint, **kw).probe_heartbeat_overread(version, candidates)[0]


def scan_endpoint(endpoint: Endpoint, candidate_cipher_table: Iterable[int], **kw) -> EndpointPosture:
    return Scanner(endpoint, **kw).scan(sorted(candidate_cipher_table))

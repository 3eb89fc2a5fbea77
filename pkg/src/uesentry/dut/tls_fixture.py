"""Configurable TLS endpoint stand-in: answers hellos and heartbeats, nothing more."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from ..model import ValidationError, data_path, parse_cipher_id
from ..tls.records import (
    AlertDescription,
    ContentType,
    TlsVersion,
    build_alert,
    build_server_hello,
    parse_client_hello,
    parse_heartbeat,
    record,
    suite_fits_version,
)

HEARTBEAT_PADDING = 16


@dataclass(frozen=True)
class TlsFixtureConfig:
    accepted_versions: frozenset[TlsVersion]
    accepted_ciphers: tuple[int, ...]
    heartbeat_enabled: bool = False
    heartbeat_overread: bool = False
    certificate_blob: bytes = b""

    def __post_init__(self):
        if not self.accepted_ciphers:
            raise ValueError("accepted_ciphers must not be empty")
        if self.heartbeat_overread and not self.heartbeat_enabled:
            object.__setattr__(self, "heartbeat_enabled", True)

    def select_cipher(self, offered, version: TlsVersion):
        """First client-offered suite that this endpoint accepts for ``version``."""
        accepted = set(self.accepted_ciphers)
        for c in offered:
            if c in accepted and suite_fits_version(c, version):
                return c
        return None


def fixture_config_from_dict(obj: dict) -> TlsFixtureConfig:
    try:
        versions = frozenset(TlsVersion.from_label(v) for v in obj["accepted_versions"])
        ciphers = tuple(parse_cipher_id(c, "accepted_ciphers") for c in obj["accepted_ciphers"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"invalid TLS fixture config: {exc}") from None
    cert = obj.get("certificate", "")
    blob = bytes.fromhex(cert[4:]) if cert.startswith("hex:") else cert.encode()
    try:
        return TlsFixtureConfig(
            versions,
            ciphers,
            heartbeat_enabled=bool(obj.get("heartbeat_enabled", False)),
            heartbeat_overread=bool(obj.get("heartbeat_overread", False)),
            certificate_blob=blob,
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def load_fixture_config(ref: Union[str, Path]) -> TlsFixtureConfig:
    """Load a config by path, or by name of a shipped fixture (``hardened``, ``rc4``...)."""
    path = Path(ref)
    if not path.exists():
        shipped = data_path("tls_fixtures", f"{ref}.json")
        if not shipped.exists():
            raise ValidationError(f"no TLS fixture config {str(ref)!r}")
        path = shipped
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot load TLS fixture config {path}: {exc}") from None
    return fixture_config_from_dict(obj)


def _respond_heartbeat(config: TlsFixtureConfig, data: bytes) -> bytes:
    hb = parse_heartbeat(data)
    version = int.from_bytes(data[1:3], "big")
    if hb is None:
        return build_alert(AlertDescription.DECODE_ERROR, version=version)
    if not config.heartbeat_enabled or hb.kind != 1:
        return build_alert(AlertDescription.UNEXPECTED_MESSAGE, version=version)
    if hb.declared_length > len(hb.payload):
        if not config.heartbeat_overread:
            return b""  # RFC 6520: silently discard
        # Echo what was declared; whatever lies past the real payload is "memory".
        echoed = hb.payload.ljust(hb.declared_length, b"\x00")[: hb.declared_length]
    else:
        echoed = hb.payload[: hb.declared_length]
    body = bytes([2]) + hb.declared_length.to_bytes(2, "big") + echoed + bytes(HEARTBEAT_PADDING)
    return record(ContentType.HEARTBEAT, version, body)


def tls_fixture_respond(config: TlsFixtureConfig, data: bytes) -> bytes:
    """Answer one client record according to ``config``."""
    if len(data) >= 1 and data[0] == ContentType.HEARTBEAT:
        return _respond_heartbeat(config, data)
    try:
        hello = parse_client_hello(data)
    except ValueError:
        return build_alert(AlertDescription.DECODE_ERROR)
    alert_version = min(hello.client_version, 0x0303) if hello.client_version >= 0x0301 else 0x0301

    accepted_codes = {v.code: v for v in config.accepted_versions}
    common = [accepted_codes[c] for c in hello.offered_versions if c in accepted_codes]
    if not common:
        return build_alert(AlertDescription.PROTOCOL_VERSION, version=alert_version)
    version = max(common)
    cipher = config.select_cipher(hello.ciphers, version)
    if cipher is None:
        return build_alert(AlertDescription.HANDSHAKE_FAILURE, version=alert_version)
    heartbeat = config.heartbeat_enabled and hello.wants_heartbeat and version is not TlsVersion.TLS1_3
    return build_server_hello(version, cipher, heartbeat=heartbeat, certificate=config.certificate_blob)

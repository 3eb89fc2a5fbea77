"""SCP/1: the simplified control-plane wire format spoken between harness and DUT.

Message layout::

    [layer:1][msg_type:1][protection:1][ie_block_len:2 BE][ie_block]

where every information element in the block is ``[tag:1][len:2 BE][value]``.
Messages travel over a byte stream wrapped in ``[len:4 BE][payload]`` frames.

This is *not* 3GPP TS 24.501 / TS 38.331 encoding. It keeps the message
vocabulary and the protection semantics while staying trivially decodable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum, IntFlag
from typing import Iterable, Mapping, Optional, Union

MAX_IE_BLOCK = 0xFFFF
MAX_IE_VALUE = 0xFFFF
MAX_FRAME = 1 << 24

_HEADER = struct.Struct("!BBBH")
_IE_HEADER = struct.Struct("!BH")
_FRAME_HEADER = struct.Struct("!I")


class Layer(IntEnum):
    NAS = 0x01
    RRC = 0x02


class Direction(IntEnum):
    UPLINK = 1
    DOWNLINK = 2


class Protection(IntFlag):
    NONE = 0
    INTEGRITY = 0x01
    CIPHERED = 0x02


# Symbolic protection levels used by the test-case DSL.
PROTECTION_LEVELS = {
    "None": Protection.NONE,
    "IntegrityOnly": Protection.INTEGRITY,
    "IntegrityAndCiphering": Protection.INTEGRITY | Protection.CIPHERED,
}


def protection_name(p: Protection) -> str:
    for name, value in PROTECTION_LEVELS.items():
        if value == p:
            return name
    raise CodecError(f"invalid protection flags 0x{int(p):02x}")


class CodecError(ValueError):
    """Raised when a message cannot be encoded (catalog or size violation)."""


class DecodeError(ValueError):
    """Raised when a byte string is not a valid SCP/1 message."""


class FramingError(ValueError):
    """Stream framing violation; the connection must be dropped."""


@dataclass(frozen=True)
class MessageType:
    layer: Layer
    name: str
    code: int
    direction: Direction

    @property
    def qualified_name(self) -> str:
        return f"{self.layer.name}.{self.name}"


U, D = Direction.UPLINK, Direction.DOWNLINK

_NAS_MESSAGES = [
    ("RegistrationRequest", 0x41, U),
    ("RegistrationAccept", 0x42, D),
    ("RegistrationComplete", 0x43, U),
    ("AuthenticationRequest", 0x44, D),
    ("AuthenticationResponse", 0x45, U),
    ("AuthenticationReject", 0x46, D),
    ("SecurityModeCommand", 0x4D, D),
    ("SecurityModeComplete", 0x4E, U),
    ("SecurityModeReject", 0x4F, U),
    ("IdentityRequest", 0x55, D),
    ("IdentityResponse", 0x56, U),
    ("DeregistrationRequest", 0x5A, D),
    ("ConfigurationUpdateCommand", 0x5B, D),
    ("ServiceReject", 0x5C, D),
    ("DeregistrationAccept", 0x5D, U),
    ("ConfigurationUpdateComplete", 0x5E, U),
]

_RRC_MESSAGES = [
    ("RRCSetupRequest", 0x01, U),
    ("RRCSetup", 0x02, D),
    ("RRCSetupComplete", 0x03, U),
    ("SecurityModeCommand", 0x06, D),
    ("SecurityModeComplete", 0x07, U),
    ("SecurityModeFailure", 0x08, U),
    ("UECapabilityEnquiry", 0x0A, D),
    ("UECapabilityInformation", 0x0B, U),
    ("RRCRelease", 0x0C, D),
    ("RRCReconfiguration", 0x0D, D),
    ("RRCReconfigurationComplete", 0x0E, U),
    ("CounterCheck", 0x10, D),
    ("CounterCheckResponse", 0x11, U),
]

_IES = [
    ("MobileIdentitySuci", 0x10),
    ("MobileIdentityImsi", 0x11),
    ("Cause", 0x12),
    ("SecurityAlgorithms", 0x13),
    ("UeCapabilities", 0x14),
    ("IdentityType", 0x15),
    ("ReleaseCause", 0x16),
    ("AuthenticationRand", 0x17),
    ("AuthenticationAutn", 0x18),
    ("MobileIdentityImei", 0x19),
    ("CounterValues", 0x1A),
    ("NetworkName", 0x1B),
]


class MessageCatalog:
    """Name <-> code mapping for messages (per layer) and IEs (global)."""

    def __init__(self, messages: Mapping[Layer, Iterable[tuple]], ies: Iterable[tuple[str, int]]):
        self._by_code: dict[tuple[Layer, int], MessageType] = {}
        self._by_name: dict[tuple[Layer, str], MessageType] = {}
        for layer, entries in messages.items():
            for name, code, direction in entries:
                mt = MessageType(layer, name, code, direction)
                if (layer, code) in self._by_code:
                    raise ValueError(f"duplicate code 0x{code:02x} in layer {layer.name}")
                if (layer, name) in self._by_name:
                    raise ValueError(f"duplicate name {name} in layer {layer.name}")
                self._by_code[layer, code] = mt
                self._by_name[layer, name] = mt
        self.ie_tags: dict[str, int] = {}
        self.ie_names: dict[int, str] = {}
        for name, tag in ies:
            if name in self.ie_tags or tag in self.ie_names:
                raise ValueError(f"duplicate IE {name}/0x{tag:02x}")
            self.ie_tags[name] = tag
            self.ie_names[tag] = name

    def messages(self, layer: Optional[Layer] = None) -> list[MessageType]:
        return [m for m in self._by_code.values() if layer is None or m.layer == layer]

    def by_code(self, layer: Layer, code: int) -> Optional[MessageType]:
        return self._by_code.get((layer, code))

    def lookup(self, layer: Layer, name: str) -> Optional[MessageType]:
        return self._by_name.get((layer, name))

    def resolve(self, name: str, prefer: Optional[Layer] = None) -> MessageType:
        """Resolve a possibly layer-qualified message name.

        ``"RRC.SecurityModeComplete"`` is exact. An unqualified name is looked
        up in ``prefer`` first, then accepted from the other layer only if it
        is unambiguous there.
        """
        if "." in name:
            layer_name, _, bare = name.partition(".")
            try:
                layer = Layer[layer_name]
            except KeyError:
                raise KeyError(f"unknown layer prefix in {name!r}") from None
            mt = self.lookup(layer, bare)
            if mt is None:
                raise KeyError(f"unknown message type {name!r}")
            return mt
        if prefer is not None and (prefer, name) in self._by_name:
            return self._by_name[prefer, name]
        hits = [m for (_, n), m in self._by_name.items() if n == name]
        if not hits:
            raise KeyError(f"unknown message type {name!r}")
        if len(hits) > 1:
            raise KeyError(f"ambiguous message type {name!r}; qualify it as NAS.{name} or RRC.{name}")
        return hits[0]

    def ie_tag(self, name: str) -> int:
        try:
            return self.ie_tags[name]
        except KeyError:
            raise KeyError(f"unknown IE {name!r}") from None


CATALOG = MessageCatalog({Layer.NAS: _NAS_MESSAGES, Layer.RRC: _RRC_MESSAGES}, _IES)


@dataclass(frozen=True)
class InformationElement:
    tag: int
    value: bytes

    @property
    def name(self) -> str:
        return CATALOG.ie_names.get(self.tag, f"0x{self.tag:02x}")


@dataclass(frozen=True)
class CpMessage:
    layer: Layer
    msg_type: int
    protection: Protection = Protection.NONE
    ies: tuple[InformationElement, ...] = field(default_factory=tuple)

    @classmethod
    def build(
        cls,
        layer: Union[Layer, str],
        name: str,
        protection: Union[Protection, str] = Protection.NONE,
        ies: Optional[Mapping[str, Union[bytes, str]]] = None,
    ) -> "CpMessage":
        if isinstance(layer, str):
            layer = Layer[layer]
        if isinstance(protection, str):
            protection = PROTECTION_LEVELS[protection]
        mt = CATALOG.resolve(name, prefer=layer)
        elements = tuple(
            InformationElement(CATALOG.ie_tag(k), v.encode() if isinstance(v, str) else bytes(v))
            for k, v in (ies or {}).items()
        )
        return cls(mt.layer, mt.code, Protection(protection), elements)

    @property
    def type(self) -> MessageType:
        mt = CATALOG.by_code(self.layer, self.msg_type)
        if mt is None:
            raise CodecError(f"unknown message type 0x{self.msg_type:02x} for layer {self.layer.name}")
        return mt

    @property
    def name(self) -> str:
        mt = CATALOG.by_code(self.layer, self.msg_type)
        return mt.name if mt else f"0x{self.msg_type:02x}"

    @property
    def integrity_protected(self) -> bool:
        return bool(self.protection & Protection.INTEGRITY)

    def ie(self, name: str) -> Optional[bytes]:
        tag = CATALOG.ie_tag(name)
        for element in self.ies:
            if element.tag == tag:
                return element.value
        return None

    def has_ie(self, name: str) -> bool:
        return self.ie(name) is not None

    def __str__(self) -> str:
        ies = ", ".join(e.name for e in self.ies)
        return f"{self.layer.name}.{self.name}[{protection_name(self.protection)}]({ies})"


def encode_message(msg: CpMessage) -> bytes:
    try:
        layer = Layer(msg.layer)
    except ValueError:
        raise CodecError(f"unknown layer {msg.layer!r}") from None
    if CATALOG.by_code(layer, msg.msg_type) is None:
        raise CodecError(f"unknown message type 0x{msg.msg_type:02x} for layer {layer.name}")
    prot = int(msg.protection)
    if prot & ~0x03:
        raise CodecError(f"reserved protection bits set: 0x{prot:02x}")
    if prot & Protection.CIPHERED and not prot & Protection.INTEGRITY:
        raise CodecError("ciphered requires integrity")
    block = bytearray()
    for element in msg.ies:
        if element.tag not in CATALOG.ie_names:
            raise CodecError(f"unknown IE tag 0x{element.tag:02x}")
        if len(element.value) > MAX_IE_VALUE:
            raise CodecError(f"IE {element.name} value exceeds {MAX_IE_VALUE} bytes")
        block += _IE_HEADER.pack(element.tag, len(element.value))
        block += element.value
    if len(block) > MAX_IE_BLOCK:
        raise CodecError(f"IE block of {len(block)} bytes exceeds {MAX_IE_BLOCK}")
    return _HEADER.pack(layer, msg.msg_type, prot, len(block)) + bytes(block)


def decode_message(data: bytes) -> CpMessage:
    data = bytes(data)
    if len(data) < _HEADER.size:
        raise DecodeError("truncated header")
    layer_code, msg_type, prot, block_len = _HEADER.unpack_from(data)
    try:
        layer = Layer(layer_code)
    except ValueError:
        raise DecodeError(f"unknown layer 0x{layer_code:02x}") from None
    if CATALOG.by_code(layer, msg_type) is None:
        raise DecodeError(f"unknown message type 0x{msg_type:02x} for layer {layer.name}")
    if prot & ~0x03:
        raise DecodeError(f"reserved protection bits set: 0x{prot:02x}")
    if prot & Protection.CIPHERED and not prot & Protection.INTEGRITY:
        raise DecodeError("ciphered requires integrity")
    end = _HEADER.size + block_len
    if len(data) < end:
        raise DecodeError("truncated IE block")
    if len(data) > end:
        raise DecodeError("trailing bytes")
    ies = []
    pos = _HEADER.size
    while pos < end:
        if end - pos < _IE_HEADER.size:
            raise DecodeError("truncated IE header")
        tag, length = _IE_HEADER.unpack_from(data, pos)
        pos += _IE_HEADER.size
        if tag not in CATALOG.ie_names:
            raise DecodeError(f"unknown IE tag 0x{tag:02x}")
        if end - pos < length:
            raise DecodeError("truncated IE value")
        ies.append(InformationElement(tag, data[pos:pos + length]))
        pos += length
    return CpMessage(layer, msg_type, Protection(prot), tuple(ies))


def frame_write(payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise FramingError(f"payload of {len(payload)} bytes exceeds frame limit")
    return _FRAME_HEADER.pack(len(payload)) + bytes(payload)


class FrameReader:
    """Incremental ``[len:4 BE][payload]`` parser; one instance per connection.

    ``feed`` bytes as they arrive and call ``next_frame`` until it returns
    ``None`` (need more data).
    """

    def __init__(self, max_frame: int = MAX_FRAME):
        self.max_frame = max_frame
        self._buf = bytearray()

    def feed(self, data: bytes) -> None:
        self._buf += data

    @property
    def buffered(self) -> int:
        return len(self._buf)

    def next_frame(self) -> Optional[bytes]:
        if len(self._buf) < _FRAME_HEADER.size:
            return None
        (length,) = _FRAME_HEADER.unpack_from(self._buf)
        if length > self.max_frame:
            raise FramingError(f"declared frame length {length} exceeds limit {self.max_frame}")
        total = _FRAME_HEADER.size + length
        if len(self._buf) < total:
            return None
        payload = bytes(self._buf[_FRAME_HEADER.size:total])
        del self._buf[:total]
        return payload


def frame_read(stream: bytes) -> tuple[Optional[bytes], bytes]:
    """Read one frame from ``stream``; returns ``(payload, rest)``.

    ``payload`` is ``None`` when the stream does not yet hold a full frame.
    """
    reader = FrameReader()
    reader.feed(stream)
    payload = reader.next_frame()
    if payload is None:
        return None, bytes(stream)
    return payload, bytes(stream[_FRAME_HEADER.size + len(payload):])

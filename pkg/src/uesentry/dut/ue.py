"""Simulated UE: a pure transition function plus seeded-vulnerable variants.

The compliant behaviour follows the 3GPP rule of thumb that before security
activation only a short list of NAS messages is processed without integrity
protection, and afterwards nothing unprotected is processed at all. Each
vulnerability flips a small, named set of rows of that table and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from ..codec import CATALOG, CpMessage, Direction, Layer, Protection


class Vulnerability(str, Enum):
    CAPS_BEFORE_SECURITY = "CapsBeforeSecurity"
    PLAINTEXT_IDENTITY_DISCLOSURE = "PlaintextIdentityDisclosure"
    ACCEPT_UNPROTECTED_DETACH = "AcceptUnprotectedDetach"


class Phase(str, Enum):
    IDLE = "Idle"
    RRC_CONNECTED = "RrcConnected"
    REGISTERING = "Registering"
    AUTHENTICATED = "Authenticated"
    SECURITY_ACTIVATED = "SecurityActivated"
    REGISTERED = "Registered"
    DETACHED = "Detached"


SECURE_PHASES = frozenset({Phase.SECURITY_ACTIVATED, Phase.REGISTERED})
# Phases in which a NAS signalling connection exists but security is not yet active.
NAS_PRE_SECURITY = frozenset({Phase.REGISTERING, Phase.AUTHENTICATED})
RRC_PRE_SECURITY = frozenset({Phase.RRC_CONNECTED}) | NAS_PRE_SECURITY


@dataclass(frozen=True)
class UeProfile:
    name: str
    vulnerabilities: frozenset[Vulnerability] = frozenset()

    @property
    def compliant(self) -> bool:
        return not self.vulnerabilities

    def has(self, v: Vulnerability) -> bool:
        return v in self.vulnerabilities


PROFILES = {
    "compliant": UeProfile("compliant"),
    "caps-before-security": UeProfile("caps-before-security", frozenset({Vulnerability.CAPS_BEFORE_SECURITY})),
    "plaintext-identity-disclosure": UeProfile(
        "plaintext-identity-disclosure", frozenset({Vulnerability.PLAINTEXT_IDENTITY_DISCLOSURE})
    ),
    "accept-unprotected-detach": UeProfile(
        "accept-unprotected-detach", frozenset({Vulnerability.ACCEPT_UNPROTECTED_DETACH})
    ),
}


def get_profile(name: str) -> UeProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown UE profile {name!r}; choose from {', '.join(PROFILES)}") from None


DEFAULT_IMSI = "imsi-001010123456789"
DEFAULT_SUCI = "suci-0-001-01-0000-0-0-0123456789"
DEFAULT_IMEI = "imei-356938035643809"
DEFAULT_CAPABILITIES = bytes.fromhex("0e0100a1b2c3d4e5f60708")


@dataclass(frozen=True)
class UeState:
    phase: Phase = Phase.IDLE
    security_active: bool = False
    identity: str = DEFAULT_IMSI
    capabilities: bytes = DEFAULT_CAPABILITIES
    suci: str = DEFAULT_SUCI
    imei: str = DEFAULT_IMEI

    def __post_init__(self):
        if self.security_active != (self.phase in SECURE_PHASES):
            raise ValueError(f"security_active={self.security_active} inconsistent with phase {self.phase.value}")

    def moved(self, phase: Phase) -> "UeState":
        return replace(self, phase=phase, security_active=phase in SECURE_PHASES)


def state_for(phase: Phase) -> UeState:
    return UeState().moved(phase)


def _up(layer: Layer, name: str, protection: Protection = Protection.NONE, **ies) -> CpMessage:
    return CpMessage.build(layer, name, protection, ies)


def _uplink_protection(state: UeState) -> Protection:
    return Protection.INTEGRITY | Protection.CIPHERED if state.security_active else Protection.NONE


def _null_integrity(msg: CpMessage) -> bool:
    algs = msg.ie("SecurityAlgorithms") or b""
    return b"NIA0" in algs.upper()


def ue_connect(profile: UeProfile, state: Optional[UeState] = None) -> tuple[UeState, CpMessage]:
    """Fresh connection: the UE opens with an RRCSetupRequest from Idle."""
    state = state or UeState()
    return state, _up(Layer.RRC, "RRCSetupRequest")


def ue_autonomous(profile: UeProfile, state: UeState) -> tuple[UeState, Optional[CpMessage]]:
    """Uplinks the UE sends without being asked (registration initiation)."""
    if state.phase == Phase.RRC_CONNECTED:
        return state.moved(Phase.REGISTERING), _up(Layer.NAS, "RegistrationRequest", MobileIdentitySuci=state.suci)
    return state, None


def ue_step(profile: UeProfile, state: UeState, incoming: CpMessage) -> tuple[UeState, Optional[CpMessage]]:
    """Apply one downlink to the UE. Pure and total: anything unexpected is ignored."""
    mt = CATALOG.by_code(incoming.layer, incoming.msg_type)
    if mt is None or mt.direction != Direction.DOWNLINK:
        return state, None
    if state.phase == Phase.DETACHED:
        return state, None
    if incoming.layer == Layer.RRC:
        return _rrc_step(profile, state, incoming, mt.name)
    return _nas_step(profile, state, incoming, mt.name)


def _rrc_step(profile, state, msg, name):
    protected = msg.integrity_protected
    secure = state.security_active
    out = _uplink_protection(state)
    if name == "RRCSetup":
        if state.phase == Phase.IDLE:
            return state.moved(Phase.RRC_CONNECTED), _up(Layer.RRC, "RRCSetupComplete")
        return state, None
    if state.phase == Phase.IDLE:
        return state, None

    if name == "SecurityModeCommand":
        if secure and protected and not _null_integrity(msg):
            return state, _up(Layer.RRC, "SecurityModeComplete", Protection.INTEGRITY)
        return state, _up(Layer.RRC, "SecurityModeFailure", Cause="security-mode-failure")

    if name == "UECapabilityEnquiry":
        if secure:
            if protected:
                return state, _up(Layer.RRC, "UECapabilityInformation", out, UeCapabilities=state.capabilities)
            return state, None
        if profile.has(Vulnerability.CAPS_BEFORE_SECURITY):
            return state, _up(Layer.RRC, "UECapabilityInformation", UeCapabilities=state.capabilities)
        return state, None

    if name == "RRCRelease":
        if not secure or protected:
            return state.moved(Phase.IDLE), None
        return state, None

    if name == "RRCReconfiguration":
        if secure and protected:
            return state, _up(Layer.RRC, "RRCReconfigurationComplete", out)
        return state, None

    if name == "CounterCheck":
        if secure and protected:
            return state, _up(Layer.RRC, "CounterCheckResponse", out, CounterValues=msg.ie("CounterValues") or b"")
        return state, None

    return state, None


def _identity_request(profile, state, msg, protected, secure, out):
    if not protected and profile.has(Vulnerability.PLAINTEXT_IDENTITY_DISCLOSURE):
        return state, _up(Layer.NAS, "IdentityResponse", MobileIdentityImsi=state.identity)
    kind = (msg.ie("IdentityType") or b"").decode("ascii", "replace").upper()
    if secure:
        if not protected:
            return state, None
        if kind == "SUCI":
            return state, _up(Layer.NAS, "IdentityResponse", out, MobileIdentitySuci=state.suci)
        if kind == "IMSI":
            return state, _up(Layer.NAS, "IdentityResponse", out, MobileIdentityImsi=state.identity)
        if kind == "IMEI":
            return state, _up(Layer.NAS, "IdentityResponse", out, MobileIdentityImei=state.imei)
        return state, None
    # Before security only the concealed identifier may be released.
    if kind == "SUCI":
        return state, _up(Layer.NAS, "IdentityResponse", MobileIdentitySuci=state.suci)
    return state, None


def _nas_step(profile, state, msg, name):
    if state.phase in (Phase.IDLE, Phase.RRC_CONNECTED):
        return state, None
    protected = msg.integrity_protected
    secure = state.security_active
    out = _uplink_protection(state)

    if name == "IdentityRequest":
        return _identity_request(profile, state, msg, protected, secure, out)

    if name == "AuthenticationRequest":
        if not secure:
            phase = Phase.AUTHENTICATED if state.phase == Phase.REGISTERING else state.phase
            return state.moved(phase), _up(Layer.NAS, "AuthenticationResponse")
        if protected:
            return state, _up(Layer.NAS, "AuthenticationResponse", out)
        return state, None

    if name == "AuthenticationReject":
        if not secure or protected:
            return state.moved(Phase.DETACHED), None
        return state, None

    if name == "SecurityModeCommand":
        if not protected:
            return state, None
        if _null_integrity(msg) or state.phase == Phase.REGISTERING:
            return state, _up(Layer.NAS, "SecurityModeReject", Cause="security-mode-rejected")
        next_state = state.moved(Phase.SECURITY_ACTIVATED) if state.phase == Phase.AUTHENTICATED else state
        return next_state, _up(Layer.NAS, "SecurityModeComplete", Protection.INTEGRITY | Protection.CIPHERED)

    if name == "RegistrationAccept":
        if secure and protected:
            return state.moved(Phase.REGISTERED), _up(Layer.NAS, "RegistrationComplete", out)
        return state, None

    if name == "DeregistrationRequest":
        if secure and protected:
            return state.moved(Phase.DETACHED), _up(Layer.NAS, "DeregistrationAccept", out)
        if not protected and profile.has(Vulnerability.ACCEPT_UNPROTECTED_DETACH):
            return state.moved(Phase.DETACHED), _up(Layer.NAS, "DeregistrationAccept")
        return state, None

    if name == "ConfigurationUpdateCommand":
        if secure and protected:
            return state, _up(Layer.NAS, "ConfigurationUpdateComplete", out)
        return state, None

    # ServiceReject: no service request is ever pending in this model.
    return state, None

import itertools
import socket

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracle import expected, seeded_row
from uesentry.codec import (
    CATALOG,
    CpMessage,
    Direction,
    FrameReader,
    Layer,
    Protection,
    decode_message,
    encode_message,
    frame_write,
)
from uesentry.dut.servers import UeEndpoint
from uesentry.dut.ue import (
    PROFILES,
    SECURE_PHASES,
    Phase,
    UeState,
    Vulnerability,
    get_profile,
    state_for,
    ue_autonomous,
    ue_connect,
    ue_step,
)

PROTECTIONS = [Protection.NONE, Protection.INTEGRITY, Protection.INTEGRITY | Protection.CIPHERED]
DOWNLINKS = [m for m in CATALOG.messages() if m.direction == Direction.DOWNLINK]


def _variants(mt):
    if mt.name == "IdentityRequest":
        return [{}, {"IdentityType": b"SUCI"}, {"IdentityType": b"IMSI"}, {"IdentityType": b"IMEI"},
                {"IdentityType": b"GUTI"}]
    if mt.name == "SecurityModeCommand":
        return [{}, {"SecurityAlgorithms": b"NEA2,NIA2"}, {"SecurityAlgorithms": b"NEA0,NIA0"}]
    if mt.name == "CounterCheck":
        return [{}, {"CounterValues": b"\x00\x01"}]
    return [{}]


def all_downlinks():
    for mt in DOWNLINKS:
        for protection in PROTECTIONS:
            for ies in _variants(mt):
                yield CpMessage.build(mt.layer, mt.name, protection, ies)


MATRIX = list(itertools.product(sorted(PROFILES), list(Phase), list(all_downlinks())))


def _observed(profile, phase, msg):
    state, reply = ue_step(profile, state_for(phase), msg)
    if reply is None:
        return state.phase, None, ()
    return state.phase, reply.name, tuple(ie.name for ie in reply.ies)


class TestTransitionTable:
    def test_matrix_covers_every_downlink(self):
        names = {(m.layer, m.name) for _, _, m in MATRIX}
        assert names == {(m.layer, m.name) for m in DOWNLINKS}

    def test_matches_oracle(self):
        mismatches = []
        for name, phase, msg in MATRIX:
            profile = PROFILES[name]
            want = expected(profile, phase, msg)
            got = _observed(profile, phase, msg)
            if want != got:
                mismatches.append((name, phase.value, str(msg), want, got))
        assert mismatches == []

    @pytest.mark.parametrize("vuln_profile", [p for p in sorted(PROFILES) if p != "compliant"])
    def test_vulnerable_profile_differs_only_in_seeded_rows(self, vuln_profile):
        compliant = PROFILES["compliant"]
        profile = PROFILES[vuln_profile]
        (vuln,) = profile.vulnerabilities
        differing = set()
        seeded = set()
        for phase in Phase:
            for msg in all_downlinks():
                key = (phase, encode_message(msg))
                if _observed(profile, phase, msg) != _observed(compliant, phase, msg):
                    differing.add(key)
                if seeded_row(vuln, phase, msg):
                    seeded.add(key)
        assert differing == seeded
        assert differing, "seeded vulnerability changes nothing"

    def test_compliant_never_leaks_before_security(self):
        compliant = PROFILES["compliant"]
        for phase in Phase:
            if phase in SECURE_PHASES:
                continue
            for msg in all_downlinks():
                _, reply = ue_step(compliant, state_for(phase), msg)
                if reply is not None:
                    assert not reply.has_ie("MobileIdentityImsi"), (phase, msg)
                    assert not reply.has_ie("UeCapabilities"), (phase, msg)

    def test_secure_phase_replies_are_protected(self):
        # Security-mode rejections go out unprotected: the proposed context is refused.
        unprotected_ok = {"SecurityModeReject", "SecurityModeFailure"}
        for name, phase, msg in MATRIX:
            if phase not in SECURE_PHASES or not msg.integrity_protected:
                continue
            _, reply = ue_step(PROFILES[name], state_for(phase), msg)
            if reply is not None and reply.name not in unprotected_ok:
                assert reply.integrity_protected, (name, phase, msg, reply)


class TestSpecificBehaviors:
    def test_caps_enquiry_pre_security_compliant(self):
        msg = CpMessage.build(Layer.RRC, "UECapabilityEnquiry", "None")
        state = state_for(Phase.RRC_CONNECTED)
        assert ue_step(get_profile("compliant"), state, msg) == (state, None)

    def test_caps_enquiry_pre_security_vulnerable(self):
        msg = CpMessage.build(Layer.RRC, "UECapabilityEnquiry", "None")
        state = state_for(Phase.REGISTERING)
        new_state, reply = ue_step(get_profile("caps-before-security"), state, msg)
        assert new_state == state
        assert reply.name == "UECapabilityInformation"
        assert reply.ie("UeCapabilities") == state.capabilities

    def test_unprotected_dereg_registered(self):
        msg = CpMessage.build(Layer.NAS, "DeregistrationRequest", "None")
        state = state_for(Phase.REGISTERED)
        assert ue_step(get_profile("compliant"), state, msg) == (state, None)
        detached, reply = ue_step(get_profile("accept-unprotected-detach"), state, msg)
        assert detached.phase == Phase.DETACHED and reply.name == "DeregistrationAccept"

    def test_suci_allowed_pre_security(self):
        msg = CpMessage.build(Layer.NAS, "IdentityRequest", "None", {"IdentityType": b"SUCI"})
        _, reply = ue_step(get_profile("compliant"), state_for(Phase.REGISTERING), msg)
        assert reply.has_ie("MobileIdentitySuci") and not reply.has_ie("MobileIdentityImsi")

    def test_state_invariant_enforced(self):
        with pytest.raises(ValueError):
            UeState(Phase.REGISTERING, security_active=True)
        with pytest.raises(ValueError):
            UeState(Phase.REGISTERED, security_active=False)

    def test_connect_and_autonomous_registration(self):
        profile = get_profile("compliant")
        state, first = ue_connect(profile)
        assert state.phase == Phase.IDLE and first.name == "RRCSetupRequest"
        assert ue_autonomous(profile, state) == (state, None)
        state, _ = ue_step(profile, state, CpMessage.build(Layer.RRC, "RRCSetup", "None"))
        state, reg = ue_autonomous(profile, state)
        assert state.phase == Phase.REGISTERING
        assert reg.name == "RegistrationRequest" and reg.has_ie("MobileIdentitySuci")

    def test_uplink_ignored(self):
        msg = CpMessage.build(Layer.NAS, "RegistrationRequest", "None")
        state = state_for(Phase.REGISTERED)
        assert ue_step(get_profile("compliant"), state, msg) == (state, None)

    def test_unknown_profile(self):
        with pytest.raises(KeyError):
            get_profile("no-such-profile")

    @given(
        st.sampled_from(sorted(PROFILES)),
        st.sampled_from(list(Phase)),
        st.sampled_from(list(all_downlinks())),
    )
    def test_deterministic(self, name, phase, msg):
        profile = PROFILES[name]
        assert ue_step(profile, state_for(phase), msg) == ue_step(profile, state_for(phase), msg)


def _exchange(sock, reader, msg):
    sock.sendall(frame_write(encode_message(msg)))


def _recv(sock, reader, timeout=2.0):
    sock.settimeout(timeout)
    while (payload := reader.next_frame()) is None:
        data = sock.recv(4096)
        if not data:
            return None
        reader.feed(data)
    return decode_message(payload)


class TestUeEndpoint:
    def test_full_registration(self):
        with UeEndpoint(get_profile("compliant")) as ue:
            with socket.create_connection(ue.address) as sock:
                reader = FrameReader()
                uplinks = [_recv(sock, reader)]
                script = [
                    CpMessage.build(Layer.RRC, "RRCSetup", "None"),
                    None,  # RRCSetupComplete and RegistrationRequest both follow RRCSetup
                    CpMessage.build(Layer.NAS, "AuthenticationRequest", "None"),
                    CpMessage.build(Layer.NAS, "SecurityModeCommand", "IntegrityOnly",
                                    {"SecurityAlgorithms": b"NEA2,NIA2"}),
                    CpMessage.build(Layer.NAS, "RegistrationAccept", "IntegrityAndCiphering"),
                ]
                for msg in script:
                    if msg is not None:
                        _exchange(sock, reader, msg)
                    uplinks.append(_recv(sock, reader))
            ue.stop()
            assert [m.type.qualified_name for m in uplinks] == [
                "RRC.RRCSetupRequest", "RRC.RRCSetupComplete", "NAS.RegistrationRequest",
                "NAS.AuthenticationResponse", "NAS.SecurityModeComplete", "NAS.RegistrationComplete",
            ]
            assert ue.sessions[-1].final_state.phase == Phase.REGISTERED

    def test_garbage_drops_connection_and_next_starts_fresh(self):
        with UeEndpoint(get_profile("compliant")) as ue:
            with socket.create_connection(ue.address) as sock:
                reader = FrameReader()
                assert _recv(sock, reader).name == "RRCSetupRequest"
                sock.sendall(frame_write(b"\xff\xff\xff"))
                assert _recv(sock, reader) is None  # server closed
            with socket.create_connection(ue.address) as sock:
                assert _recv(sock, FrameReader()).name == "RRCSetupRequest"
        assert ue.sessions[0].dropped.startswith("protocol error")
        assert ue.sessions[1].final_state.phase == Phase.IDLE

    def test_second_connection_waits(self):
        with UeEndpoint(get_profile("compliant")) as ue:
            first = socket.create_connection(ue.address)
            r1 = FrameReader()
            assert _recv(first, r1).name == "RRCSetupRequest"
            second = socket.create_connection(ue.address)
            second.settimeout(0.3)
            with pytest.raises(socket.timeout):
                second.recv(1)
            first.close()
            assert _recv(second, FrameReader()).name == "RRCSetupRequest"
            second.close()

    def test_oversized_frame_drops(self):
        with UeEndpoint(get_profile("compliant")) as ue:
            with socket.create_connection(ue.address) as sock:
                reader = FrameReader()
                _recv(sock, reader)
                sock.sendall((1 << 25).to_bytes(4, "big"))
                assert _recv(sock, reader) is None
        assert "protocol error" in ue.sessions[0].dropped


def test_vulnerabilities_enum_matches_profiles():
    seeded = set().union(*(p.vulnerabilities for p in PROFILES.values()))
    assert seeded == set(Vulnerability)

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from uesentry.codec import CpMessage, Layer
from uesentry.engine import Observation, run_suite
from uesentry.evaluator import UsageError, evaluate_cp, evaluate_tls, load_cipher_table
from uesentry.model import (
    Outcome,
    Severity,
    TraceDirection,
    TraceEvent,
    ValidationError,
    data_path,
    load_policy,
    validate_policy,
)
from uesentry.tls.records import TlsVersion
from uesentry.tls.scanner import EndpointPosture, HeartbeatStatus

TABLE = load_cipher_table()
BSI = load_policy(data_path("policies", "bsi-baseline.json"))
TLS12, TLS13, TLS10 = TlsVersion.TLS1_2, TlsVersion.TLS1_3, TlsVersion.TLS1_0


def _posture(by_version, heartbeat=HeartbeatStatus.NO):
    by_version = {v: tuple(sorted(cs)) for v, cs in by_version.items()}
    accepted = {c for cs in by_version.values() for c in cs}
    return EndpointPosture(frozenset(by_version), by_version, heartbeat, bool(accepted & {0x0011, 0x0014, 0x0019}))


def _received(layer, name, **ies):
    return TraceEvent(TraceDirection.RECEIVED, 10, CpMessage.build(layer, name, "None", ies))


def _obs(case, responses=(), reached=True, error=None):
    return Observation(case.id, reached, tuple(responses), case.expected.timeout_ms, error, tuple(responses))


class TestEvaluateCp:
    def test_must_ignore(self, catalog):
        case = catalog.get("rrc-cap-enquiry-pre-security")
        assert evaluate_cp(_obs(case), case).outcome == Outcome.COMPLIANT
        v = evaluate_cp(_obs(case, [_received(Layer.RRC, "UECapabilityInformation")]), case)
        assert v.outcome == Outcome.NON_COMPLIANT
        assert v.explanation.startswith("responded when silence required")
        assert v.evidence and all(e.direction == TraceDirection.RECEIVED for e in v.evidence)

    def test_must_not_disclose(self, catalog):
        case = catalog.get("nas-idreq-plain")
        assert evaluate_cp(_obs(case), case).outcome == Outcome.COMPLIANT
        suci = _received(Layer.NAS, "IdentityResponse", MobileIdentitySuci=b"suci")
        assert evaluate_cp(_obs(case, [suci]), case).outcome == Outcome.COMPLIANT
        imsi = _received(Layer.NAS, "IdentityResponse", MobileIdentityImsi=b"imsi")
        v = evaluate_cp(_obs(case, [suci, imsi]), case)
        assert v.outcome == Outcome.NON_COMPLIANT and v.evidence == (imsi,)

    def test_must_reject(self, catalog):
        case = catalog.get("rrc-smc-plain")
        failure = _received(Layer.RRC, "SecurityModeFailure")
        assert evaluate_cp(_obs(case, [failure]), case).outcome == Outcome.COMPLIANT
        silent = evaluate_cp(_obs(case), case)
        assert silent.outcome == Outcome.NON_COMPLIANT
        assert "silent when response required" in silent.explanation
        twice = evaluate_cp(_obs(case, [failure, failure]), case)
        assert twice.outcome == Outcome.NON_COMPLIANT

    def test_must_accept(self, catalog):
        case = catalog.get("nas-smc-valid")
        complete = _received(Layer.NAS, "SecurityModeComplete")
        assert evaluate_cp(_obs(case, [complete]), case).outcome == Outcome.COMPLIANT
        wrong = evaluate_cp(_obs(case, [_received(Layer.NAS, "SecurityModeReject")]), case)
        assert wrong.outcome == Outcome.NON_COMPLIANT and wrong.evidence

    def test_error_and_inconclusive(self, catalog):
        case = catalog.get("nas-smc-valid")
        err = evaluate_cp(_obs(case, reached=False, error="connection refused"), case)
        assert err.outcome == Outcome.ERROR and "connection refused" in err.explanation
        assert evaluate_cp(_obs(case, reached=False), case).outcome == Outcome.INCONCLUSIVE

    def test_mismatched_ids(self, catalog):
        with pytest.raises(UsageError):
            evaluate_cp(_obs(catalog.get("nas-smc-valid")), catalog.get("nas-smc-plain"))

    def test_noncompliant_invariant_over_all_rules(self, catalog):
        for case in catalog:
            for responses in ([], [_received(Layer.NAS, "IdentityResponse", MobileIdentityImsi=b"x")]):
                v = evaluate_cp(_obs(case, responses), case)
                if v.outcome == Outcome.NON_COMPLIANT:
                    has_received = any(e.direction == TraceDirection.RECEIVED for e in v.evidence)
                    assert has_received or "silent when response required" in v.explanation


def test_compliant_dut_zero_noncompliant(catalog, ue_endpoint):
    observations = run_suite(catalog, ue_endpoint().address, io_timeout=1.0)
    cases = {c.id: c for c in catalog}
    outcomes = {evaluate_cp(o, cases[o.test_id]).outcome for o in observations}
    assert outcomes == {Outcome.COMPLIANT}


class TestEvaluateTls:
    def test_rc4_single_deprecated_finding(self):
        findings = evaluate_tls(_posture({TLS12: [0x0005]}), BSI, TABLE)
        assert [(f.code, f.severity, f.subject) for f in findings] == [
            ("tls.deprecated-cipher", Severity.High, "TLS_RSA_WITH_RC4_128_SHA")
        ]

    def test_export_and_heartbeat(self):
        findings = evaluate_tls(_posture({TLS12: [0x0014, 0xC02F]}, HeartbeatStatus.YES), BSI, TABLE)
        codes = {(f.code, f.severity) for f in findings}
        assert ("tls.export-cipher", Severity.Critical) in codes
        assert ("tls.heartbeat-overread", Severity.Critical) in codes

    def test_version_disallowed(self):
        findings = evaluate_tls(_posture({TLS10: [0xC02F], TLS12: [0xC02F]}), BSI, TABLE)
        assert [(f.code, f.subject) for f in findings] == [("tls.version-disallowed", "TLS1.0")]

    def test_not_in_policy(self):
        findings = evaluate_tls(_posture({TLS13: [0x1303]}), BSI, TABLE)
        assert [f.code for f in findings] == ["tls.cipher-not-in-policy"]

    def test_unknown_cipher_fails_closed(self):
        findings = evaluate_tls(_posture({TLS12: [0x0A0A]}), BSI, TABLE)
        assert [(f.code, f.severity) for f in findings] == [("tls.unknown-cipher", Severity.Medium)]

    def test_hardened_no_findings(self):
        assert evaluate_tls(_posture({TLS12: [0xC02F, 0xC030], TLS13: [0x1301]}), BSI, TABLE) == []

    def test_override(self):
        doc = json.loads(data_path("policies", "bsi-baseline.json").read_text())
        doc["severity_overrides"] = {"tls.deprecated-cipher": "Low"}
        policy = validate_policy(json.dumps(doc))
        (finding,) = evaluate_tls(_posture({TLS12: [0x0005]}), policy, TABLE)
        # With deprecated lowered to Low, not-in-policy (Medium) is the highest.
        assert (finding.code, finding.severity) == ("tls.cipher-not-in-policy", Severity.Medium)

    def test_sorted(self):
        findings = evaluate_tls(_posture({TLS10: [0x0005, 0x0014, 0x002F], TLS12: [0x002F]}, HeartbeatStatus.YES), BSI, TABLE)
        assert findings == sorted(findings, key=lambda f: (-f.severity, f.code, f.subject))
        assert len({(f.code, f.subject) for f in findings}) == len(findings)


@given(st.sets(st.sampled_from(TABLE.ids()), min_size=1, max_size=12), st.data())
def test_removing_cipher_never_adds_finding(ciphers, data):
    tls12 = sorted(c for c in ciphers if c >> 8 != 0x13)
    tls13 = sorted(c for c in ciphers if c >> 8 == 0x13)
    by_version = {v: cs for v, cs in ((TLS12, tls12), (TLS13, tls13)) if cs}
    before = {(f.code, f.subject) for f in evaluate_tls(_posture(by_version), BSI, TABLE)}
    victim = data.draw(st.sampled_from(sorted(ciphers)))
    reduced = {v: [c for c in cs if c != victim] for v, cs in by_version.items()}
    reduced = {v: cs for v, cs in reduced.items() if cs}
    after = {(f.code, f.subject) for f in evaluate_tls(_posture(reduced), BSI, TABLE)}
    assert after <= before


def test_cipher_table_validation(tmp_path):
    bad = tmp_path / "t.json"
    bad.write_text(json.dumps([{"id": "0x0005", "name": "x", "class": "weird"}]))
    with pytest.raises(ValidationError, match="class"):
        load_cipher_table(bad)
    bad.write_text(json.dumps([{"id": "0x0005", "name": "x", "class": "legacy"}] * 2))
    with pytest.raises(ValidationError, match="duplicate"):
        load_cipher_table(bad)

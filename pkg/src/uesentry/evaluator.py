"""Rule-based judgement of CP observations and TLS postures."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Union

from .codec import CATALOG
from .engine import Observation
from .model import (
    SEVERITY_REGISTRY,
    Finding,
    FindingSource,
    Outcome,
    PolicyDoc,
    Rule,
    TestCase,
    TraceDirection,
    ValidationError,
    Verdict,
    data_path,
    parse_cipher_id,
)
from .tls.scanner import EndpointPosture, HeartbeatStatus

CIPHER_CLASSES = ("modern", "legacy", "deprecated", "export")


@dataclass(frozen=True)
class CipherSuite:
    id: int
    name: str
    cls: str


class CipherTable(dict):
    """Cipher id -> CipherSuite, loaded from the shipped JSON (or a user file)."""

    def ids(self) -> list[int]:
        return sorted(self)


def load_cipher_table(path: Union[str, Path, None] = None) -> CipherTable:
    path = Path(path) if path else data_path("ciphers.json")
    try:
        rows = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot load cipher table {path}: {exc}") from None
    table = CipherTable()
    for i, row in enumerate(rows):
        cid = parse_cipher_id(row.get("id"), f"ciphers[{i}].id")
        if row.get("class") not in CIPHER_CLASSES:
            raise ValidationError(f"class must be one of {', '.join(CIPHER_CLASSES)}", f"ciphers[{i}].class")
        if cid in table:
            raise ValidationError(f"duplicate cipher 0x{cid:04X}", f"ciphers[{i}].id")
        table[cid] = CipherSuite(cid, str(row["name"]), row["class"])
    return table


class UsageError(ValueError):
    pass


def _received(obs: Observation):
    return [e for e in obs.responses if e.direction == TraceDirection.RECEIVED]


def _names(events) -> str:
    return ", ".join(f"{e.message.layer.name}.{e.message.name}" for e in events) or "nothing"


def evaluate_cp(obs: Observation, case: TestCase) -> Verdict:
    if obs.test_id != case.id:
        raise UsageError(f"observation for {obs.test_id!r} evaluated against case {case.id!r}")
    if obs.transport_error:
        return Verdict(case.id, Outcome.ERROR, (), f"transport failure: {obs.transport_error}")
    if not obs.trigger_reached:
        return Verdict(
            case.id, Outcome.INCONCLUSIVE, obs.trace,
            f"trigger {case.trigger.message_type} in {case.trigger.state.value} was never reached",
        )

    responses = _received(obs)
    exp = case.expected
    rule = exp.rule
    if rule == Rule.MUST_IGNORE:
        if not responses:
            return Verdict(case.id, Outcome.COMPLIANT, (), f"silent for {exp.timeout_ms} ms as required")
        return Verdict(
            case.id, Outcome.NON_COMPLIANT, tuple(responses),
            f"responded when silence required: {_names(responses)}",
        )

    if rule == Rule.MUST_NOT_DISCLOSE:
        tag = CATALOG.ie_tag(exp.forbidden_ie)
        leaking = [e for e in responses if any(ie.tag == tag for ie in e.message.ies)]
        if leaking:
            return Verdict(
                case.id, Outcome.NON_COMPLIANT, tuple(leaking),
                f"disclosed {exp.forbidden_ie} in {_names(leaking)}",
            )
        if not responses:
            return Verdict(case.id, Outcome.COMPLIANT, (), f"silent; {exp.forbidden_ie} not disclosed")
        return Verdict(
            case.id, Outcome.COMPLIANT, tuple(responses),
            f"{exp.forbidden_ie} not disclosed in {_names(responses)}",
        )

    wanted = CATALOG.resolve(exp.response_type, prefer=case.layer)
    matching = [e for e in responses if e.message.type == wanted]
    if rule == Rule.MUST_REJECT:
        if len(matching) == 1 and len(responses) == 1:
            return Verdict(case.id, Outcome.COMPLIANT, tuple(matching), f"rejected with {wanted.qualified_name}")
        if not responses:
            return Verdict(
                case.id, Outcome.NON_COMPLIANT, (),
                f"silent when response required: expected exactly one {wanted.qualified_name}",
            )
        return Verdict(
            case.id, Outcome.NON_COMPLIANT, tuple(responses),
            f"expected exactly one {wanted.qualified_name}, got {_names(responses)}",
        )

    # MustAccept
    if matching:
        return Verdict(case.id, Outcome.COMPLIANT, tuple(matching), f"accepted with {wanted.qualified_name}")
    if not responses:
        return Verdict(
            case.id, Outcome.NON_COMPLIANT, (),
            f"silent when response required: expected {wanted.qualified_name}",
        )
    return Verdict(
        case.id, Outcome.NON_COMPLIANT, tuple(responses),
        f"expected {wanted.qualified_name}, got {_names(responses)}",
    )


_RECOMMENDATIONS = {
    "tls.version-disallowed": "Disable this protocol version on the endpoint.",
    "tls.export-cipher": "Remove export-grade suites; they are trivially breakable (LOGJAM/FREAK class).",
    "tls.deprecated-cipher": "Remove this suite; its cipher or key exchange is known-broken.",
    "tls.legacy-cipher": "Prefer forward-secret AEAD suites; retire this suite.",
    "tls.cipher-not-in-policy": "Remove this suite or add it to the policy after review.",
    "tls.unknown-cipher": "Identify this suite and classify it in the cipher table.",
    "tls.heartbeat-overread": "Patch the TLS library (Heartbleed class) and disable heartbeats.",
    "tls.scanner-error": "Check that the endpoint is reachable and speaks TLS, then rescan.",
}

_CLASS_CODES = {"export": "tls.export-cipher", "deprecated": "tls.deprecated-cipher", "legacy": "tls.legacy-cipher"}


def _finding(code: str, subject: str, evidence: str, policy: Optional[PolicyDoc]) -> Finding:
    severity = policy.severity(code) if policy else SEVERITY_REGISTRY[code]
    return Finding(FindingSource.TLS, code, severity, subject, evidence, _RECOMMENDATIONS[code])


def evaluate_tls(posture: EndpointPosture, policy: PolicyDoc, cipher_table: Mapping[int, CipherSuite]) -> list[Finding]:
    findings = []
    for version in sorted(posture.accepted_versions):
        if version.label not in policy.allowed_versions:
            findings.append(_finding(
                "tls.version-disallowed", version.label,
                f"endpoint negotiated {version.label}; policy {policy.name} allows {', '.join(sorted(policy.allowed_versions))}",
                policy,
            ))

    seen_in: dict[int, list[str]] = {}
    for version in sorted(posture.accepted_ciphers_by_version):
        for cid in posture.accepted_ciphers_by_version[version]:
            seen_in.setdefault(cid, []).append(version.label)

    for cid in sorted(seen_in):
        versions = "/".join(seen_in[cid])
        suite = cipher_table.get(cid)
        if suite is None:
            findings.append(_finding(
                "tls.unknown-cipher", f"0x{cid:04X}", f"accepted under {versions}; not in cipher table", policy))
            continue
        candidates = []
        if suite.cls in _CLASS_CODES:
            candidates.append((_CLASS_CODES[suite.cls], f"class={suite.cls}"))
        if cid not in policy.allowed_ciphers:
            candidates.append(("tls.cipher-not-in-policy", f"not allowed by policy {policy.name}"))
        if not candidates:
            continue
        # One finding per cipher: highest severity wins, ties broken by code.
        code, _ = min(candidates, key=lambda c: (-int(policy.severity(c[0])), c[0]))
        reasons = "; ".join(reason for _, reason in candidates)
        findings.append(_finding(code, suite.name, f"0x{cid:04X} accepted under {versions}; {reasons}", policy))

    if posture.heartbeat_overread_detected == HeartbeatStatus.YES:
        findings.append(_finding(
            "tls.heartbeat-overread", "heartbeat",
            "heartbeat request declaring 64 bytes with 1 byte sent was answered with more than 1 byte", policy,
        ))
    return sorted(findings, key=Finding.sort_key)


def scanner_error_finding(endpoint: str, error: str) -> Finding:
    return _finding("tls.scanner-error", endpoint, error, None)


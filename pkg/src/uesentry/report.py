"""Unified CP + TLS report: consolidation, canonical JSON and a plain-text view."""

from __future__ import annotations

import json
from typing import Iterable, Mapping

from .model import (
    SEVERITY_REGISTRY,
    Finding,
    FindingSource,
    Outcome,
    Report,
    Severity,
    Summary,
    ValidationError,
    Verdict,
    trace_event_from_dict,
    trace_event_to_dict,
)

SCANNER_ERROR = "tls.scanner-error"
EMPTY_WARNING = "empty campaign"

# Worst first, for the text view.
OUTCOME_ORDER = (Outcome.ERROR, Outcome.NON_COMPLIANT, Outcome.INCONCLUSIVE, Outcome.COMPLIANT)


def _outcome_key(outcome: Outcome) -> str:
    return outcome.value.lower()


def _severity_key(severity: Severity) -> str:
    return severity.name.lower()


def overall_status(verdicts, findings, threshold: Severity) -> str:
    if verdicts and all(v.outcome == Outcome.ERROR for v in verdicts):
        return "ERROR"
    if any(f.code == SCANNER_ERROR for f in findings):
        return "ERROR"
    if any(v.outcome == Outcome.NON_COMPLIANT for v in verdicts):
        return "FAIL"
    if any(f.severity >= threshold for f in findings):
        return "FAIL"
    return "PASS"


def consolidate(
    verdicts: Iterable[Verdict],
    findings: Iterable[Finding],
    metadata: Mapping[str, str],
    threshold: Severity = Severity.Medium,
) -> Report:
    verdicts = tuple(sorted(verdicts, key=lambda v: v.test_id))
    findings = tuple(sorted(findings, key=Finding.sort_key))
    outcomes = {_outcome_key(o): 0 for o in Outcome}
    for v in verdicts:
        outcomes[_outcome_key(v.outcome)] += 1
    severities = {_severity_key(s): 0 for s in Severity}
    for f in findings:
        severities[_severity_key(f.severity)] += 1
    warnings = (EMPTY_WARNING,) if not verdicts and not findings else ()
    summary = Summary(outcomes, severities, overall_status(verdicts, findings, threshold), threshold, warnings)
    return Report(dict(metadata), verdicts, findings, summary)


def report_to_dict(report: Report) -> dict:
    s = report.summary
    return {
        "metadata": dict(report.metadata),
        "cp_verdicts": [
            {
                "test_id": v.test_id,
                "outcome": v.outcome.value,
                "explanation": v.explanation,
                # Relative timings vary run to run; the report keeps only what was exchanged.
                "evidence": [trace_event_to_dict(e, with_time=False) for e in v.evidence],
            }
            for v in report.cp_verdicts
        ],
        "tls_findings": [
            {
                "source": f.source.value,
                "code": f.code,
                "severity": f.severity.name,
                "subject": f.subject,
                "evidence": f.evidence,
                "recommendation": f.recommendation,
            }
            for f in report.tls_findings
        ],
        "summary": {
            "status": s.status,
            "fail_threshold": s.fail_threshold.name,
            "outcomes": dict(s.outcomes),
            "severities": dict(s.severities),
            "total_verdicts": len(report.cp_verdicts),
            "total_findings": len(report.tls_findings),
            "warnings": list(s.warnings),
        },
    }


def report_from_dict(obj: Mapping) -> Report:
    try:
        verdicts = tuple(
            Verdict(
                v["test_id"], Outcome(v["outcome"]),
                tuple(trace_event_from_dict(e) for e in v["evidence"]), v["explanation"],
            )
            for v in obj["cp_verdicts"]
        )
        findings = tuple(
            Finding(
                FindingSource(f["source"]), f["code"], Severity.parse(f["severity"]),
                f["subject"], f["evidence"], f["recommendation"],
            )
            for f in obj["tls_findings"]
        )
        s = obj["summary"]
        summary = Summary(
            dict(s["outcomes"]), dict(s["severities"]), s["status"],
            Severity.parse(s["fail_threshold"]), tuple(s.get("warnings", ())),
        )
        return Report(dict(obj["metadata"]), verdicts, findings, summary)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed report: {exc!r}") from None


def render_json(report: Report) -> bytes:
    return (json.dumps(report_to_dict(report), sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode()


def report_from_json(data) -> Report:
    try:
        obj = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError(f"report is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ValidationError("report must be a JSON object")
    return report_from_dict(obj)


def render_text(report: Report) -> str:
    lines = ["uesentry report", "=" * 15]
    for key in sorted(report.metadata):
        lines.append(f"{key + ':':<14}{report.metadata[key]}")

    lines += ["", f"Control plane ({len(report.cp_verdicts)} verdicts)", "-" * 30]
    if not report.cp_verdicts:
        lines.append("  (no control-plane tests run)")
    cp_severity = SEVERITY_REGISTRY["cp.noncompliant"].name.upper()
    for outcome in OUTCOME_ORDER:
        group = [v for v in report.cp_verdicts if v.outcome == outcome]
        if not group:
            continue
        lines.append(f"{outcome.value.upper()} ({len(group)})")
        for v in group:
            tag = f" [{cp_severity}]" if outcome == Outcome.NON_COMPLIANT else ""
            lines.append(f"  {v.test_id}{tag}: {v.explanation}")

    lines += ["", f"TLS ({len(report.tls_findings)} findings)", "-" * 30]
    if not report.tls_findings:
        lines.append("  (no findings)")
    for severity in sorted(Severity, reverse=True):
        group = [f for f in report.tls_findings if f.severity == severity]
        if not group:
            continue
        lines.append(f"{severity.name.upper()} ({len(group)})")
        for f in group:
            lines.append(f"  {f.code} {f.subject}: {f.evidence}")
            lines.append(f"    fix: {f.recommendation}")

    s = report.summary
    outcome_part = " ".join(f"{_outcome_key(o)}={s.outcomes.get(_outcome_key(o), 0)}" for o in OUTCOME_ORDER)
    severity_part = " ".join(
        f"{_severity_key(sev)}={s.severities.get(_severity_key(sev), 0)}" for sev in sorted(Severity, reverse=True)
    )
    lines += ["", f"SUMMARY status={s.status} threshold={s.fail_threshold.name} | {outcome_part} | {severity_part}"]
    for w in s.warnings:
        lines.append(f"WARNING: {w}")
    return "\n".join(lines) + "\n"

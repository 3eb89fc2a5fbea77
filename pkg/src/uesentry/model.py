"""Shared data model and the JSON test-case / policy loaders."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping, Optional, Union

from .codec import CATALOG, CpMessage, Direction, Layer, PROTECTION_LEVELS, protection_name

logger = logging.getLogger(__name__)

TIMEOUT_RANGE_MS = (100, 60000)
TLS_VERSION_NAMES = ("TLS1.0", "TLS1.1", "TLS1.2", "TLS1.3")

_ID_RE = re.compile(r"^[a-z0-9]+(?:-[a-z0-9]+)*$")


class ValidationError(ValueError):
    """A test case, suite or policy failed validation.

    ``field`` names the offending field (dotted path) when there is one.
    """

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class UeSecurityState(str, Enum):
    PRE_SECURITY = "PreSecurity"
    POST_SECURITY = "PostSecurity"
    REGISTERED = "Registered"


class Rule(str, Enum):
    MUST_IGNORE = "MustIgnore"
    MUST_REJECT = "MustReject"
    MUST_NOT_DISCLOSE = "MustNotDisclose"
    MUST_ACCEPT = "MustAccept"


class Outcome(str, Enum):
    COMPLIANT = "Compliant"
    NON_COMPLIANT = "NonCompliant"
    INCONCLUSIVE = "Inconclusive"
    ERROR = "Error"


class Severity(IntEnum):
    Info = 0
    Low = 1
    Medium = 2
    High = 3
    Critical = 4

    @classmethod
    def parse(cls, name: str) -> "Severity":
        try:
            return cls[name]
        except KeyError:
            raise ValidationError(f"unknown severity {name!r}") from None


def data_path(*parts: str) -> Path:
    """Location of a file shipped in the package's data directory."""
    return Path(str(resources.files("uesentry") / "data")).joinpath(*parts)


def _load_registry() -> Mapping[str, Severity]:
    raw = json.loads(data_path("severity.json").read_text())
    return MappingProxyType({code: Severity[sev] for code, sev in raw.items()})


# Finding code -> default severity.
SEVERITY_REGISTRY: Mapping[str, Severity] = _load_registry()


# -- test cases ---------------------------------------------------------------

@dataclass(frozen=True)
class TriggerSpec:
    message_type: str
    state: UeSecurityState


@dataclass(frozen=True)
class InjectSpec:
    message_type: str
    protection: str
    ies: tuple[tuple[str, str], ...] = ()

    def to_message(self, layer: Layer) -> CpMessage:
        return CpMessage.build(layer, self.message_type, self.protection, ie_values(self.ies))


@dataclass(frozen=True)
class ExpectedBehavior:
    rule: Rule
    timeout_ms: int
    response_type: Optional[str] = None
    forbidden_ie: Optional[str] = None


@dataclass(frozen=True)
class TestCase:
    id: str
    layer: Layer
    title: str
    trigger: TriggerSpec
    inject: InjectSpec
    expected: ExpectedBehavior
    spec_ref: str
    tags: tuple[str, ...] = ()

    __test__ = False  # keep pytest from collecting this class


def ie_values(ies) -> dict[str, bytes]:
    """DSL IE values are text; a ``hex:`` prefix denotes raw bytes."""
    out = {}
    for name, value in ies:
        if value.startswith("hex:"):
            out[name] = bytes.fromhex(value[4:])
        else:
            out[name] = value.encode()
    return out


_CASE_KEYS = {"id", "layer", "title", "spec_ref", "trigger", "inject", "expected"}
_CASE_OPTIONAL = {"tags"}


def _require(obj: Mapping, key: str, kind, path: str):
    if key not in obj:
        raise ValidationError("required", f"{path}{key}")
    value = obj[key]
    if kind is int and isinstance(value, bool):
        raise ValidationError("must be an integer", f"{path}{key}")
    if not isinstance(value, kind):
        raise ValidationError(f"must be of type {getattr(kind, '__name__', kind)}", f"{path}{key}")
    return value


def _check_keys(obj: Mapping, allowed: set, path: str) -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ValidationError(f"unknown field(s) {', '.join(extra)}", path.rstrip(".") or None)


def _enum(enum_cls, value: str, path: str):
    try:
        return enum_cls(value)
    except ValueError:
        allowed = ", ".join(e.value for e in enum_cls)
        raise ValidationError(f"{value!r} not one of {allowed}", path) from None


def _message(name: str, layer: Layer, direction: Direction, path: str, same_layer: bool = False):
    try:
        mt = CATALOG.resolve(name, prefer=layer)
    except KeyError as exc:
        raise ValidationError(exc.args[0], path) from None
    if mt.direction != direction:
        kind = "uplink" if direction == Direction.UPLINK else "downlink"
        raise ValidationError(f"{name!r} is not an {kind} message type", path)
    if same_layer and mt.layer != layer:
        raise ValidationError(f"{name!r} is not a {layer.name} message type", path)
    return mt


def case_from_dict(obj: Any) -> TestCase:
    if not isinstance(obj, dict):
        raise ValidationError("test case must be a JSON object")
    _check_keys(obj, _CASE_KEYS | _CASE_OPTIONAL, "")
    case_id = _require(obj, "id", str, "")
    if not _ID_RE.match(case_id):
        raise ValidationError(f"{case_id!r} is not a non-empty kebab-case id", "id")
    if "layer" in obj and obj["layer"] not in ("NAS", "RRC"):
        raise ValidationError(f"{obj['layer']!r} not one of NAS, RRC", "layer")
    layer = Layer[_require(obj, "layer", str, "")]
    title = _require(obj, "title", str, "")
    spec_ref = _require(obj, "spec_ref", str, "")

    trig = _require(obj, "trigger", dict, "")
    _check_keys(trig, {"message_type", "state"}, "trigger.")
    state = _enum(UeSecurityState, _require(trig, "state", str, "trigger."), "trigger.state")
    trig_type = _require(trig, "message_type", str, "trigger.")
    _message(trig_type, layer, Direction.UPLINK, "trigger.message_type")

    inj = _require(obj, "inject", dict, "")
    _check_keys(inj, {"message_type", "protection", "ies"}, "inject.")
    inj_type = _require(inj, "message_type", str, "inject.")
    _message(inj_type, layer, Direction.DOWNLINK, "inject.message_type", same_layer=True)
    protection = _require(inj, "protection", str, "inject.")
    if protection not in PROTECTION_LEVELS:
        raise ValidationError(f"{protection!r} not one of {', '.join(PROTECTION_LEVELS)}", "inject.protection")
    raw_ies = _require(inj, "ies", dict, "inject.")
    ies = []
    for name, value in raw_ies.items():
        if name not in CATALOG.ie_tags:
            raise ValidationError(f"unknown IE {name!r}", f"inject.ies.{name}")
        if not isinstance(value, str):
            raise ValidationError("IE value must be a string", f"inject.ies.{name}")
        if value.startswith("hex:"):
            try:
                bytes.fromhex(value[4:])
            except ValueError:
                raise ValidationError("invalid hex value", f"inject.ies.{name}") from None
        ies.append((name, value))

    exp = _require(obj, "expected", dict, "")
    _check_keys(exp, {"rule", "response_type", "forbidden_ie", "timeout_ms"}, "expected.")
    rule = _enum(Rule, _require(exp, "rule", str, "expected."), "expected.rule")
    timeout = _require(exp, "timeout_ms", int, "expected.")
    lo, hi = TIMEOUT_RANGE_MS
    if not lo <= timeout <= hi:
        raise ValidationError(f"timeout_ms out of range [{lo}, {hi}]", "expected.timeout_ms")
    response_type = exp.get("response_type")
    forbidden_ie = exp.get("forbidden_ie")
    if rule in (Rule.MUST_REJECT, Rule.MUST_ACCEPT):
        if response_type is None:
            raise ValidationError(f"expected.response_type required for {rule.value}", "expected.response_type")
        if not isinstance(response_type, str):
            raise ValidationError("must be of type str", "expected.response_type")
        _message(response_type, layer, Direction.UPLINK, "expected.response_type")
    elif response_type is not None:
        raise ValidationError(f"not allowed for {rule.value}", "expected.response_type")
    if rule == Rule.MUST_NOT_DISCLOSE:
        if forbidden_ie is None:
            raise ValidationError("expected.forbidden_ie required for MustNotDisclose", "expected.forbidden_ie")
        if forbidden_ie not in CATALOG.ie_tags:
            raise ValidationError(f"unknown IE {forbidden_ie!r}", "expected.forbidden_ie")
    elif forbidden_ie is not None:
        raise ValidationError(f"not allowed for {rule.value}", "expected.forbidden_ie")

    tags = obj.get("tags", [])
    if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
        raise ValidationError("must be a list of strings", "tags")

    return TestCase(
        id=case_id,
        layer=layer,
        title=title,
        trigger=TriggerSpec(trig_type, state),
        inject=InjectSpec(inj_type, protection, tuple(ies)),
        expected=ExpectedBehavior(rule, timeout, response_type, forbidden_ie),
        spec_ref=spec_ref,
        tags=tuple(tags),
    )


def parse_test_case(json_text: Union[str, bytes]) -> TestCase:
    if isinstance(json_text, bytes):
        try:
            json_text = json_text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ValidationError(f"not UTF-8: {exc}") from None
    try:
        obj = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON: {exc}") from None
    return case_from_dict(obj)


def case_to_dict(case: TestCase) -> dict:
    expected: dict[str, Any] = {"rule": case.expected.rule.value, "timeout_ms": case.expected.timeout_ms}
    if case.expected.response_type is not None:
        expected["response_type"] = case.expected.response_type
    if case.expected.forbidden_ie is not None:
        expected["forbidden_ie"] = case.expected.forbidden_ie
    out = {
        "id": case.id,
        "layer": case.layer.name,
        "title": case.title,
        "spec_ref": case.spec_ref,
        "trigger": {"message_type": case.trigger.message_type, "state": case.trigger.state.value},
        "inject": {
            "message_type": case.inject.message_type,
            "protection": case.inject.protection,
            "ies": dict(case.inject.ies),
        },
        "expected": expected,
    }
    if case.tags:
        out["tags"] = list(case.tags)
    return out


def serialize_test_case(case: TestCase) -> str:
    return json.dumps(case_to_dict(case), indent=2) + "\n"


@dataclass(frozen=True)
class Suite:
    name: str
    cases: tuple[TestCase, ...]
    sources: Mapping[str, str] = field(default_factory=dict, compare=False)

    @property
    def nas_count(self) -> int:
        return sum(1 for c in self.cases if c.layer == Layer.NAS)

    @property
    def rrc_count(self) -> int:
        return sum(1 for c in self.cases if c.layer == Layer.RRC)

    def __len__(self) -> int:
        return len(self.cases)

    def __iter__(self):
        return iter(self.cases)

    def get(self, case_id: str) -> TestCase:
        for case in self.cases:
            if case.id == case_id:
                return case
        raise KeyError(case_id)


def load_suite(directory: Union[str, Path]) -> Suite:
    """Load every ``*.json`` case in ``directory``; any bad file rejects the suite."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"suite directory {str(directory)!r} does not exist")
    cases: dict[str, TestCase] = {}
    sources: dict[str, str] = {}
    for path in sorted(directory.glob("*.json")):
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise ValidationError(f"{path}: unreadable: {exc}") from None
        try:
            case = parse_test_case(text)
        except ValidationError as exc:
            raise ValidationError(f"{path}: {exc}") from None
        if case.id in cases:
            raise ValidationError(f"duplicate id {case.id!r} in {sources[case.id]} and {path}")
        cases[case.id] = case
        sources[case.id] = str(path)
    if not cases:
        logger.warning("suite %s contains no test cases", directory)
    ordered = tuple(cases[k] for k in sorted(cases))
    return Suite(directory.name, ordered, sources)


def shipped_catalog_dir() -> Path:
    return data_path("catalog")


# -- policy -------------------------------------------------------------------

@dataclass(frozen=True)
class PolicyDoc:
    name: str
    allowed_versions: frozenset[str]
    allowed_ciphers: frozenset[int]
    severity_overrides: Mapping[str, Severity] = field(default_factory=dict)

    def severity(self, code: str) -> Severity:
        if code in self.severity_overrides:
            return self.severity_overrides[code]
        return SEVERITY_REGISTRY[code]


def parse_cipher_id(text: Any, path: str = "cipher") -> int:
    if not isinstance(text, str) or not re.fullmatch(r"0x[0-9A-Fa-f]{4}", text):
        raise ValidationError(f"{text!r} is not a 0xNNNN cipher id", path)
    return int(text, 16)


def validate_policy(json_text: Union[str, bytes]) -> PolicyDoc:
    try:
        obj = json.loads(json_text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError(f"malformed JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ValidationError("policy must be a JSON object")
    _check_keys(obj, {"name", "allowed_versions", "allowed_ciphers", "severity_overrides", "description"}, "")
    name = _require(obj, "name", str, "")
    versions = _require(obj, "allowed_versions", list, "")
    for v in versions:
        if v not in TLS_VERSION_NAMES:
            raise ValidationError(f"unknown TLS version {v!r}", "allowed_versions")
    ciphers = _require(obj, "allowed_ciphers", list, "")
    if not ciphers:
        raise ValidationError("must not be empty", "allowed_ciphers")
    ids = frozenset(parse_cipher_id(c, "allowed_ciphers") for c in ciphers)
    overrides = obj.get("severity_overrides", {})
    if not isinstance(overrides, dict):
        raise ValidationError("must be an object", "severity_overrides")
    parsed = {}
    for code, sev in overrides.items():
        if code not in SEVERITY_REGISTRY:
            raise ValidationError(f"unknown finding code {code!r}", "severity_overrides")
        if not isinstance(sev, str):
            raise ValidationError(f"unknown severity {sev!r}", f"severity_overrides.{code}")
        try:
            parsed[code] = Severity[sev]
        except KeyError:
            raise ValidationError(f"unknown severity {sev!r}", f"severity_overrides.{code}") from None
    return PolicyDoc(name, frozenset(versions), ids, MappingProxyType(parsed))


def load_policy(path: Union[str, Path]) -> PolicyDoc:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read policy {path}: {exc}") from None
    return validate_policy(text)


# -- results ------------------------------------------------------------------

class TraceDirection(str, Enum):
    SENT = "Sent"
    RECEIVED = "Received"


@dataclass(frozen=True)
class TraceEvent:
    direction: TraceDirection
    timestamp_ms: int
    message: CpMessage


def message_to_dict(msg: CpMessage) -> dict:
    return {
        "layer": msg.layer.name,
        "message_type": msg.name,
        "protection": protection_name(msg.protection),
        "ies": [{"ie": e.name, "value": e.value.hex()} for e in msg.ies],
    }


def message_from_dict(obj: Mapping) -> CpMessage:
    from .codec import InformationElement  # local: keeps the top import list short

    msg = CpMessage.build(obj["layer"], obj["message_type"], obj["protection"])
    ies = tuple(InformationElement(CATALOG.ie_tag(e["ie"]), bytes.fromhex(e["value"])) for e in obj["ies"])
    return CpMessage(msg.layer, msg.msg_type, msg.protection, ies)


def trace_event_to_dict(ev: TraceEvent, with_time: bool = True) -> dict:
    out = {"direction": ev.direction.value, "message": message_to_dict(ev.message)}
    if with_time:
        out["timestamp_ms"] = ev.timestamp_ms
    return out


def trace_event_from_dict(obj: Mapping) -> TraceEvent:
    return TraceEvent(TraceDirection(obj["direction"]), int(obj.get("timestamp_ms", 0)), message_from_dict(obj["message"]))


@dataclass(frozen=True)
class Verdict:
    test_id: str
    outcome: Outcome
    evidence: tuple[TraceEvent, ...]
    explanation: str


class FindingSource(str, Enum):
    TLS = "TLS"
    CP = "CP"


@dataclass(frozen=True)
class Finding:
    source: FindingSource
    code: str
    severity: Severity
    subject: str
    evidence: str
    recommendation: str

    def sort_key(self):
        return (-int(self.severity), self.code, self.subject)


@dataclass(frozen=True)
class Summary:
    outcomes: Mapping[str, int]
    severities: Mapping[str, int]
    status: str
    fail_threshold: Severity
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class Report:
    metadata: Mapping[str, str]
    cp_verdicts: tuple[Verdict, ...]
    tls_findings: tuple[Finding, ...]
    summary: Summary

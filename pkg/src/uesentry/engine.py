"""Runs CP test cases against an SCP/1 device, one fresh session per test.

A session replays the canned downlink script for the case's trigger state,
watches the uplinks, and at the first uplink matching the trigger sends the
case's injection. Everything received during the following response window
is the observation; silence is a valid result, not an error.
"""

from __future__ import annotations

import json
import logging
import socket
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Union

from .codec import (
    CATALOG,
    CpMessage,
    DecodeError,
    Direction,
    FrameReader,
    FramingError,
    MessageType,
    decode_message,
    encode_message,
    frame_write,
)
from .model import (
    TestCase,
    TraceDirection,
    TraceEvent,
    UeSecurityState,
    ValidationError,
    data_path,
    ie_values,
    trace_event_from_dict,
    trace_event_to_dict,
)

logger = logging.getLogger(__name__)

DEFAULT_IO_TIMEOUT = 2.0
INITIAL_STATE = UeSecurityState.PRE_SECURITY

Address = tuple[str, int]


@dataclass(frozen=True)
class ScriptStep:
    awaits: MessageType
    send: Optional[CpMessage] = None
    enter_state: Optional[UeSecurityState] = None


SessionScript = Mapping[UeSecurityState, tuple[ScriptStep, ...]]


def parse_session_script(obj: Mapping) -> SessionScript:
    if not isinstance(obj, dict):
        raise ValidationError("session script must be a JSON object")
    script = {}
    for state_name, steps in obj.items():
        try:
            state = UeSecurityState(state_name)
        except ValueError:
            raise ValidationError(f"unknown state {state_name!r}", "session_script") from None
        parsed = []
        for i, step in enumerate(steps):
            where = f"{state_name}[{i}]"
            try:
                awaits = CATALOG.resolve(step["await"])
                send = None
                if "send" in step:
                    spec = step["send"]
                    send = CpMessage.build(
                        CATALOG.resolve(spec["message_type"]).layer,
                        spec["message_type"],
                        spec.get("protection", "None"),
                        ie_values(spec.get("ies", {}).items()),
                    )
                    if send.type.direction != Direction.DOWNLINK:
                        raise ValidationError(f"{spec['message_type']} is not a downlink", where)
                enter = UeSecurityState(step["enter_state"]) if "enter_state" in step else None
            except (KeyError, ValueError, TypeError) as exc:
                if isinstance(exc, ValidationError):
                    raise
                raise ValidationError(f"invalid step: {exc}", where) from None
            if awaits.direction != Direction.UPLINK:
                raise ValidationError(f"{awaits.qualified_name} is not an uplink", where)
            parsed.append(ScriptStep(awaits, send, enter))
        script[state] = tuple(parsed)
    return script


def load_session_script(path: Union[str, Path, None] = None) -> SessionScript:
    path = Path(path) if path else data_path("session_scripts.json")
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot load session script {path}: {exc}") from None
    return parse_session_script(obj)


@dataclass(frozen=True)
class Observation:
    test_id: str
    trigger_reached: bool
    responses: tuple[TraceEvent, ...]
    window_ms: int
    transport_error: Optional[str] = None
    trace: tuple[TraceEvent, ...] = ()


def observation_to_dict(obs: Observation) -> dict:
    return {
        "test_id": obs.test_id,
        "trigger_reached": obs.trigger_reached,
        "window_ms": obs.window_ms,
        "transport_error": obs.transport_error,
        "responses": [trace_event_to_dict(e) for e in obs.responses],
        "trace": [trace_event_to_dict(e) for e in obs.trace],
    }


def observation_from_dict(obj: Mapping) -> Observation:
    return Observation(
        test_id=obj["test_id"],
        trigger_reached=bool(obj["trigger_reached"]),
        responses=tuple(trace_event_from_dict(e) for e in obj["responses"]),
        window_ms=int(obj["window_ms"]),
        transport_error=obj.get("transport_error"),
        trace=tuple(trace_event_from_dict(e) for e in obj.get("trace", [])),
    )


class _Closed(Exception):
    pass


class _Session:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.reader = FrameReader()
        self.t0 = time.monotonic()
        self.trace: list[TraceEvent] = []

    def _stamp(self) -> int:
        return int((time.monotonic() - self.t0) * 1000)

    def send(self, msg: CpMessage) -> TraceEvent:
        self.sock.sendall(frame_write(encode_message(msg)))
        event = TraceEvent(TraceDirection.SENT, self._stamp(), msg)
        self.trace.append(event)
        return event

    def receive(self, timeout: float) -> Optional[TraceEvent]:
        """Next uplink, or None if nothing arrives within ``timeout`` seconds."""
        deadline = time.monotonic() + timeout
        while True:
            payload = self.reader.next_frame()
            if payload is not None:
                event = TraceEvent(TraceDirection.RECEIVED, self._stamp(), decode_message(payload))
                self.trace.append(event)
                return event
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            self.sock.settimeout(remaining)
            try:
                data = self.sock.recv(65536)
            except socket.timeout:
                return None
            if not data:
                raise _Closed()
            self.reader.feed(data)


def _error(case: TestCase, message: str, trace=()) -> Observation:
    return Observation(case.id, False, (), case.expected.timeout_ms, message, tuple(trace))


def run_test(
    case: TestCase,
    dut_address: Address,
    session_script: Optional[SessionScript] = None,
    *,
    io_timeout: float = DEFAULT_IO_TIMEOUT,
) -> Observation:
    """Execute one case on a brand-new connection and return what was observed."""
    script = load_session_script() if session_script is None else session_script
    steps = script.get(case.trigger.state, ())
    trigger_type = CATALOG.resolve(case.trigger.message_type, prefer=case.layer)
    injection = case.inject.to_message(case.layer)
    window_ms = case.expected.timeout_ms

    try:
        sock = socket.create_connection(dut_address, timeout=io_timeout)
    except ConnectionRefusedError:
        return _error(case, "connection refused")
    except OSError as exc:
        return _error(case, f"connect failed: {exc}")

    session = _Session(sock)
    try:
        state = INITIAL_STATE
        position = 0
        triggered = False
        while not triggered:
            event = session.receive(io_timeout)
            if event is None:
                break
            mt = event.message.type
            step = steps[position] if position < len(steps) else None
            if step is not None and mt == step.awaits:
                if step.enter_state is not None:
                    state = step.enter_state
                position += 1
                if mt == trigger_type and state == case.trigger.state:
                    triggered = True
                elif step.send is not None:
                    session.send(step.send)
            elif mt == trigger_type and state == case.trigger.state:
                triggered = True

        if not triggered:
            logger.info("%s: trigger %s in %s not reached", case.id, trigger_type.qualified_name, case.trigger.state.value)
            return Observation(case.id, False, (), window_ms, None, tuple(session.trace))

        session.send(injection)
        responses = []
        deadline = time.monotonic() + window_ms / 1000
        while (remaining := deadline - time.monotonic()) > 0:
            event = session.receive(remaining)
            if event is None:
                break
            responses.append(event)
        return Observation(case.id, True, tuple(responses), window_ms, None, tuple(session.trace))
    except _Closed:
        return _error(case, "connection closed by DUT", session.trace)
    except (FramingError, DecodeError) as exc:
        return _error(case, f"protocol error: {exc}", session.trace)
    except OSError as exc:
        return _error(case, f"transport error: {exc}", session.trace)
    finally:
        sock.close()


@dataclass(frozen=True)
class ProgressEvent:
    index: int
    total: int
    test_id: str
    observation: Observation


def run_suite(
    suite: Iterable[TestCase],
    dut_address: Address,
    progress_sink: Optional[Callable[[ProgressEvent], None]] = None,
    session_script: Optional[SessionScript] = None,
    *,
    io_timeout: float = DEFAULT_IO_TIMEOUT,
) -> list[Observation]:
    script = load_session_script() if session_script is None else session_script
    cases = sorted(suite, key=lambda c: c.id)
    observations = []
    for i, case in enumerate(cases, 1):
        obs = run_test(case, dut_address, script, io_timeout=io_timeout)
        observations.append(obs)
        if progress_sink is not None:
            progress_sink(ProgressEvent(i, len(cases), case.id, obs))
    return observations


def dump_trace(obs: Observation, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{obs.test_id}.json"
    path.write_text(json.dumps(observation_to_dict(obs), indent=2, sort_keys=True) + "\n")
    return path

"""Socket services wrapping the UE state machine and the TLS fixture."""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..codec import CpMessage, DecodeError, FrameReader, FramingError, decode_message, encode_message, frame_write
from ..tls.records import ContentType, split_records
from .tls_fixture import TlsFixtureConfig, tls_fixture_respond
from .ue import UeProfile, UeState, ue_autonomous, ue_connect, ue_step

logger = logging.getLogger(__name__)

IDLE_TIMEOUT = 30.0


@dataclass
class SessionLog:
    """What one UE connection saw; kept for tests and diagnostics."""

    uplinks: list[CpMessage] = field(default_factory=list)
    downlinks: list[CpMessage] = field(default_factory=list)
    final_state: Optional[UeState] = None
    dropped: Optional[str] = None


class _UeHandler(socketserver.BaseRequestHandler):
    server: "_UeServer"

    def handle(self):
        sock: socket.socket = self.request
        sock.settimeout(IDLE_TIMEOUT)
        profile = self.server.profile
        log = SessionLog()
        self.server.sessions.append(log)
        state, first = ue_connect(profile)
        log.final_state = state

        def send(msgs):
            if msgs:
                log.uplinks.extend(msgs)
                sock.sendall(b"".join(frame_write(encode_message(m)) for m in msgs))

        reader = FrameReader()
        try:
            send([first])
            while True:
                data = sock.recv(65536)
                if not data:
                    break
                reader.feed(data)
                while (payload := reader.next_frame()) is not None:
                    msg = decode_message(payload)
                    log.downlinks.append(msg)
                    state, reply = ue_step(profile, state, msg)
                    state, extra = ue_autonomous(profile, state)
                    log.final_state = state
                    send([m for m in (reply, extra) if m is not None])
        except (FramingError, DecodeError) as exc:
            log.dropped = f"protocol error: {exc}"
            logger.info("dropping UE connection: %s", exc)
        except OSError as exc:
            log.dropped = f"transport: {exc}"


class _UeServer(socketserver.TCPServer):
    allow_reuse_address = True

    def __init__(self, address, profile: UeProfile):
        self.profile = profile
        self.sessions: list[SessionLog] = []
        super().__init__(address, _UeHandler)


class _TlsHandler(socketserver.BaseRequestHandler):
    server: "_TlsServer"

    def handle(self):
        sock: socket.socket = self.request
        sock.settimeout(IDLE_TIMEOUT)
        pending = b""
        try:
            while True:
                data = sock.recv(65536)
                if not data:
                    return
                records, pending = split_records(pending + data)
                for rec in records:
                    reply = self.server.responder(self.server.config, rec)
                    if reply:
                        sock.sendall(reply)
                    if reply[:1] == bytes([ContentType.ALERT]):
                        return
        except OSError:
            return


class _TlsServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, config, responder):
        self.config = config
        self.responder = responder
        super().__init__(address, _TlsHandler)


class _Service:
    """Background-thread lifecycle shared by both fixture services."""

    _server: socketserver.BaseServer

    def __init__(self):
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return host, port

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, name=type(self).__name__, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._server.serve_forever()

    def stop(self):
        if self._thread is not None:
            self._server.shutdown()
            self._thread.join()
            self._thread = None
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


class UeEndpoint(_Service):
    """SCP/1 UE fixture. Serves one connection at a time; each starts from Idle."""

    def __init__(self, profile: UeProfile, address: tuple[str, int] = ("127.0.0.1", 0)):
        super().__init__()
        self._server = _UeServer(address, profile)

    @property
    def sessions(self) -> list[SessionLog]:
        return self._server.sessions


def run_ue_endpoint(profile: UeProfile, listen_address: tuple[str, int]) -> UeEndpoint:
    """Bind and start a UE fixture in a background thread (OSError on bind failure)."""
    return UeEndpoint(profile, listen_address).start()


Responder = Callable[[TlsFixtureConfig, bytes], bytes]


class TlsFixtureServer(_Service):
    """TLS fixture; concurrent connections, one probe each. ``config`` may be swapped live."""

    def __init__(
        self,
        config: TlsFixtureConfig,
        address: tuple[str, int] = ("127.0.0.1", 0),
        responder: Responder = tls_fixture_respond,
    ):
        super().__init__()
        self._server = _TlsServer(address, config, responder)

    @property
    def config(self) -> TlsFixtureConfig:
        return self._server.config

    @config.setter
    def config(self, value: TlsFixtureConfig):
        self._server.config = value

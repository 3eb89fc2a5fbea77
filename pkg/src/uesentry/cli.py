"""Command-line entry point.

Exit codes: 0 PASS, 1 FAIL, 2 ERROR (degraded evidence), 3 usage or config error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .dut.servers import TlsFixtureServer, UeEndpoint
from .dut.tls_fixture import load_fixture_config
from .dut.ue import PROFILES, get_profile
from .engine import DEFAULT_IO_TIMEOUT, ProgressEvent, dump_trace, run_suite
from .evaluator import evaluate_cp, evaluate_tls, load_cipher_table, scanner_error_finding
from .model import Severity, ValidationError, data_path, load_policy, load_suite, shipped_catalog_dir
from .report import consolidate, render_json, render_text, report_from_json
from .tls.scanner import DEFAULT_PARALLELISM, ScannerError, scan_endpoint

logger = logging.getLogger("uesentry")

EXIT_PASS, EXIT_FAIL, EXIT_ERROR, EXIT_USAGE = 0, 1, 2, 3
STATUS_EXIT = {"PASS": EXIT_PASS, "FAIL": EXIT_FAIL, "ERROR": EXIT_ERROR}

ENV_TIMEOUT = "UESENTRY_TIMEOUT_MS"
ENV_PARALLELISM = "UESENTRY_TLS_PARALLELISM"


class UsageError(Exception):
    """Bad flags, unreadable inputs or invalid configuration (exit 3)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _host_port(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 < int(port) < 65536:
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host, int(port)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _env_int(name: str) -> Optional[int]:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return None
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"{name}={raw!r} is not an integer") from None
    if value <= 0:
        raise UsageError(f"{name} must be positive")
    return value


def _io_timeout(args) -> float:
    ms = args.timeout_ms if args.timeout_ms is not None else _env_int(ENV_TIMEOUT)
    return ms / 1000 if ms is not None else DEFAULT_IO_TIMEOUT


def _parallelism(args) -> int:
    if args.parallelism is not None:
        return args.parallelism
    return _env_int(ENV_PARALLELISM) or DEFAULT_PARALLELISM


def _resolve_policy(ref: str):
    """A policy file path, or the name of a shipped policy such as ``bsi-baseline``."""
    path = Path(ref)
    if not path.exists():
        shipped = data_path("policies", f"{ref}.json")
        if shipped.exists():
            path = shipped
    return load_policy(path)


def _metadata(args, sections: str, dut_label: str, suite_name: str = "") -> dict:
    timestamp = args.timestamp or datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    meta = {
        "timestamp": timestamp,
        "dut_label": args.dut_label or dut_label,
        "sections": sections,
        "tool_version": f"uesentry {__version__}",
    }
    if suite_name:
        meta["suite"] = suite_name
    return meta


def _progress(event: ProgressEvent):
    obs = event.observation
    state = "error" if obs.transport_error else ("ok" if obs.trigger_reached else "no-trigger")
    logger.info("[%d/%d] %s %s", event.index, event.total, event.test_id, state)


def _cp_section(args):
    suite = load_suite(args.suite or shipped_catalog_dir())
    cases = {c.id: c for c in suite}
    observations = run_suite(suite, args.dut, _progress, io_timeout=_io_timeout(args))
    if args.trace_dir:
        for obs in observations:
            dump_trace(obs, args.trace_dir)
    return suite, [evaluate_cp(obs, cases[obs.test_id]) for obs in observations]


def _tls_section(args, endpoint, policy):
    label = f"{endpoint[0]}:{endpoint[1]}"
    table = load_cipher_table(args.ciphers)
    try:
        posture = scan_endpoint(endpoint, table.ids(), timeout=_io_timeout(args), parallelism=_parallelism(args))
    except ScannerError as exc:
        logger.error("TLS scan of %s failed: %s", label, exc)
        return [scanner_error_finding(label, str(exc))]
    return evaluate_tls(posture, policy, table)


def _emit(report, args) -> int:
    if args.out:
        Path(args.out).write_bytes(render_json(report))
    sys.stdout.write(render_text(report))
    return STATUS_EXIT[report.summary.status]


def _threshold(args) -> Severity:
    return Severity.parse(args.fail_threshold)


def cmd_run_cp(args) -> int:
    suite, verdicts = _cp_section(args)
    meta = _metadata(args, "cp", f"{args.dut[0]}:{args.dut[1]}", suite.name)
    return _emit(consolidate(verdicts, [], meta, _threshold(args)), args)


def cmd_run_tls(args) -> int:
    policy = _resolve_policy(args.policy)
    findings = _tls_section(args, args.endpoint, policy)
    meta = _metadata(args, "tls", f"{args.endpoint[0]}:{args.endpoint[1]}")
    meta["policy"] = policy.name
    return _emit(consolidate([], findings, meta, _threshold(args)), args)


def cmd_run_all(args) -> int:
    policy = _resolve_policy(args.policy)
    # The CP campaign finishes before the TLS scan starts.
    suite, verdicts = _cp_section(args)
    findings = _tls_section(args, args.tls_endpoint, policy)
    label = f"{args.dut[0]}:{args.dut[1]} + {args.tls_endpoint[0]}:{args.tls_endpoint[1]}"
    meta = _metadata(args, "cp+tls", label, suite.name)
    meta["policy"] = policy.name
    return _emit(consolidate(verdicts, findings, meta, _threshold(args)), args)


def cmd_fixtures_serve(args) -> int:
    if not args.ue and not args.tls:
        raise UsageError("fixtures serve needs --ue and/or --tls")
    services = []
    try:
        if args.ue:
            services.append(UeEndpoint(get_profile(args.ue), (args.host, args.port)))
        if args.tls:
            tls_port = args.tls_port if args.tls_port is not None else (args.port + 1 if args.ue and args.port else args.port)
            services.append(TlsFixtureServer(load_fixture_config(args.tls), (args.host, tls_port)))
    except OSError as exc:
        for s in services:
            s.stop()
        raise UsageError(f"cannot bind: {exc}") from None
    for s in services:
        s.start()
        kind = "UE" if isinstance(s, UeEndpoint) else "TLS"
        print(f"{kind} fixture listening on {s.address[0]}:{s.address[1]}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        for s in services:
            s.stop()
    return EXIT_PASS


def cmd_report_render(args) -> int:
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {args.input}: {exc}") from None
    report = report_from_json(data)
    if args.format == "json":
        sys.stdout.buffer.write(render_json(report))
        sys.stdout.flush()
    else:
        sys.stdout.write(render_text(report))
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uesentry", description="Security tests for 5G industrial UEs (control plane and TLS).")
    parser.add_argument("--version", action="version", version=f"uesentry {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress and diagnostics on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--out", help="write the canonical JSON report here")
    common.add_argument("--timestamp", help="pin the report timestamp (reproducible runs)")
    common.add_argument("--dut-label", help="label recorded in report metadata instead of the address")
    common.add_argument("--timeout-ms", type=_positive_int, help=f"per-read I/O timeout (env {ENV_TIMEOUT}, default 2000)")
    common.add_argument("--fail-threshold", default="Medium", choices=[s.name for s in Severity],
                        help="lowest finding severity that fails the run (default Medium)")

    cp = _Parser(add_help=False)
    cp.add_argument("--suite", help="directory of test-case JSON files (default: shipped catalog)")
    cp.add_argument("--dut", type=_host_port, required=True, help="UE under test, host:port")
    cp.add_argument("--trace-dir", help="write one observation trace per test here")

    tls = _Parser(add_help=False)
    tls.add_argument("--policy", required=True, help="policy JSON file or shipped policy name")
    tls.add_argument("--ciphers", help="candidate cipher table JSON (default: shipped table)")
    tls.add_argument("--parallelism", type=_positive_int, help=f"concurrent probes (env {ENV_PARALLELISM}, default 4)")

    p = sub.add_parser("run-cp", parents=[common, cp], help="run a control-plane campaign")
    p.set_defaults(func=cmd_run_cp)

    p = sub.add_parser("run-tls", parents=[common, tls], help="scan one TLS endpoint")
    p.add_argument("--endpoint", type=_host_port, required=True, help="TLS endpoint, host:port")
    p.set_defaults(func=cmd_run_tls)

    p = sub.add_parser("run-all", parents=[common, cp, tls], help="control-plane campaign then TLS scan, one report")
    p.add_argument("--tls-endpoint", type=_host_port, required=True, help="TLS endpoint, host:port")
    p.set_defaults(func=cmd_run_all)

    fx = sub.add_parser("fixtures", help="local devices under test")
    fx_sub = fx.add_subparsers(dest="fixtures_command", required=True, parser_class=_Parser)
    p = fx_sub.add_parser("serve", help="serve UE and/or TLS fixtures until interrupted")
    p.add_argument("--ue", choices=sorted(PROFILES), help="UE profile")
    p.add_argument("--tls", help="TLS fixture config file or shipped name")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0, help="UE port (TLS uses port+1 unless --tls-port)")
    p.add_argument("--tls-port", type=int)
    p.set_defaults(func=cmd_fixtures_serve)

    rp = sub.add_parser("report", help="work with saved reports")
    rp_sub = rp.add_subparsers(dest="report_command", required=True, parser_class=_Parser)
    p = rp_sub.add_parser("render", help="render a saved JSON report")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_report_render)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        code = args.func(args)
    except (UsageError, ValidationError) as exc:
        print(f"uesentry: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"uesentry: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return code if code in STATUS_EXIT.values() or code == EXIT_USAGE else EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

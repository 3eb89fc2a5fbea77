import json
import os
import socket
import subprocess
import sys

import pytest

from demo import GOLDEN_JSON, GOLDEN_TEXT
from uesentry.cli import main


def _closed_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return f"127.0.0.1:{s.getsockname()[1]}"


def _addr(service):
    return f"127.0.0.1:{service.address[1]}"


def test_run_cp_compliant(ue_endpoint, tmp_path, capsys):
    out = tmp_path / "r.json"
    rc = main(["run-cp", "--dut", _addr(ue_endpoint("compliant")), "--out", str(out), "--trace-dir", str(tmp_path / "t")])
    assert rc == 0
    report = json.loads(out.read_text())
    assert report["summary"]["status"] == "PASS"
    assert report["metadata"]["sections"] == "cp"
    assert len(list((tmp_path / "t").glob("*.json"))) == 34
    assert "SUMMARY status=PASS" in capsys.readouterr().out


def test_run_cp_caps_before_security(ue_endpoint, capsys):
    rc = main(["run-cp", "--dut", _addr(ue_endpoint("caps-before-security"))])
    assert rc == 1
    assert "rrc-cap-enquiry-pre-security [HIGH]" in capsys.readouterr().out


def test_run_cp_bad_suite(tmp_path, ue_endpoint, capsys):
    (tmp_path / "x.json").write_text("{}")
    assert main(["run-cp", "--suite", str(tmp_path), "--dut", _addr(ue_endpoint())]) == 3
    assert "error" in capsys.readouterr().err


def test_run_cp_unreachable(capsys):
    assert main(["run-cp", "--dut", _closed_port(), "--timeout-ms", "200"]) == 2


def test_run_tls_hardened(tls_server, capsys):
    assert main(["run-tls", "--endpoint", _addr(tls_server("hardened")), "--policy", "bsi-baseline"]) == 0


def test_run_tls_rc4(tls_server, tmp_path, capsys):
    out = tmp_path / "r.json"
    rc = main(["run-tls", "--endpoint", _addr(tls_server("rc4")), "--policy", "bsi-baseline", "--out", str(out)])
    assert rc == 1
    assert "tls.deprecated-cipher" in {f["code"] for f in json.loads(out.read_text())["tls_findings"]}


def test_run_tls_missing_policy(tls_server, tmp_path, capsys):
    assert main(["run-tls", "--endpoint", _addr(tls_server()), "--policy", str(tmp_path / "none.json")]) == 3


def test_run_tls_unreachable(capsys):
    assert main(["run-tls", "--endpoint", _closed_port(), "--policy", "bsi-baseline", "--timeout-ms", "200"]) == 2


def test_run_all_pass(ue_endpoint, tls_server, capsys):
    rc = main(["run-all", "--dut", _addr(ue_endpoint()), "--tls-endpoint", _addr(tls_server("hardened")),
               "--policy", "bsi-baseline"])
    assert rc == 0


def test_run_all_rc4_only_tls_findings(ue_endpoint, tls_server, tmp_path, capsys):
    out = tmp_path / "r.json"
    rc = main(["run-all", "--dut", _addr(ue_endpoint()), "--tls-endpoint", _addr(tls_server("rc4")),
               "--policy", "bsi-baseline", "--out", str(out)])
    report = json.loads(out.read_text())
    assert rc == 1
    assert report["summary"]["outcomes"]["noncompliant"] == 0
    assert report["tls_findings"]


def test_run_all_tls_down(ue_endpoint, tmp_path, capsys):
    out = tmp_path / "r.json"
    rc = main(["run-all", "--dut", _addr(ue_endpoint()), "--tls-endpoint", _closed_port(),
               "--policy", "bsi-baseline", "--timeout-ms", "300", "--out", str(out)])
    report = json.loads(out.read_text())
    assert rc == 2
    assert report["summary"]["outcomes"]["compliant"] == 34
    assert [f["code"] for f in report["tls_findings"]] == ["tls.scanner-error"]


def test_report_render_golden(capsys):
    assert main(["report", "render", "--in", str(GOLDEN_JSON)]) == 0
    assert capsys.readouterr().out == GOLDEN_TEXT.read_text()


def test_report_render_json_canonical(capsysbinary):
    assert main(["report", "render", "--in", str(GOLDEN_JSON), "--format", "json"]) == 0
    assert capsysbinary.readouterr().out == GOLDEN_JSON.read_bytes()


def test_report_render_corrupt(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"metadata\": ")
    assert main(["report", "render", "--in", str(bad)]) == 3
    assert main(["report", "render", "--in", str(tmp_path / "missing.json")]) == 3


def _cli(*args, env=None):
    full_env = dict(os.environ, **(env or {}))
    return subprocess.run([sys.executable, "-m", "uesentry", *args], capture_output=True, text=True, env=full_env,
                          timeout=60)


@pytest.mark.parametrize("args", [
    [],
    ["run-cp"],
    ["run-cp", "--dut", "nohostport"],
    ["no-such-command"],
    ["run-tls", "--endpoint", "127.0.0.1:1", "--policy", "p", "--parallelism", "0"],
])
def test_usage_errors_exit_3(args):
    assert _cli(*args).returncode == 3


def test_bad_env_is_usage_error():
    proc = _cli("run-tls", "--endpoint", "127.0.0.1:1", "--policy", "bsi-baseline",
                env={"UESENTRY_TIMEOUT_MS": "soon"})
    assert proc.returncode == 3
    assert "UESENTRY_TIMEOUT_MS" in proc.stderr


def test_flag_beats_env(monkeypatch):
    from uesentry.cli import _io_timeout, _parallelism, build_parser

    monkeypatch.setenv("UESENTRY_TIMEOUT_MS", "700")
    monkeypatch.setenv("UESENTRY_TLS_PARALLELISM", "9")
    args = build_parser().parse_args(["run-tls", "--endpoint", "h:1", "--policy", "p"])
    assert _io_timeout(args) == 0.7 and _parallelism(args) == 9
    args = build_parser().parse_args(["run-tls", "--endpoint", "h:1", "--policy", "p",
                                      "--timeout-ms", "300", "--parallelism", "2"])
    assert _io_timeout(args) == 0.3 and _parallelism(args) == 2


def test_fixtures_serve_subprocess():
    proc = subprocess.Popen([sys.executable, "-m", "uesentry", "fixtures", "serve", "--ue", "compliant",
                             "--tls", "hardened", "--port", "0"], stdout=subprocess.PIPE, text=True)
    try:
        lines = [proc.stdout.readline() for _ in range(2)]
        assert lines[0].startswith("UE fixture listening")
        assert lines[1].startswith("TLS fixture listening")
        tls_addr = lines[1].split()[-1]
        assert main(["run-tls", "--endpoint", tls_addr, "--policy", "bsi-baseline"]) == 0
    finally:
        proc.terminate()
        proc.wait(timeout=10)


def test_fixtures_serve_needs_something():
    assert _cli("fixtures", "serve").returncode == 3

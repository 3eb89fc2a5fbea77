"""The pinned demo campaign behind the golden report files."""

from pathlib import Path

from uesentry.cli import main
from uesentry.dut.servers import TlsFixtureServer, UeEndpoint
from uesentry.dut.tls_fixture import load_fixture_config
from uesentry.dut.ue import get_profile

GOLDEN_DIR = Path(__file__).parent / "golden"
GOLDEN_JSON = GOLDEN_DIR / "demo_report.json"
GOLDEN_TEXT = GOLDEN_DIR / "demo_report.txt"
TIMESTAMP = "2026-01-01T00:00:00Z"
LABEL = "demo: caps-before-security UE + legacy TLS"


def run_demo(out: Path) -> int:
    """run-all against the caps-before-security UE and the legacy TLS fixture."""
    with UeEndpoint(get_profile("caps-before-security")) as ue, TlsFixtureServer(load_fixture_config("legacy")) as tls:
        return main([
            "run-all",
            "--dut", f"127.0.0.1:{ue.address[1]}",
            "--tls-endpoint", f"127.0.0.1:{tls.address[1]}",
            "--policy", "bsi-baseline",
            "--timestamp", TIMESTAMP,
            "--dut-label", LABEL,
            "--timeout-ms", "500",
            "--out", str(out),
        ])

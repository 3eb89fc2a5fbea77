import pytest

from uesentry.dut.servers import TlsFixtureServer, UeEndpoint
from uesentry.dut.tls_fixture import load_fixture_config
from uesentry.dut.ue import get_profile
from uesentry.model import load_suite, shipped_catalog_dir


@pytest.fixture(scope="session")
def catalog():
    return load_suite(shipped_catalog_dir())


@pytest.fixture
def ue_endpoint():
    """Factory: start a UE fixture for a profile name; all are stopped at teardown."""
    started = []

    def start(profile_name="compliant"):
        endpoint = UeEndpoint(get_profile(profile_name)).start()
        started.append(endpoint)
        return endpoint

    yield start
    for endpoint in started:
        endpoint.stop()


@pytest.fixture
def tls_server():
    """Factory: start a TLS fixture from a shipped name or a TlsFixtureConfig."""
    started = []

    def start(config="hardened", **kw):
        if isinstance(config, str):
            config = load_fixture_config(config)
        server = TlsFixtureServer(config, **kw).start()
        started.append(server)
        return server

    yield start
    for server in started:
        server.stop()


ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, text)`` then run the checks."""
    state = {}

    def declare(number, text):
        state["number"], state["text"] = number, text

    yield declare
    if "number" in state:
        failed = request.node.rep_call.failed if hasattr(request.node, "rep_call") else True
        verdict = "FAIL" if failed else "PASS"
        ACCEPTANCE_RESULTS[state["number"]] = (verdict, state["text"])
        print(f"\nacceptance criterion {state['number']}: {verdict} - {state['text']}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call":
        item.rep_call = report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        verdict, text = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {verdict} - {text}")

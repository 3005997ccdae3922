import pytest

from mecad.config import data_path, load_config
from mecad.sim import Simulation

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def default_run():
    """The shipped default configuration: sigmoid ramp with proactive policies."""
    sim = Simulation(load_config(data_path("default.json")))
    sim.run_until()
    return sim


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")

import pytest

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Per-criterion outcome records, printed in the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_ACCEPTANCE, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(log):
        parts = log[n]
        verdict = "PASS" if all(ok for ok, _ in parts.values()) else "FAIL"
        detail = "; ".join(f"{name}: {text}" for name, (_, text) in parts.items())
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {detail}")

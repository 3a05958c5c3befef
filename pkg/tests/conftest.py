import pytest

_LOG_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(_LOG_KEY, {})


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(_LOG_KEY, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(log):
        terminalreporter.write_line(log[n])

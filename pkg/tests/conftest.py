import pytest

_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_KEY] = {}


@pytest.fixture
def record_criterion(request):
    """Record one acceptance line: record_criterion(number, title, passed, detail)."""
    table = request.config.stash[_KEY]

    def record(number, title, passed, detail=""):
        table[number] = (title, bool(passed), detail)
        print(f"{'PASS' if passed else 'FAIL'}  [{number:>2}] {title}: {detail}")
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(_KEY, {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(table):
        title, passed, detail = table[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  [{number:>2}] {title}: {detail}")

import pytest

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture
def criterion(request):
    """Record one measured part of an acceptance criterion: ``criterion(n, label, ok, detail)``."""
    store = request.config.stash[_CRITERIA]

    def record(number: int, label: str, ok: bool, detail: str) -> bool:
        store.setdefault(number, []).append((label, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_CRITERIA, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        parts = store[number]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        details = "; ".join(f"{label}: {detail} [{'ok' if ok else 'not met'}]" for label, ok, detail in parts)
        terminalreporter.write_line(f"criterion {number}: {verdict} - {details}")

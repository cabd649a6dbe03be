import pytest

_CRITERIA = {}


class CriterionLog:
    """Collects one verdict line per acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.checks = []

    def check(self, ok, detail: str) -> bool:
        self.checks.append((bool(ok), detail))
        return bool(ok)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(ok for ok, _ in self.checks)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        details = "; ".join(f"{'ok' if ok else 'NOT OK'}: {d}" for ok, d in self.checks)
        return f"[{verdict}] criterion {self.number} ({self.title}): {details}"

    def finish(self):
        print(self.line())
        failed = [d for ok, d in self.checks if not ok]
        assert not failed, "; ".join(failed)


@pytest.fixture
def criterion():
    def make(number, title):
        log = CriterionLog(number, title)
        _CRITERIA[number] = log
        return log
    return make


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number].line())

import pytest

ACCEPTANCE_RESULTS = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, title)`` returns a reporter."""

    class Reporter:
        def __init__(self):
            self.number = None
            self.title = ""
            self.details = []

        def __call__(self, number, title):
            self.number, self.title = number, title
            return self

        def note(self, text):
            self.details.append(text)

    rep = Reporter()
    yield rep
    if rep.number is None:
        return
    failed = getattr(request.node, "rep_call", None)
    status = "PASS" if failed is not None and failed.passed else "FAIL"
    line = f"[{status}] criterion {rep.number:>2}: {rep.title}"
    if rep.details:
        line += " (" + "; ".join(rep.details) + ")"
    ACCEPTANCE_RESULTS.append((rep.number, line))
    print("\n" + line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line)

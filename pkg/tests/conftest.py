import pytest

_VERDICTS = []


@pytest.fixture
def criterion(request):
    """Register this test on the acceptance scoreboard.

    Call criterion(ident, detail) before the first assert and again once
    measured numbers are in hand; the last call wins.  One line per ident
    is printed after the run summary.
    """
    holder = {"id": None, "detail": ""}
    request.node._criterion = holder

    def record(ident, detail=""):
        holder["id"] = str(ident)
        holder["detail"] = detail

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    out = yield
    rep = out.get_result()
    if rep.when != "call":
        return
    holder = getattr(item, "_criterion", None)
    if holder and holder["id"] is not None:
        verdict = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _VERDICTS.append((holder["id"], verdict, holder["detail"]))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for ident, verdict, detail in _VERDICTS:
        line = f"criterion {ident}: {verdict}"
        if detail:
            line += f" - {detail}"
        terminalreporter.write_line(line)

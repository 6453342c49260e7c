import report


def pytest_terminal_summary(terminalreporter):
    if not report.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(report.RESULTS):
        terminalreporter.write_line(report.line(n))

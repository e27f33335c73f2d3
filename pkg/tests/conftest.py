import importlib


def pytest_terminal_summary(terminalreporter):
    # acceptance verdicts are printed even when pytest captures stdout
    try:
        mod = importlib.import_module("test_acceptance")
    except ImportError:
        return
    lines = getattr(mod, "VERDICTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

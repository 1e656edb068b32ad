import pytest

# (label, passed, detail) lines collected by the acceptance module
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")


@pytest.fixture
def record_criterion(capsys):
    def record(label, ok, detail):
        ACCEPTANCE_LINES.append((label, bool(ok), detail))
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {label}: {detail}")
        return bool(ok)

    return record

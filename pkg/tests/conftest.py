import pytest

from nveaudit.world import tunnel_grid

ACCEPTANCE = []


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE.append((number, title, ok, detail))
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title}"
    if detail:
        line += f"  [{detail}]"
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def grid():
    return tunnel_grid()

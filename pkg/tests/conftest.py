import pytest

_VERDICTS: dict[int, str] = {}


class Verdicts:
    """Records one pass/fail line per acceptance criterion and asserts it."""

    def __call__(self, number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        _VERDICTS[number] = line
        print(line)
        assert ok, line


@pytest.fixture(scope="session")
def verdict():
    return Verdicts()


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[k])

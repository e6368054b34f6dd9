import pytest

# criterion number -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def criterion():
    """Record one acceptance criterion; ``check.detail`` is printed in the summary."""

    class Check:
        def __init__(self):
            self.detail = ""

        def __call__(self, num):
            self.num = num
            return self

        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            passed = exc_type is None
            detail = self.detail if passed else f"{self.detail} {exc_type.__name__}: {str(exc)[:200]}"
            ACCEPTANCE[self.num] = (passed, detail.strip())
            return False

    return Check()

import time
from contextlib import contextmanager

ACCEPTANCE_LINES: list[str] = []


@contextmanager
def criterion(number: int, title: str, limit: float | None = None):
    """Time a criterion block and record a PASS/FAIL line; runtime over ``limit`` seconds fails it."""
    start = time.perf_counter()
    detail = {"text": ""}
    ok = False
    try:
        yield detail
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        over = limit is not None and elapsed >= limit
        verdict = "PASS" if ok and not over else "FAIL"
        budget = f" (limit {limit:g} s)" if limit is not None else ""
        extra = f" [{detail['text']}]" if detail["text"] else ""
        ACCEPTANCE_LINES.append(f"{verdict} criterion {number}: {title} in {elapsed:.2f} s{budget}{extra}")
    assert not over, f"criterion {number} took {elapsed:.2f} s, limit {limit} s"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

"""Shared pytest plumbing: the acceptance verdict summary.

Acceptance tests record one verdict line each; the terminal summary replays
them after the run so the lines survive pytest's output capture.
"""

_verdicts: list[tuple[int, str]] = []


def record_verdict(criterion: int, ok: bool, detail: str) -> None:
    word = "PASS" if ok else "FAIL"
    _verdicts.append((criterion, f"ACCEPTANCE {criterion}: {word} - {detail}"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_verdicts):
            terminalreporter.write_line(line)

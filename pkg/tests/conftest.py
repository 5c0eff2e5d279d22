"""Shared test plumbing: the acceptance suite records one line per criterion
and this hook prints them at the end of the run, pass or fail."""

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(criterion: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    ACCEPTANCE_LINES.append(f"[criterion {criterion}] {name}: {status}{suffix}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)

"""Pytest config: one pass/fail summary line per acceptance criterion."""

from __future__ import annotations

_criterion_lines: list[str] = []


def record_criterion(number: int, description: str, passed: bool, detail: str = "") -> bool:
    status = "PASS" if passed else "FAIL"
    suffix = f"  [{detail}]" if detail else ""
    _criterion_lines.append(f"ACCEPTANCE {number:2d} {status}: {description}{suffix}")
    return passed


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in sorted(_criterion_lines):
        terminalreporter.write_line(line)

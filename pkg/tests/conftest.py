from __future__ import annotations

import contextlib

import pytest

_LINES: dict[str, list[tuple[bool, str]]] = {}


@pytest.fixture
def criterion():
    """Context manager recording a pass/fail line for an acceptance criterion."""

    @contextlib.contextmanager
    def record(name: str, expected_failure: bool = False):
        notes: list[str] = []
        try:
            yield notes.append
        except BaseException as exc:
            tag = "known limitation: " if expected_failure else ""
            msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            _LINES.setdefault(name, []).append((False, tag + "; ".join(notes + [msg])))
            raise
        else:
            _LINES.setdefault(name, []).append((True, "; ".join(notes)))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_LINES, key=lambda k: (len(k), k)):
        parts = _LINES[name]
        ok = all(p for p, _ in parts)
        detail = " | ".join(d for _, d in parts if d)
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")

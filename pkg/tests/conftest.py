"""Shared fixtures and the acceptance summary printed at the end of a run."""

import pytest

_CRITERIA: dict[str, tuple] = {}


class Checks:
    """Soft assertions: every sub-check is evaluated and reported, then the test fails if any did."""

    def __init__(self, record_property):
        self._record = record_property
        self.items: list[tuple[str, bool, str]] = []

    def __call__(self, label: str, ok: bool, detail: str = "") -> bool:
        self.items.append((label, bool(ok), detail))
        return bool(ok)

    def done(self) -> None:
        text = "; ".join(f"{label}: {'ok' if ok else 'FAIL'}{f' ({d})' if d else ''}"
                         for label, ok, d in self.items)
        self._record("detail", text)
        failed = [f"{label} ({d})" for label, ok, d in self.items if not ok]
        assert not failed, "failed checks: " + "; ".join(failed)


@pytest.fixture
def checks(record_property):
    return Checks(record_property)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    key, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        if not detail and rep.failed:
            detail = str(rep.longrepr).strip().splitlines()[-1][:200]
        _CRITERIA[key] = (title, rep.passed, detail, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key, (title, passed, detail, secs) in _CRITERIA.items():
        tr.write_line(f"criterion {key:<4} {'PASS' if passed else 'FAIL'}  {title} [{secs:.1f} s]")
        if detail:
            tr.write_line(f"    {detail}")

import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


_acceptance_lines = []


def record_acceptance(name, ok, detail=""):
    _acceptance_lines.append((name, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _acceptance_lines:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())

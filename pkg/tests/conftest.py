import re


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = re.search(r"test_acceptance\.py::test_a(\d+)_(\w+)", getattr(rep, "nodeid", ""))
            if m and rep.when in ("call", "setup") and not (rep.when == "setup" and rep.passed):
                lines.append((int(m.group(1)), m.group(2), "PASS" if rep.passed else "FAIL"))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n, name, verdict in sorted(lines):
        terminalreporter.write_line(f"criterion {n:2d} {name.replace('_', ' '):<34} {verdict}")

def pytest_terminal_summary(terminalreporter):
    """Echo the one-line verdict of every acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance.py" not in rep.nodeid:
                continue
            verdict = [ln for ln in rep.capstdout.splitlines() if ln.startswith(("PASS ", "FAIL "))]
            lines.extend(verdict or [f"FAIL {rep.nodeid}: no verdict recorded"])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda ln: ln.split()[1]):
            terminalreporter.write_line(line)

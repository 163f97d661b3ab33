import sys


def pytest_terminal_summary(terminalreporter):
    # acceptance lines are captured per test; repeat them in one block
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "LINES", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
    n_pass = sum(v.startswith("[PASS]") for v in lines.values())
    terminalreporter.write_line(f"{n_pass}/{len(lines)} criteria pass")

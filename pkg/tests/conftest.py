from hypothesis import HealthCheck, settings

settings.register_profile("evcoord", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("evcoord")


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            lines += [v for k, v in rep.user_properties if k == "criterion"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: s[6:]):
            terminalreporter.write_line(line)

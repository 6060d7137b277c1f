import math

import pytest

from scoreflow import empirical_field, lemniscate_dataset, make_schedule, run_ensemble

LEMNISCATE_N = 2000
LEMNISCATE_SAMPLES = 10_000
LEMNISCATE_EPS = 0.2
LEMNISCATE_STEPS = 150


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
        entry = item.config._criteria.setdefault(marker.args[0], [])
        entry.append((item.name, report.outcome, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    crit = getattr(config, "_criteria", {})
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(crit):
        results = crit[n]
        ok = all(outcome == "passed" for _, outcome, _ in results)
        details = " | ".join(f"{name}: {detail}" for name, _, detail in results if detail)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {details}")


@pytest.fixture(scope="session")
def lemniscate():
    return lemniscate_dataset(LEMNISCATE_N, half_width=1.0, seed=0)


@pytest.fixture(scope="session")
def lemniscate_run(lemniscate):
    """One SDE ensemble to t = 1e-3; t = 0.1 and 0.01 are intermediate nodes."""
    import time

    sched = make_schedule(1.0, 1e-3, LEMNISCATE_STEPS)
    start = time.perf_counter()
    ens = run_ensemble(
        empirical_field(lemniscate),
        {"gaussian": {"mean": [0.0, 0.0], "sigma": math.sqrt(2.0)}},
        sched,
        LEMNISCATE_EPS,
        LEMNISCATE_SAMPLES,
        seed=42,
    )
    return ens, time.perf_counter() - start

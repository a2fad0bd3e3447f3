import os

import pytest
from hypothesis import HealthCheck, settings

from votdr.model import DetectorConfig, FiberPlan, LaserConfig

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def short_plan():
    return FiberPlan.uniform(2000.0, 0.2)


@pytest.fixture
def quiet_detector():
    # no fading, no jitter: easiest to reason about
    return DetectorConfig(jitter_sigma=0.0, polarization_visibility=0.0)


@pytest.fixture
def low_power_laser():
    return LaserConfig(peak_power=-50.0, pulse_width=100e-9, repetition_rate=20_000.0)


# criterion -> list of (check name, passed, detail)
ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture
def record():
    def _record(criterion: int, name: str, passed: bool, detail: str = ""):
        ACCEPTANCE.setdefault(criterion, []).append((name, bool(passed), detail))
        print(f"criterion {criterion} [{name}]: {'PASS' if passed else 'FAIL'} {detail}")
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[crit]
        ok = all(p for _, p, _ in checks)
        detail = "; ".join(f"{n}: {d}" if d else n for n, _, d in checks)
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'} ({detail})")

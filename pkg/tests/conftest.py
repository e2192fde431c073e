import pytest
from hypothesis import HealthCheck, settings

from mdeplan.mde import ExactDeviation
from mdeplan.world import build_models

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; all lines are repeated in the terminal summary."""
    results = request.config.stash.setdefault(_RESULTS, [])

    def record(number, name, passed, detail):
        line = f"criterion {number:<3} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        results.append((str(number), line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, [])
    if results:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(results):
            terminalreporter.write_line(line)


def exact_mdes(task):
    models = build_models(task.model_names)
    return {(s, m.name): ExactDeviation(m) for s in task.skills for m in models}

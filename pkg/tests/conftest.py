import numpy as np
import pytest

from se_predict import harness
from se_predict.features import FeatureSpec, featurize

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def labeled_small():
    """Sorted features and average SE for 300 urban K=4 objects."""
    cfg = harness.ExperimentConfig(n_train=300, n_test=1, seed=17)
    train, _ = harness.DataCache().labeled(cfg)
    X = featurize(train.objects, FeatureSpec.parse("sorted", True, True))
    return X, np.array([r.se_avg for r in train.reports])


@pytest.fixture
def record_criterion(request):
    """Call with ``(number, passed, detail)``; prints a PASS/FAIL line."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        with request.config.pluginmanager.get_plugin("capturemanager").global_and_fixture_disabled():
            print("\n" + line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import numpy as np
import pytest


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        outcome = "PASS" if report.passed else "FAIL"
        print(f"[acceptance] {outcome}: {report.nodeid.split('::')[-1]}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

import os

# Single-threaded BLAS keeps timings comparable and results bit-reproducible.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import pytest

from brandrank.synth import SynthConfig, generate


@pytest.fixture(scope="session")
def tiny_synth():
    return generate(SynthConfig(n_users=60, n_brands=12, n_categories=3, seed=3))


@pytest.fixture(scope="session")
def small_prepared():
    from brandrank.pipeline import prepare_synthetic
    return prepare_synthetic(SynthConfig(n_users=600, n_brands=30, seed=1))


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record a PASS/FAIL line for an acceptance criterion; printed in the summary."""
    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])

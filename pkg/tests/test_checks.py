import pytest

from xclp.checks import SUITES, run_suite


@pytest.mark.parametrize("name", SUITES)
def test_suite_passes_and_catches_fault(name):
    ok = run_suite(name, trials=3, seed=5)
    assert ok.passed, ok.details
    bad = run_suite(name, trials=3, seed=5, inject_fault=True)
    assert not bad.passed and bad.failures == 1


def test_unknown_suite():
    with pytest.raises(ValueError):
        run_suite("nope")

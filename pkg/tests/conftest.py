import pytest
from hypothesis import settings

from roughsense import classifier
from roughsense.dataset import synth_dataset
from roughsense.dsp_frontend import DspConfig

settings.register_profile("suite", max_examples=30, deadline=None)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def dsp():
    return DspConfig()


@pytest.fixture(scope="session")
def tiny_params():
    return classifier.init_params(classifier.TINY_ARCH, seed=3, head_init="he")


@pytest.fixture(scope="session")
def small_synth(dsp):
    """Small synthetic chunk set shared by fast tests."""
    return synth_dataset(11, 60, dsp)


@pytest.fixture(scope="session")
def trained_small_model(dsp):
    """Model trained on a reduced synthetic set; enough to classify it well."""
    chunks = synth_dataset(7, 300, dsp)
    return classifier.train(classifier.TrainConfig(seed=0), chunks, dsp)


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(
        report.outcome, report.outcome.upper()
    )
    print(f"\n[ACCEPTANCE] {name}: {outcome}", flush=True)

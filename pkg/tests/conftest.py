import pytest

from qalloc import harness, modelio
from qalloc.probes import ProbeConfig


@pytest.fixture(scope="session")
def fixture_model():
    return modelio.gen_model(modelio.default_fixture())


@pytest.fixture(scope="session")
def fixture_dataset(fixture_model):
    spec = modelio.default_fixture()
    return modelio.gen_dataset(fixture_model, spec.dataset_size, seed=spec.seed + 1)


@pytest.fixture(scope="session")
def fixture_profiles(fixture_model, fixture_dataset):
    """Calibration profiles at the default probe configuration (shared; costly)."""
    return harness.run_pipeline(fixture_model, fixture_dataset, ProbeConfig(seed=0))

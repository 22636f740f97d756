import pytest

from torsionlab.manifest import fixture_path, load_manifest


@pytest.fixture(scope="session")
def lta():
    return load_manifest(fixture_path("lta.json"))


@pytest.fixture(scope="session")
def lfa1():
    return load_manifest(fixture_path("lfa1.json"))

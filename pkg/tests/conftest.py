import pytest
from hypothesis import HealthCheck, settings

from railqubo.fixtures import demo_default_routing, demo_instance, demo_rerouted_routing
from railqubo.qubo import assemble

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def demo():
    return demo_instance()


@pytest.fixture(scope="session")
def default_routing():
    return demo_default_routing()


@pytest.fixture(scope="session")
def rerouted_routing():
    return demo_rerouted_routing()


@pytest.fixture(scope="session")
def qubo_default(demo, default_routing):
    return assemble(demo, default_routing)


@pytest.fixture(scope="session")
def qubo_rerouted(demo, rerouted_routing):
    return assemble(demo, rerouted_routing)

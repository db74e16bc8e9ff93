import pytest
from hypothesis import HealthCheck, settings

from oracles import sodium

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

needs_sodium = pytest.mark.skipif(sodium is None, reason="libsodium not available")


@pytest.fixture
def keys():
    from iotfog.identity import generate_keypair

    return [generate_keypair(i) for i in range(1, 9)]

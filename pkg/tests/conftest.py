import numpy as np
import pytest

from litmetrics.gateway import ChatGateway, ModelEndpoint, RetryPolicy
from litmetrics.knowledge import default_domain_knowledge


@pytest.fixture(scope="session")
def dk():
    return default_domain_knowledge()


@pytest.fixture
def gateway():
    gw = ChatGateway(sleep=lambda _s: None)
    yield gw
    gw.close()


def make_endpoint(url, model="stub-model", **kw):
    kw.setdefault("retry", RetryPolicy(max_attempts=3, base_delay=0.0, max_delay=0.0, jitter=False))
    kw.setdefault("timeout", 10.0)
    return ModelEndpoint(base_url=url, model_name=model, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

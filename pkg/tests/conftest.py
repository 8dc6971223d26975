import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ergodist.estimators import exponential_weight, polynomial_weight
from ergodist.model import ornstein_uhlenbeck, quartic_well


@pytest.fixture(scope="session")
def ou():
    return ornstein_uhlenbeck()


@pytest.fixture(scope="session")
def quartic():
    return quartic_well()


@pytest.fixture(scope="session")
def wf_exp():
    return exponential_weight(1.0)


@pytest.fixture(scope="session")
def wf_poly():
    return polynomial_weight(1)

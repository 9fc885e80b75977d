from fractions import Fraction

import pytest

from poql.envs import hot_beverage_world


@pytest.fixture(scope="session")
def beverage_world():
    """Finite-belief parameterization: p_t=0.1, p_cc=p_tt=0.5."""
    return hot_beverage_world()


@pytest.fixture(scope="session")
def beverage_chain_world():
    """Infinite-belief parameterization: p_t=0.2, p_cc=1, p_tt=0.2."""
    return hot_beverage_world(Fraction(1, 5), Fraction(1), Fraction(1, 5))

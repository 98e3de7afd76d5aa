import numpy as np
import pytest

from pa_lab.market import MarketParams


@pytest.fixture
def baseline_market() -> MarketParams:
    # drift 10%, volatility 30%, unit risk aversion, long-only box
    return MarketParams(b=[0.1], sigma=[[0.3]], x0=1.0, eta=1.0,
                        constraint_lo=0.0, constraint_hi=1.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240809)

import numpy as np
import pytest

from isacsim.channel import ChannelParams, sample_narrowband, sample_wideband, stream
from isacsim.metrics import LinkBudget


@pytest.fixture
def budget():
    return LinkBudget.from_db(N=50)


@pytest.fixture
def narrow_channels():
    return sample_narrowband(ChannelParams(M=4), stream(7, 0, "test"))


@pytest.fixture
def wide_channels():
    return sample_wideband(ChannelParams(M=4, L=2, L_tilde=2), stream(7, 0, "test"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

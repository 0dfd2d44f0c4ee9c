import math

import pytest

from fldelay.model import LearningConfig, NetworkConfig, Scenario, UserProfile


def make_scenario(workloads_s, snr_bw, bandwidth=1e6, upload_bits=1e5, learn=None):
    """Scenario with f = 1 GHz, p = 1 W, N0 = 1 so A_k/f and g p / N0 are set directly.

    The default learning config gives a = 10 and v = 2.
    """
    learn = learn or LearningConfig(1.0, 1.0, 0.2, 1.0, math.exp(-1.0))
    f = 1e9
    users = tuple(
        UserProfile(cycles_per_sample=w * f / (learn.v * 1000), samples=1000, f_max=f, p_max=1.0, gain=c)
        for w, c in zip(workloads_s, snr_bw)
    )
    return Scenario(users, NetworkConfig(bandwidth, 1.0, upload_bits), learn)


@pytest.fixture
def toy_k2():
    return make_scenario([1.0, 2.0], [1e6, 3e5])

import numpy as np
import pytest

from cellfree_fdd import Streams, SystemConfig, system_noise_var


@pytest.fixture
def small_config():
    """Small but non-trivial scenario at 10 dB system SNR."""
    return SystemConfig(num_aps=3, antennas_per_ap=16, num_users=4,
                        num_paths=2, pilot_len=4, snapshots=8,
                        noise_var=system_noise_var(10.0, 1.0), rng_seed=11)


@pytest.fixture
def small_setup(small_config):
    from cellfree_fdd import build_layout, draw_channel

    streams = Streams.for_trial(small_config, 0)
    layout = build_layout(small_config, streams)
    realization = draw_channel(small_config, layout, streams)
    return small_config, streams, layout, realization


def rng(seed=0):
    return np.random.default_rng(seed)

import pytest

from feelsched.config import SystemConfig, dbm_to_watts


@pytest.fixture
def ref_cfg():
    """Reference constants with K=40, d=21840."""
    return SystemConfig()


@pytest.fixture
def gamma1(ref_cfg):
    return ref_cfg.replace(rate_margin=1.0)


@pytest.fixture
def small_cfg():
    return SystemConfig(num_devices=8, sched_cardinality=2, total_rounds=30, corpus_size=800,
                        test_size=200, feature_dim=12, partition_model="shards(3)")


P0_W = dbm_to_watts(28.0)

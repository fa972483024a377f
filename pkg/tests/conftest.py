import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from beacon_rewards.chain_time import ChainSpec
from beacon_rewards.simulator import SimConfig


@pytest.fixture
def small_sim_config() -> SimConfig:
    # Mainnet chain constants but a committee smaller than the validator
    # set, so committee sampling is non-degenerate at toy scale.
    spec = ChainSpec(sync_committee_size=16, sync_committee_period_epochs=4)
    return SimConfig(
        spec=spec,
        initial_validators=40,
        validators_added_per_epoch=0,
        epochs=8,
        rng_seed=7,
        base_attestation_reward=14_000,
        proposer_reward_scale=100.0,
        sync_reward_per_slot=1_000,
    )

"""Cooperative physical-layer security as a merge-and-split coalition game."""

from coalsec.channel import (
    ChannelState,
    Deployment,
    SimConfig,
    build_channel_state,
    channel_gain,
    max_exchange_distance,
)
from coalsec.secrecy import NEG_INFINITY, coalition_value, noncoop_secrecy_capacity
from coalsec.game import FormationEngine, merge_split_until_stable, pareto_preferred, run_round
from coalsec.stability import find_dc_stable, is_dhp_stable

__version__ = "0.1.0"

__all__ = [
    "ChannelState",
    "Deployment",
    "FormationEngine",
    "NEG_INFINITY",
    "SimConfig",
    "build_channel_state",
    "channel_gain",
    "coalition_value",
    "find_dc_stable",
    "is_dhp_stable",
    "max_exchange_distance",
    "merge_split_until_stable",
    "noncoop_secrecy_capacity",
    "pareto_preferred",
    "run_round",
]

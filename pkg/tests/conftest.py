import numpy as np
import pytest

from coalsec.channel import ChannelState, Deployment, SimConfig, build_channel_state

DEFAULTS = SimConfig()  # 10 mW slot, -90 dBm noise, 10 dB exchange SNR, mu = 3


def make_channel(users, dests, eves, cfg=DEFAULTS, seed=0) -> ChannelState:
    dep = Deployment.nearest(users, dests, eves)
    return build_channel_state(dep, cfg, seed)


@pytest.fixture
def cfg():
    return DEFAULTS


@pytest.fixture
def cluster_triple():
    """Three users 150 m apart sitting right next to eavesdropper 0.

    Alone, each user is out-heard by the eavesdropper (zero secrecy); the
    destination is far enough that cooperation with nulls pays off.
    """
    users = [(1000.0, 1000.0), (1150.0, 1000.0), (1075.0, 1130.0)]
    dests = [(1075.0, 1600.0)]
    eves = [(1075.0, 1050.0), (300.0, 2400.0)]
    return make_channel(users, dests, eves)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_coalition_instance(rng, K: int, size: int, cfg=DEFAULTS):
    """Seeded geometric instance: ``size`` users within a 600 m box, K eavesdroppers, one destination.

    Returns ``(ch, cfg, S)`` with ``S`` covering every user, so exchange
    distances stay below the 1 km radius and every member has power left.
    """
    from dataclasses import replace

    cfg = replace(cfg, n_eavesdroppers=K, n_destinations=1, n_users=size)
    users = rng.uniform(0, 600, (size, 2))
    dest = rng.uniform(0, 2500, (1, 2))
    eves = rng.uniform(0, 2500, (K, 2))
    ch = make_channel(users, dest, eves, cfg, seed=int(rng.integers(2**31)))
    return ch, cfg, tuple(range(size))


def nullspace_capacity(ch, cfg, i, S):
    """Independent oracle: project the destination row onto the eavesdroppers' null space."""
    from scipy.linalg import null_space

    idx = list(S)
    m = ch.assignment[i]
    eve_rows = ch.g[idx, :].T           # K x |S|, eve k hears eve_rows[k] @ w
    N = null_space(eve_rows)            # orthonormal basis of admissible weights
    a = ch.h[idx, m] @ N                # destination response per basis vector
    p_bar = cfg.exchange_snr * cfg.noise_power * max(
        np.linalg.norm(np.subtract(ch.positions.user_pos[i], ch.positions.user_pos[j])) ** cfg.pathloss_exp
        for j in idx if j != i)
    power = cfg.slot_power - p_bar
    return 0.5 * np.log2(1 + power * np.vdot(a, a).real / cfg.noise_power)


WALK_USERS = [(1000, 950), (1100, 1000), (1050, 1090), (1000, 1080), (2150, 900), (2200, 1010)]
WALK_DESTS = [(1075, 1600), (2150, 300)]
WALK_EVES = [(1060, 1050), (2180, 960)]


def walking_away_scenario(period: float = 5.0):
    """User 0 starts inside a four-user cluster and walks 1.1 km east toward a
    pair of users sitting next to the second eavesdropper."""
    from coalsec.channel import Deployment
    from coalsec.scenario import MobilityTrace

    dep = Deployment.nearest(WALK_USERS, WALK_DESTS, WALK_EVES)
    trace = MobilityTrace({0: [(0.0, (1000.0, 950.0)), (110.0, (2100.0, 950.0))]}, period=period)
    return SimConfig(n_users=6), trace, dep


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

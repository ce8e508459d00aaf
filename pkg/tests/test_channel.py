import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from coalsec.channel import (
    ChannelState,
    CoincidentNodesError,
    ConfigError,
    Deployment,
    SimConfig,
    build_channel_state,
    channel_gain,
    exchange_power_at,
    max_exchange_distance,
)

from conftest import DEFAULTS


class TestChannelGain:
    def test_unit_distance_zero_phase(self):
        assert channel_gain((0, 0), (1, 0), 3, 0.0) == pytest.approx(1 + 0j)

    def test_phase_flip(self):
        g = channel_gain((0, 0), (100, 0), 2, math.pi)
        assert g.real == pytest.approx(-0.01)
        assert abs(g.imag) < 1e-15

    def test_quarter_turn_is_imaginary(self):
        g = channel_gain((0, 0), (0, 1000), 3, math.pi / 2)
        assert abs(g) == pytest.approx(10**-4.5, rel=1e-12)
        assert abs(g.real) < 1e-12 * abs(g)

    def test_coincident(self):
        with pytest.raises(CoincidentNodesError, match="coincident nodes"):
            channel_gain((3, 4), (3, 4), 3, 0.0)

    @given(st.floats(1.0, 5000.0), st.floats(0.0, 2 * math.pi), st.floats(2.0, 5.0))
    def test_magnitude_depends_on_distance_only(self, d, phi, mu):
        assert abs(channel_gain((0, 0), (d, 0), mu, phi)) == pytest.approx(d ** (-mu / 2), rel=1e-12)


class TestExchangeRadius:
    def test_default_parameters_give_one_km(self):
        assert max_exchange_distance(DEFAULTS) == pytest.approx(1000.0, rel=1e-9)

    def test_unit_ratio(self):
        cfg = replace(DEFAULTS, slot_power=DEFAULTS.exchange_snr * DEFAULTS.noise_power, pathloss_exp=2.7)
        assert max_exchange_distance(cfg) == pytest.approx(1.0, rel=1e-12)

    def test_square_law_against_root_finder(self):
        cfg = replace(DEFAULTS, pathloss_exp=2.0)
        # independent route: solve exchange power == slot power numerically
        root = brentq(lambda d: cfg.exchange_snr * cfg.noise_power * d**2 - cfg.slot_power, 1.0, 1e6,
                      xtol=1e-9, rtol=1e-14)
        assert root == pytest.approx(31622.776601683792, rel=1e-9)
        assert max_exchange_distance(cfg) == pytest.approx(root, rel=1e-9)

    @given(st.floats(1e-4, 1.0), st.floats(1.0, 100.0), st.floats(1e-14, 1e-10), st.floats(2.0, 5.0))
    def test_exchange_power_at_radius_equals_budget(self, p, nu, sigma2, mu):
        cfg = replace(DEFAULTS, slot_power=p, exchange_snr=nu, noise_power=sigma2, pathloss_exp=mu)
        assert exchange_power_at(max_exchange_distance(cfg), cfg) == pytest.approx(p, rel=1e-9)

    @given(st.floats(1.01, 10.0))
    def test_monotone(self, factor):
        base = max_exchange_distance(DEFAULTS)
        assert max_exchange_distance(replace(DEFAULTS, slot_power=DEFAULTS.slot_power * factor)) > base
        assert max_exchange_distance(replace(DEFAULTS, exchange_snr=DEFAULTS.exchange_snr * factor)) < base
        assert max_exchange_distance(replace(DEFAULTS, noise_power=DEFAULTS.noise_power * factor)) < base


class TestConfig:
    def test_defaults(self):
        assert DEFAULTS.slot_power == 0.01
        assert DEFAULTS.noise_power == 1e-12
        assert DEFAULTS.exchange_snr == 10.0
        assert DEFAULTS.pathloss_exp == 3.0
        assert DEFAULTS.area_side == 2500.0

    @pytest.mark.parametrize("key,value", [
        ("n_eavesdroppers", 1), ("slot_power", 0.0), ("noise_power", -1.0),
        ("pathloss_exp", 1.5), ("area_side", math.inf), ("sweep_order", "sideways"),
    ])
    def test_rejects(self, key, value):
        with pytest.raises(ConfigError) as err:
            SimConfig(**{key: value})
        assert err.value.key == key


class TestBuildChannelState:
    def test_single_link(self):
        dep = Deployment.nearest([(0, 0)], [(1000, 0)], [(0, 500), (0, 2000)])
        ch = build_channel_state(dep, DEFAULTS, 7)
        assert abs(ch.h[0, 0]) == pytest.approx(10**-4.5, rel=1e-12)
        assert abs(ch.g[0, 0]) == pytest.approx(500**-1.5, rel=1e-12)

    def test_inter_user_path_loss(self):
        dep = Deployment.nearest([(0, 0), (500, 0)], [(0, 900)], [(2000, 0), (0, 2000)])
        ch = build_channel_state(dep, DEFAULTS, 0)
        assert ch.q[0, 1] == pytest.approx(8e-9, rel=1e-12)
        assert ch.q[0, 1] == ch.q[1, 0]
        assert np.isinf(ch.q[0, 0])

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        dep = Deployment.nearest(rng.uniform(0, 2500, (6, 2)), rng.uniform(0, 2500, (2, 2)),
                                 rng.uniform(0, 2500, (2, 2)))
        assert build_channel_state(dep, DEFAULTS, 11) == build_channel_state(dep, DEFAULTS, 11)
        assert build_channel_state(dep, DEFAULTS, 11) != build_channel_state(dep, DEFAULTS, 12)

    def test_magnitudes_exact(self, rng):
        users = rng.uniform(0, 2500, (8, 2))
        dests = rng.uniform(0, 2500, (2, 2))
        eves = rng.uniform(0, 2500, (3, 2))
        cfg = replace(DEFAULTS, n_eavesdroppers=3)
        ch = build_channel_state(Deployment.nearest(users, dests, eves), cfg, 5)
        d = np.linalg.norm(users[:, None] - dests[None], axis=-1)
        np.testing.assert_allclose(np.abs(ch.h), d**-1.5, rtol=1e-12)
        assert np.all((ch.phases["g"] >= 0) & (ch.phases["g"] < 2 * np.pi))

    def test_immutable(self):
        dep = Deployment.nearest([(0, 0)], [(1000, 0)], [(0, 500), (0, 2000)])
        ch = build_channel_state(dep, DEFAULTS, 0)
        with pytest.raises(ValueError):
            ch.h[0, 0] = 0

    @pytest.mark.parametrize("dests,eves", [
        ([(5, 5)], [(0, 0), (9, 9)]),   # user on an eavesdropper
        ([(0, 0)], [(5, 5), (9, 9)]),   # user on a destination
    ])
    def test_coincident_roles(self, dests, eves):
        dep = Deployment.nearest([(0, 0)], dests, eves)
        with pytest.raises(CoincidentNodesError):
            build_channel_state(dep, DEFAULTS, 0)

    def test_destination_may_share_eavesdropper_spot(self):
        # destinations and eavesdroppers never exchange signals with each other
        dep = Deployment.nearest([(0, 0)], [(5, 5)], [(5, 5), (9, 9)])
        build_channel_state(dep, DEFAULTS, 0)

    def test_nearest_assignment_ties_to_lowest(self):
        dep = Deployment.nearest([(5, 0), (1, 0)], [(0, 0), (10, 0)], [(3, 3), (4, 4)])
        assert list(dep.assignment) == [0, 0]

    def test_from_gains(self):
        ch = ChannelState.from_gains([[1.0], [1.0]], [[0, 0], [0, 0]], [(0, 0), (0, 10)], [0, 0], 2.0)
        assert ch.q[0, 1] == pytest.approx(0.01)

import json
from dataclasses import replace

import pytest

from coalsec.channel import SimConfig
from coalsec.game import CombinatorialLimitError, FormationEngine, singletons
from coalsec.scenario import drop_channel
from coalsec.stability import (
    find_dc_stable,
    is_dhp_stable,
    is_singleton_value_set,
    stability_report,
)

from conftest import DEFAULTS, make_channel

FAR_EVES = [(2400, 0), (2400, 2400)]


@pytest.fixture
def scattered():
    users = [(0, 0), (1200, 0), (0, 1200), (1200, 1200)]
    return make_channel(users, [(600, 600)], FAR_EVES, replace(DEFAULTS, n_users=4)), replace(DEFAULTS, n_users=4)


class TestDhp:
    def test_scattered_singletons_stable(self, scattered):
        ch, cfg = scattered
        report = is_dhp_stable(singletons(4), ch, cfg)
        assert report.dhp_stable
        assert report.violated_condition is None and report.witness_before is None

    def test_forced_far_merge_wants_split(self, scattered):
        ch, cfg = scattered
        report = is_dhp_stable([(0, 1, 2), (3,)], ch, cfg)
        assert not report.dhp_stable
        assert report.violated_condition == "split"
        assert report.witness_before == ((0, 1, 2),)
        assert report.witness_after == ((0,), (1,), (2,))

    def test_cooperative_triple_wants_merge(self, cluster_triple):
        report = is_dhp_stable(singletons(3), cluster_triple, DEFAULTS)
        assert not report.dhp_stable
        assert report.violated_condition == "merge"
        assert report.witness_after == ((0, 1, 2),)
        assert is_dhp_stable([(0, 1, 2)], cluster_triple, DEFAULTS).dhp_stable

    def test_rejects_inadmissible_sizes(self, cluster_triple):
        with pytest.raises(ValueError):
            is_dhp_stable([(0, 1), (2,)], cluster_triple, DEFAULTS)

    def test_subset_cap(self, cluster_triple):
        with pytest.raises(CombinatorialLimitError, match="instance too large"):
            is_dhp_stable(singletons(3), cluster_triple, replace(DEFAULTS, max_subsets=1))

    @pytest.mark.parametrize("seed", range(10))
    def test_algorithm_output_stable(self, seed):
        cfg = SimConfig(n_users=10, rng_seed=seed)
        ch = drop_channel(cfg)
        out = FormationEngine(ch, cfg).run_round()
        assert is_dhp_stable(out.partition, ch, cfg).dhp_stable


class TestDc:
    def test_single_user(self):
        cfg = replace(DEFAULTS, n_users=1)
        ch = make_channel([(5, 5)], [(700, 700)], FAR_EVES, cfg)
        assert find_dc_stable(ch, cfg) == ((0,),)

    def test_scattered(self, scattered):
        ch, cfg = scattered
        assert find_dc_stable(ch, cfg) == singletons(4)

    def test_cluster_triple(self, cluster_triple):
        assert find_dc_stable(cluster_triple, DEFAULTS) == ((0, 1, 2),)

    def test_cap(self):
        cfg = SimConfig(n_users=13)
        with pytest.raises(CombinatorialLimitError):
            find_dc_stable(drop_channel(cfg), cfg)

    def test_algorithm_reaches_dc(self):
        checked = 0
        for seed in range(12):
            cfg = SimConfig(n_users=6, rng_seed=seed)
            ch = drop_channel(cfg)
            dc = find_dc_stable(ch, cfg)
            if dc is None:
                continue
            checked += 1
            for order in ("ascending", "descending", "random"):
                assert FormationEngine(ch, cfg, order=order, order_seed=seed).run_round().partition == dc
        assert checked >= 3


def test_singleton_value_set(cluster_triple, scattered):
    assert is_singleton_value_set((0,), cluster_triple, DEFAULTS)
    assert is_singleton_value_set((0, 1, 2), cluster_triple, DEFAULTS)
    ch, cfg = scattered
    assert is_singleton_value_set((0, 1, 2), ch, cfg)  # infeasible, still one vector


def test_report_text(cluster_triple):
    report = stability_report([(0, 1, 2)], cluster_triple, DEFAULTS)
    rows = dict(line.split(" = ", 1) for line in report.to_text().splitlines())
    assert json.loads(rows["dhp_stable"]) is True
    assert json.loads(rows["violated_condition"]) is None
    assert json.loads(rows["dc_partition"]) == [[0, 1, 2]]
    assert json.loads(rows["algorithm_matches_dc"]) is True

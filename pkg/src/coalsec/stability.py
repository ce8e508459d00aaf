"""Stability checks for formed partitions.

``is_dhp_stable`` verifies that no coalition wants to split and no group of
coalitions wants to merge. ``find_dc_stable`` brute-forces the strongly
stable partition on small networks, which the formation algorithm must
reach whenever it exists.

Everywhere here an admissible coalition has one member or more than K.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from typing import Iterator

from coalsec.channel import ChannelState, SimConfig
from coalsec.game import (
    CombinatorialLimitError,
    Coalition,
    FormationEngine,
    Partition,
    SplitSearch,
    make_partition,
    pareto_dominates,
    payoffs_of,
    players,
)
from coalsec.partitions import admissible_splits, partitions
from coalsec.secrecy import CoalitionValuer, admissible_size, as_coalition

BRUTE_FORCE_SPLIT_SIZE = 10  # ~2e4 admissible splits at K = 2; larger coalitions use SplitSearch


@dataclass
class StabilityReport:
    dhp_stable: bool
    violated_condition: str | None = None
    witness_before: tuple[Coalition, ...] | None = None
    witness_after: tuple[Coalition, ...] | None = None
    dc_partition: Partition | None = None
    algorithm_matches_dc: bool | None = None

    def to_text(self) -> str:
        def fmt(x):
            return None if x is None else [list(c) for c in x]

        rows = {
            "dhp_stable": self.dhp_stable,
            "violated_condition": self.violated_condition,
            "witness_before": fmt(self.witness_before),
            "witness_after": fmt(self.witness_after),
            "dc_partition": fmt(self.dc_partition),
            "algorithm_matches_dc": self.algorithm_matches_dc,
        }
        return "".join(f"{k} = {json.dumps(v)}\n" for k, v in rows.items())


def _merge_groups(engine: FormationEngine, P: Partition, cap: int) -> Iterator[tuple[Coalition, ...]]:
    """Every group of >= 2 coalitions of ``P`` whose union stays within exchange range."""
    n = len(P)
    adj = [[j for j in range(i + 1, n) if engine.can_merge(P[i], P[j])] for i in range(n)]
    adj_sets = [set(a) for a in adj]
    visited = 0

    def extend(group, candidates):
        nonlocal visited
        for pos, j in enumerate(candidates):
            grown = group + (j,)
            visited += 1
            if visited > cap:
                raise CombinatorialLimitError(
                    f"instance too large: more than {cap} coalition subsets to check")
            yield tuple(P[k] for k in grown)
            yield from extend(grown, [c for c in candidates[pos + 1:] if c in adj_sets[j]])

    for i in range(n):
        for pos, j in enumerate(adj[i]):
            group = (i, j)
            visited += 1
            if visited > cap:
                raise CombinatorialLimitError(
                    f"instance too large: more than {cap} coalition subsets to check")
            yield (P[i], P[j])
            yield from extend(group, [c for c in adj[i][pos + 1:] if c in adj_sets[j]])


def is_dhp_stable(P, ch: ChannelState, cfg: SimConfig,
                  engine: FormationEngine | None = None) -> StabilityReport:
    """Check that no admissible split and no in-range merge is Pareto-preferred.

    Merges whose union exceeds the exchange range are skipped: some member
    of such a union has no power left, so the union can never be preferred.
    """
    engine = engine or FormationEngine(ch, cfg)
    value, K = engine.value, engine.K
    P = make_partition(P, ch.n_users)
    for T in P:
        if not admissible_size(len(T), K):
            raise ValueError(f"coalition {T} violates the more-than-K rule")
        if len(T) > cfg.max_split_size:
            raise CombinatorialLimitError(f"instance too large: coalition of size {len(T)}")
        old = value(T)
        if len(T) <= BRUTE_FORCE_SPLIT_SIZE:
            # independent of the pruned search the formation engine uses
            blocks = next((b for b in admissible_splits(T, K)
                           if pareto_dominates(payoffs_of(b, value), old)), None)
        else:
            blocks = SplitSearch(engine, T, old).first()
        if blocks is not None:
            return StabilityReport(False, "split", (T,), blocks)
    for group in _merge_groups(engine, P, cfg.max_subsets):
        union = as_coalition(players(group))
        if len(union) <= K:
            continue
        if pareto_dominates(value(union), payoffs_of(group, value)):
            return StabilityReport(False, "merge", group, (union,))
    return StabilityReport(True)


def is_singleton_value_set(S, ch: ChannelState, cfg: SimConfig) -> bool:
    """The value set of ``S`` holds exactly one payoff vector, one entry per member."""
    S = as_coalition(S)
    vec = CoalitionValuer(ch, cfg)(S)
    return set(vec) == set(S)


def _projection(G: Coalition, label: dict[int, int], K: int) -> list[Coalition]:
    """Pieces of ``G`` cut along the partition; inadmissible pieces fall apart into singletons."""
    pieces: dict[int, list[int]] = {}
    for j in G:
        pieces.setdefault(label[j], []).append(j)
    out = []
    for piece in pieces.values():
        if admissible_size(len(piece), K):
            out.append(tuple(piece))
        else:
            out.extend((j,) for j in piece)
    return out


def find_dc_stable(ch: ChannelState, cfg: SimConfig,
                   engine: FormationEngine | None = None) -> Partition | None:
    """Exhaustively search for the strongly stable partition; ``None`` if none exists.

    A partition qualifies when
      (i)  each block is strictly Pareto-preferred by its members to every
           admissible split of it, and
      (ii) every admissible coalition G straddling several blocks is strictly
           worse for its members than G cut along the blocks (pieces too small
           to null the eavesdroppers count as singletons).
    """
    n = ch.n_users
    if n > cfg.max_dc_users:
        raise CombinatorialLimitError(f"instance too large: {n} users > cap {cfg.max_dc_users}")
    engine = engine or FormationEngine(ch, cfg)
    value, K = engine.value, engine.K

    block_ok_cache: dict[Coalition, bool] = {}

    def block_ok(B: Coalition) -> bool:
        ok = block_ok_cache.get(B)
        if ok is None:
            if len(B) == 1:
                ok = True
            elif not admissible_size(len(B), K) or engine.diameter(B) >= engine.d_max:
                ok = False
            else:
                vB = value(B)
                ok = all(pareto_dominates(vB, payoffs_of(split, value))
                         for split in admissible_splits(B, K))
            block_ok_cache[B] = ok
        return ok

    multi = [G for size in range(K + 1, n + 1) for G in combinations(range(n), size)]

    def in_range(block):
        return len(block) < 2 or engine.diameter(tuple(block)) < engine.d_max

    for blocks in partitions(range(n), can_grow=in_range):
        T = make_partition(blocks)
        if not all(block_ok(B) for B in T):
            continue
        label = {j: b for b, B in enumerate(T) for j in B}
        qualified = True
        for G in multi:
            if len({label[j] for j in G}) == 1:
                continue
            if not pareto_dominates(payoffs_of(_projection(G, label, K), value), value(G)):
                qualified = False
                break
        if qualified:
            return T
    return None


def stability_report(P, ch: ChannelState, cfg: SimConfig, with_dc: bool | None = None
                     ) -> StabilityReport:
    """D_hp check of ``P`` plus, on small networks, comparison with the strongly stable partition."""
    engine = FormationEngine(ch, cfg)
    report = is_dhp_stable(P, ch, cfg, engine)
    if with_dc is None:
        with_dc = ch.n_users <= cfg.max_dc_users
    if with_dc:
        dc = find_dc_stable(ch, cfg, engine)
        report.dc_partition = dc
        if dc is not None:
            report.algorithm_matches_dc = make_partition(P) == dc
    return report

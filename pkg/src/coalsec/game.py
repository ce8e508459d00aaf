"""Merge-and-split coalition formation under the Pareto order.

A partition is a tuple of coalitions (sorted tuples of user ids), itself
sorted by lowest member. The engine runs the distributed rules as a
deterministic sequential schedule: every sweep lets each coalition attempt
merges with its discovered neighbors, then lets each coalition attempt a
split, until a sweep changes nothing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from coalsec.channel import ChannelState, SimConfig, max_exchange_distance
from coalsec.secrecy import NEG_INFINITY, CoalitionValuer, admissible_size, as_coalition

Coalition = tuple[int, ...]
Partition = tuple[Coalition, ...]
Valuation = Callable[[Coalition], Mapping[int, float]]


class PartitionError(ValueError):
    pass


class NonTerminationError(RuntimeError):
    pass


class CombinatorialLimitError(RuntimeError):
    pass


def make_partition(coalitions: Iterable[Iterable[int]], n_users: int | None = None) -> Partition:
    """Normalize and validate a collection of disjoint coalitions.

    With ``n_users`` given, also checks that the coalitions span ``0..n_users-1``.
    """
    out = tuple(sorted(as_coalition(c) for c in coalitions))
    seen: set[int] = set()
    for c in out:
        if seen.intersection(c):
            raise PartitionError(f"coalitions overlap: {sorted(seen.intersection(c))}")
        seen.update(c)
    if n_users is not None and seen != set(range(n_users)):
        raise PartitionError(f"partition does not span users 0..{n_users - 1}")
    return out


def singletons(n_users: int) -> Partition:
    return tuple((i,) for i in range(n_users))


def players(collection: Iterable[Coalition]) -> set[int]:
    return {j for c in collection for j in c}


def payoffs_of(collection: Iterable[Coalition], value: Valuation) -> dict[int, float]:
    out: dict[int, float] = {}
    for c in collection:
        out.update(value(c))
    return out


def pareto_dominates(new: Mapping[int, float], old: Mapping[int, float]) -> bool:
    """True iff nobody is worse off under ``new`` and somebody is strictly better.

    ``-inf`` payoffs compare below every finite value and equal to each other.
    """
    strict = False
    for j, before in old.items():
        after = new[j]
        if after < before:
            return False
        if after > before:
            strict = True
    return strict


def pareto_preferred(R: Iterable[Iterable[int]], S: Iterable[Iterable[int]], value: Valuation) -> bool:
    """Pareto order between two collections partitioning the same players."""
    R = [as_coalition(c) for c in R]
    S = [as_coalition(c) for c in S]
    if players(R) != players(S):
        raise PartitionError("collections must partition the same set of players")
    return pareto_dominates(payoffs_of(R, value), payoffs_of(S, value))


@dataclass(frozen=True)
class FormationEvent:
    round: int
    sweep: int
    kind: str  # "merge" or "split"
    before: tuple[Coalition, ...]
    after: tuple[Coalition, ...]
    payoff_before: dict[int, float]
    payoff_after: dict[int, float]

    def to_json(self) -> str:
        def enc(d):
            return {str(k): (None if v == float("-inf") else v) for k, v in sorted(d.items())}

        return json.dumps({
            "round": self.round, "sweep": self.sweep, "type": self.kind,
            "actors": [list(c) for c in self.before],
            "result": [list(c) for c in self.after],
            "payoff_before": enc(self.payoff_before),
            "payoff_after": enc(self.payoff_after),
        }, sort_keys=True)


@dataclass
class FormationTrace:
    events: list[FormationEvent] = field(default_factory=list)
    sweeps: int = 0

    def __len__(self):
        return len(self.events)

    def __iter__(self) -> Iterator[FormationEvent]:
        return iter(self.events)

    def replay(self, initial: Partition) -> Partition:
        """Apply every event to ``initial`` and return the resulting partition."""
        current = set(make_partition(initial))
        for ev in self.events:
            missing = set(ev.before) - current
            if missing:
                raise PartitionError(f"event refers to absent coalitions {sorted(missing)}")
            current -= set(ev.before)
            current |= set(ev.after)
        return make_partition(current)

    def to_jsonl(self) -> str:
        """One JSON object per line; ``-inf`` payoffs are written as ``null``."""
        return "".join(ev.to_json() + "\n" for ev in self.events)


@dataclass
class RoundOutcome:
    partition: Partition
    payoffs: dict[int, float]
    trace: FormationTrace


class FormationEngine:
    """Coalition formation for one channel state.

    ``order`` overrides ``cfg.sweep_order``; ``order_seed`` seeds the
    ``"random"`` order (a fresh permutation every sweep).
    """

    def __init__(self, ch: ChannelState, cfg: SimConfig, order: str | None = None,
                 order_seed: int = 0, value: CoalitionValuer | None = None):
        self.ch = ch
        self.cfg = cfg
        self.K = cfg.n_eavesdroppers
        if ch.g.shape[1] != self.K:
            raise ValueError("channel state and config disagree on the number of eavesdroppers")
        self.value = value if value is not None else CoalitionValuer(ch, cfg)
        self.d_max = max_exchange_distance(cfg)
        self.order = order or cfg.sweep_order
        self._rng = np.random.default_rng(order_seed)
        self._dist = ch.user_dist
        self._diam: dict[Coalition, float] = {}
        self.round_index = 0

    # -- geometry -----------------------------------------------------------

    def diameter(self, S: Coalition) -> float:
        d = self._diam.get(S)
        if d is None:
            idx = np.asarray(S)
            d = float(self._dist[np.ix_(idx, idx)].max()) if len(S) > 1 else 0.0
            self._diam[S] = d
        return d

    def cross_distance(self, A: Coalition, B: Coalition) -> float:
        return float(self._dist[np.ix_(np.asarray(A), np.asarray(B))].max())

    def can_merge(self, A: Coalition, B: Coalition) -> bool:
        """Every member of ``A | B`` could still afford the exchange broadcast."""
        return max(self.diameter(A), self.diameter(B), self.cross_distance(A, B)) < self.d_max

    def discover_neighbors(self, T: Coalition, P: Partition) -> list[Coalition]:
        T = as_coalition(T)
        return [C for C in P if C != T and self.can_merge(T, C)]

    # -- rules --------------------------------------------------------------

    def merge_candidates(self, T: Coalition, neighbors: Sequence[Coalition]
                         ) -> Iterator[tuple[Coalition, ...]]:
        """Groups of neighbors that ``T`` could absorb together.

        Ordered by number of neighbors, then lexicographically by neighbor
        (neighbors are sorted by lowest member). Only groups whose union with
        ``T`` stays within the exchange range are produced.
        """
        n = len(neighbors)
        compat = [[j > i and self.cross_distance(neighbors[i], neighbors[j]) < self.d_max
                   for j in range(n)] for i in range(n)]
        level = [(i,) for i in range(n)]
        while level:
            for combo in level:
                yield tuple(neighbors[i] for i in combo)
            level = [combo + (j,) for combo in level for j in range(combo[-1] + 1, n)
                     if all(compat[i][j] for i in combo)]

    def _first_merge(self, T: Coalition, P: Partition) -> tuple[Coalition, ...] | None:
        neighbors = self.discover_neighbors(T, P)
        if not neighbors:
            return None
        old_T = self.value(T)
        size_T = len(T)
        for group in self.merge_candidates(T, neighbors):
            if size_T + sum(len(c) for c in group) <= self.K:
                continue
            merged = as_coalition(players((T,) + group))
            old = dict(old_T)
            for c in group:
                old.update(self.value(c))
            if pareto_dominates(self.value(merged), old):
                return group
        return None

    def try_merge(self, T: Coalition, P: Partition, sweep: int = 0,
                  trace: FormationTrace | None = None) -> tuple[Partition, bool]:
        """Let ``T`` absorb neighbors while some merge is Pareto-preferred."""
        current = as_coalition(T)
        P = tuple(P)
        if current not in P:
            raise PartitionError(f"{current} is not a coalition of the partition")
        changed = False
        while True:
            group = self._first_merge(current, P)
            if group is None:
                return P, changed
            before = (current,) + group
            merged = as_coalition(players(before))
            if trace is not None:
                trace.events.append(FormationEvent(
                    self.round_index, sweep, "merge", tuple(sorted(before)), (merged,),
                    payoffs_of(before, self.value), dict(self.value(merged))))
            P = make_partition([C for C in P if C not in before] + [merged])
            current = merged
            changed = True

    def try_split(self, S: Coalition, sweep: int = 0,
                  trace: FormationTrace | None = None) -> tuple[tuple[Coalition, ...], bool]:
        """First admissible split of ``S`` that its members prefer, if any.

        Splits are tried with the fewest blocks first, then in lexicographic
        order; see :class:`SplitSearch` for how the search is pruned.
        """
        S = as_coalition(S)
        if len(S) == 1:
            return (S,), False
        if len(S) > self.cfg.max_split_size:
            raise CombinatorialLimitError(
                f"coalition of size {len(S)} exceeds split enumeration cap {self.cfg.max_split_size}")
        old = self.value(S)
        blocks = SplitSearch(self, S, old).first()
        if blocks is None:
            return (S,), False
        if trace is not None:
            trace.events.append(FormationEvent(
                self.round_index, sweep, "split", (S,), blocks, dict(old),
                payoffs_of(blocks, self.value)))
        return blocks, True

    # -- schedule -----------------------------------------------------------

    def _ordered(self, P: Partition) -> list[Coalition]:
        if self.order == "ascending":
            return list(P)
        if self.order == "descending":
            return list(reversed(P))
        perm = self._rng.permutation(len(P))
        return [P[k] for k in perm]

    def merge_split_until_stable(self, P: Partition) -> tuple[Partition, FormationTrace]:
        P = make_partition(P, self.ch.n_users)
        for C in P:
            if not admissible_size(len(C), self.K):
                raise PartitionError(f"coalition {C} violates the more-than-K rule")
        trace = FormationTrace()
        for sweep in range(self.cfg.max_sweeps):
            changed = False
            for T in self._ordered(P):
                if T in P:
                    P, c = self.try_merge(T, P, sweep, trace)
                    changed |= c
            after = []
            for T in self._ordered(P):
                blocks, c = self.try_split(T, sweep, trace)
                after.extend(blocks)
                changed |= c
            P = make_partition(after)
            trace.sweeps = sweep + 1
            if not changed:
                return P, trace
        raise NonTerminationError(
            f"non-termination: merge-and-split still changing after {self.cfg.max_sweeps} sweeps")

    def payoffs(self, P: Partition) -> dict[int, float]:
        return dict(sorted(payoffs_of(P, self.value).items()))

    def run_round(self, P: Partition | None = None) -> RoundOutcome:
        """Discovery, merge-and-split to convergence, then one slot per user."""
        if P is None:
            P = singletons(self.ch.n_users)
        final, trace = self.merge_split_until_stable(P)
        outcome = RoundOutcome(final, self.payoffs(final), trace)
        self.round_index += 1
        return outcome


# Functional front end mirroring the engine methods.

def discover_neighbors(T, P, ch: ChannelState, cfg: SimConfig) -> list[Coalition]:
    return FormationEngine(ch, cfg).discover_neighbors(as_coalition(T), make_partition(P))


def try_merge(T, P, ch: ChannelState, cfg: SimConfig) -> tuple[Partition, bool]:
    return FormationEngine(ch, cfg).try_merge(as_coalition(T), make_partition(P))


def try_split(S, ch: ChannelState, cfg: SimConfig) -> tuple[tuple[Coalition, ...], bool]:
    return FormationEngine(ch, cfg).try_split(as_coalition(S))


def merge_split_until_stable(P, ch: ChannelState, cfg: SimConfig, **engine_kw
                             ) -> tuple[Partition, FormationTrace]:
    return FormationEngine(ch, cfg, **engine_kw).merge_split_until_stable(P)


def run_round(P, ch: ChannelState, cfg: SimConfig, **engine_kw) -> RoundOutcome:
    return FormationEngine(ch, cfg, **engine_kw).run_round(P)


class SplitSearch:
    """Branch-and-bound search for the first Pareto-preferred split of ``S``.

    A split is preferred iff every block leaves each of its members at
    least as well off as in ``S`` and somebody strictly better. Blocks are
    built member by member; a partial block is abandoned as soon as some
    member provably cannot reach its current payoff in any completion.

    The bound for member j in a multi-user block drawn from a pool X is
    ``(0.5*log2(1 + (P - pbar(d)) * nulled(X, m_j) / s2) - leak_j(pbar(d)))+``
    where ``nulled(X, m)`` is the destination energy left after projecting out
    the eavesdropper channels of X (it only grows with X) and ``d`` is a lower
    bound on j's distance to its farthest partner: the farthest member already
    placed with j, or j's K-th nearest neighbour in X.
    Members are handled as bit positions so pools can be cached by mask.
    """

    def __init__(self, engine: FormationEngine, S: Coalition, old: Mapping[int, float]):
        self.engine = engine
        self.S = S
        self.value = engine.value
        self.K = engine.K
        cfg, ch = engine.cfg, engine.ch
        self.cfg = cfg
        idx = np.asarray(S)
        self.n = len(S)
        self.dest = ch.assignment[idx]
        self.h = ch.h[idx]  # member x destination
        self.g = ch.g[idx]
        dist = ch.user_dist[np.ix_(idx, idx)]
        self.dist = dist.tolist()
        self._near = [sorted((self.dist[k][j], j) for j in range(self.n) if j != k)
                      for k in range(self.n)]
        self.eve = engine.value._eve_gain[idx].tolist()
        self.dest = self.dest.tolist()
        self.P, self.sigma2, self.mu = cfg.slot_power, cfg.noise_power, cfg.pathloss_exp
        self._out: dict[tuple[int, int], bool] = {}
        self._block_cache: dict[int, tuple[list[list[int]], Iterator[list[int]]]] = {}
        self._dead: set[tuple[int, int]] = set()
        self.single = engine.value.singleton[idx].tolist()
        self.target = [old[u] for u in S]
        self.coef = cfg.exchange_snr * cfg.noise_power
        self._nulled: dict[tuple[int, int], float] = {}
        self._acc: dict[int, bool] = {}

    # -- bounds ---------------------------------------------------------------

    def nulled(self, mask: int, m: int) -> float:
        key = (mask, m)
        val = self._nulled.get(key)
        if val is None:
            idx = [k for k in range(self.n) if mask >> k & 1]
            if len(idx) <= self.K:
                val = 0.0
            else:
                G = np.vstack([self.h[idx, m][None, :], self.g[idx].T])
                gram = G @ G.conj().T
                try:
                    inv00 = np.linalg.solve(gram, np.eye(self.K + 1)[:, 0])[0].real
                    val = 1.0 / inv00 if inv00 > 0 else float(gram[0, 0].real)
                except np.linalg.LinAlgError:
                    val = float(gram[0, 0].real)
                # the nulled energy never exceeds the raw energy
                val = min(val, float(gram[0, 0].real))
            self._nulled[key] = val
        return val

    def _kth_nearest(self, k: int, pool: int) -> float:
        need = self.K
        for d, j in self._near[k]:
            if pool >> j & 1:
                need -= 1
                if need == 0:
                    return d
        return math.inf

    def _bound(self, k: int, pool: int, far: float) -> float:
        far = max(far, self._kth_nearest(k, pool))
        if far == math.inf:
            return NEG_INFINITY
        pbar = self.coef * far**self.mu
        power = self.P - pbar
        if power <= 0.0:
            return NEG_INFINITY
        gain = 0.5 * math.log2(1 + power * self.nulled(pool, self.dest[k]) / self.sigma2)
        leak = 0.5 * math.log2(1 + pbar * self.eve[k] / self.sigma2)
        return max(gain - leak, 0.0)

    @staticmethod
    def _short(bound: float, target: float) -> bool:
        # slack absorbs rounding differences between the bound and the valuer
        return bound * (1 + 1e-9) + 1e-12 < target

    def _hopeful_in(self, prefix: list[int], pool: int) -> bool:
        """Can every prefix member be satisfied by some multi-user block within ``pool``?"""
        for k in prefix:
            far = max(self.dist[k][j] for j in prefix)
            if self._short(self._bound(k, pool, far), self.target[k]):
                return False
        return True

    def _hopeful_out(self, k: int, pool: int) -> bool:
        """Can member k be satisfied alone or in some block drawn from ``pool``?"""
        if self.single[k] >= self.target[k]:
            return True
        key = (k, pool)
        ok = self._out.get(key)
        if ok is None:
            ok = not self._short(self._bound(k, pool, 0.0), self.target[k])
            self._out[key] = ok
        return ok

    def _acceptable(self, block: list[int]) -> bool:
        if len(block) == 1:
            return self.single[block[0]] >= self.target[block[0]]
        if len(block) <= self.K:
            return False
        mask = sum(1 << k for k in block)
        ok = self._acc.get(mask)
        if ok is None:
            vals = self.value(tuple(self.S[k] for k in block))
            ok = all(vals[self.S[k]] >= self.target[k] for k in block)
            self._acc[mask] = ok
        return ok

    # -- search ---------------------------------------------------------------

    @staticmethod
    def _fits(n: int, blocks: int, K: int) -> bool:
        # n items into `blocks` blocks of size 1 or > K
        return n == blocks or (blocks >= 1 and n >= blocks + K)

    def _blocks(self, R: list[int]) -> Iterator[list[int]]:
        """Acceptable blocks containing R[0], in lexicographic order."""
        full = sum(1 << k for k in R)

        def rec(prefix, prefix_mask, start):
            remaining = full & ~prefix_mask
            for x in R[1:start]:
                if not prefix_mask >> x & 1 and not self._hopeful_out(x, remaining):
                    return
            if self._acceptable(prefix):
                yield list(prefix)
            if start >= len(R):
                return
            pool = prefix_mask | sum(1 << x for x in R[start:])
            if not self._hopeful_in(prefix, pool):
                return
            for pos in range(start, len(R)):
                x = R[pos]
                prefix.append(x)
                yield from rec(prefix, prefix_mask | 1 << x, pos + 1)
                prefix.pop()

        yield from rec([R[0]], 1 << R[0], 1)

    def _block_list(self, R: list[int]) -> Iterator[list[int]]:
        """``_blocks(R)`` memoized lazily: blocks are generated only as far as consumed."""
        mask = sum(1 << x for x in R)
        entry = self._block_cache.get(mask)
        if entry is None:
            entry = self._block_cache[mask] = ([], self._blocks(R))
        seen, gen = entry
        pos = 0
        while True:
            if pos < len(seen):
                yield seen[pos]
                pos += 1
                continue
            block = next(gen, None)
            if block is None:
                return
            seen.append(block)

    def _search(self, R: list[int], blocks_left: int, chosen: list[list[int]]):
        if blocks_left == 1:
            if self._acceptable(R):
                yield chosen + [R]
            return
        key = (sum(1 << x for x in R), blocks_left)
        if key in self._dead:
            return
        found = False
        for block in self._block_list(R):
            rest = [x for x in R if x not in block]
            if not rest or not self._fits(len(rest), blocks_left - 1, self.K):
                continue
            for split in self._search(rest, blocks_left - 1, chosen + [block]):
                found = True
                yield split
        if not found:
            self._dead.add(key)

    def _payoff(self, block: list[int], k: int) -> float:
        if len(block) == 1:
            return self.single[k]
        return self.value(tuple(self.S[j] for j in block))[self.S[k]]

    def first(self) -> tuple[Coalition, ...] | None:
        members = list(range(self.n))
        for b in range(2, self.n + 1):
            if not self._fits(self.n, b, self.K):
                continue
            for split in self._search(members, b, []):
                if any(self._payoff(block, k) > self.target[k] for block in split for k in block):
                    return tuple(tuple(self.S[k] for k in block) for block in split)
        return None

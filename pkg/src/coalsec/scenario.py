"""Random drops, Monte Carlo sweeps over network size, and mobility runs."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from coalsec.channel import ChannelState, Deployment, SimConfig, build_channel_state
from coalsec.game import FormationEngine, FormationEvent, Partition, singletons


def random_deployment(cfg: SimConfig, rng) -> Deployment:
    """Users, destinations and eavesdroppers uniform on the square; nearest-destination assignment."""
    rng = np.random.default_rng(rng)
    side = cfg.area_side
    while True:
        users = rng.uniform(0.0, side, size=(cfg.n_users, 2))
        dests = rng.uniform(0.0, side, size=(cfg.n_destinations, 2))
        eves = rng.uniform(0.0, side, size=(cfg.n_eavesdroppers, 2))
        pts = np.vstack([users, dests, eves])
        if len(np.unique(pts, axis=0)) == len(pts):
            return Deployment.nearest(users, dests, eves)


def drop_seed(base_seed: int, n_users: int, drop: int) -> int:
    """Seed of drop ``drop`` at network size ``n_users``, derived from the run seed."""
    return int(np.random.SeedSequence([base_seed, n_users, drop]).generate_state(1)[0])


def drop_channel(cfg: SimConfig) -> ChannelState:
    rng = np.random.default_rng(cfg.rng_seed)
    dep = random_deployment(cfg, rng)
    return build_channel_state(dep, cfg, rng)


@dataclass
class MetricsRecord:
    n_users: int
    drop: int
    avg_coop_utility: float
    avg_noncoop_utility: float
    improvement_pct: float
    size_histogram: dict[int, int]
    sweeps: int
    partition: Partition = field(repr=False, default=())
    coop_payoffs: dict[int, float] = field(repr=False, default_factory=dict)
    noncoop_payoffs: dict[int, float] = field(repr=False, default_factory=dict)

    @property
    def grand_coalition(self) -> bool:
        return self.n_users > 1 and len(self.partition) == 1


def improvement(coop: float, noncoop: float) -> float:
    if noncoop > 0:
        return 100.0 * (coop - noncoop) / noncoop
    return 0.0 if coop == noncoop else math.inf


def run_simulation(cfg: SimConfig, drop: int = 0, ch: ChannelState | None = None,
                   engine_kw: dict | None = None) -> MetricsRecord:
    """One drop: channels from ``cfg.rng_seed``, formation from all singletons, averages."""
    if ch is None:
        ch = drop_channel(cfg)
    engine = FormationEngine(ch, cfg, **(engine_kw or {}))
    outcome = engine.run_round(singletons(ch.n_users))
    noncoop = {i: float(engine.value.singleton[i]) for i in range(ch.n_users)}
    coop = outcome.payoffs
    avg_c = float(np.mean(list(coop.values())))
    avg_n = float(np.mean(list(noncoop.values())))
    hist = Counter(len(c) for c in outcome.partition)
    return MetricsRecord(ch.n_users, drop, avg_c, avg_n, improvement(avg_c, avg_n),
                         dict(sorted(hist.items())), outcome.trace.sweeps,
                         outcome.partition, coop, noncoop)


@dataclass
class SweepRow:
    n_users: int
    drops: int
    mean_coop: float
    stderr_coop: float
    mean_noncoop: float
    stderr_noncoop: float
    improvement_pct: float
    grand_coalition_rate: float
    mean_sweeps: float
    mean_coalition_size: float


def _stderr(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def aggregate(records: Sequence[MetricsRecord]) -> SweepRow:
    """Mean and standard error over drops; improvement is the ratio of the two means."""
    coop = np.array([r.avg_coop_utility for r in records])
    non = np.array([r.avg_noncoop_utility for r in records])
    sizes = [len(c) for r in records for c in r.partition]
    return SweepRow(
        n_users=records[0].n_users, drops=len(records),
        mean_coop=float(coop.mean()), stderr_coop=_stderr(coop),
        mean_noncoop=float(non.mean()), stderr_noncoop=_stderr(non),
        improvement_pct=improvement(float(coop.mean()), float(non.mean())),
        grand_coalition_rate=float(np.mean([r.grand_coalition for r in records])),
        mean_sweeps=float(np.mean([r.sweeps for r in records])),
        mean_coalition_size=float(np.mean(sizes)) if sizes else 0.0,
    )


def _drop_task(args):
    cfg, drop = args
    return run_simulation(cfg, drop)


def drop_records(cfg: SimConfig, n_users: int, drops: int, workers: int = 1) -> list[MetricsRecord]:
    """Independent seeded drops at one network size, ordered by drop index."""
    tasks = [(replace(cfg, n_users=n_users, rng_seed=drop_seed(cfg.rng_seed, n_users, d)), d)
             for d in range(drops)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_drop_task, tasks, chunksize=max(1, drops // (4 * workers))))
    return [_drop_task(t) for t in tasks]


def sweep(cfg: SimConfig, n_values: Iterable[int], drops_per_n: int, workers: int = 1
          ) -> list[SweepRow]:
    if drops_per_n < 1:
        raise ValueError("drops_per_n must be at least 1")
    return [aggregate(drop_records(cfg, n, drops_per_n, workers)) for n in n_values]


# -- mobility -----------------------------------------------------------------

@dataclass(frozen=True)
class MobilityTrace:
    """Piecewise-linear user paths; users without waypoints stay put.

    ``waypoints[user]`` is a list of ``(time_s, (x, y))`` with strictly
    increasing times. Formation is re-run every ``period`` seconds from
    ``start`` until ``end`` inclusive.
    """

    waypoints: dict[int, list[tuple[float, tuple[float, float]]]]
    period: float
    start: float = 0.0
    end: float | None = None

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("re-formation period must be positive")
        for user, pts in self.waypoints.items():
            times = [t for t, _ in pts]
            if not pts:
                raise ValueError(f"user {user}: empty waypoint list")
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError(f"user {user}: waypoint times must be strictly increasing")

    @property
    def stop(self) -> float:
        if self.end is not None:
            return self.end
        return max((pts[-1][0] for pts in self.waypoints.values()), default=self.start)

    def instants(self) -> list[float]:
        n = int(math.floor((self.stop - self.start) / self.period + 1e-9))
        return [self.start + k * self.period for k in range(n + 1)]

    def position(self, user: int, t: float, default) -> np.ndarray:
        pts = self.waypoints.get(user)
        if not pts:
            return np.asarray(default, dtype=float)
        times = np.array([p[0] for p in pts])
        xy = np.array([p[1] for p in pts], dtype=float)
        return np.array([np.interp(t, times, xy[:, 0]), np.interp(t, times, xy[:, 1])])

    def positions_at(self, t: float, base: np.ndarray) -> np.ndarray:
        return np.array([self.position(i, t, base[i]) for i in range(len(base))])

    def check_area(self, side: float) -> None:
        for user, pts in self.waypoints.items():
            for _, (x, y) in pts:
                if not (0 <= x <= side and 0 <= y <= side):
                    raise ValueError(f"user {user}: waypoint ({x}, {y}) outside the area")


@dataclass
class MobilitySnapshot:
    time: float
    user_pos: np.ndarray
    partition: Partition
    payoffs: dict[int, float]
    events: list[FormationEvent]


def run_mobility(cfg: SimConfig, trace: MobilityTrace, deployment: Deployment | None = None,
                 ) -> list[MobilitySnapshot]:
    """Re-run formation at every instant of ``trace``, starting from the previous partition.

    Phases are redrawn from ``cfg.rng_seed`` at each instant, so every link
    keeps its phase and only geometry changes. Destinations are re-assigned
    to the nearest one as users move.
    """
    if deployment is None:
        deployment = random_deployment(cfg, np.random.default_rng(cfg.rng_seed))
    trace.check_area(cfg.area_side)
    base = deployment.user_pos
    P = singletons(deployment.n_users)
    out = []
    for r, t in enumerate(trace.instants()):
        dep = deployment.with_user_positions(trace.positions_at(t, base))
        ch = build_channel_state(dep, cfg, cfg.rng_seed)
        engine = FormationEngine(ch, cfg)
        engine.round_index = r
        outcome = engine.run_round(P)
        P = outcome.partition
        out.append(MobilitySnapshot(t, dep.user_pos, P, outcome.payoffs, outcome.trace.events))
    return out

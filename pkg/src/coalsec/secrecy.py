"""Per-coalition physics: secrecy capacities, exchange costs, nulling beamformer.

Payoff vectors are plain ``{user: payoff}`` dicts. A member that cannot
take part in the coalition (all its slot power goes to information
exchange, or the nulling problem is numerically singular) gets
``NEG_INFINITY``. It is a real ``-inf`` so ordinary comparisons rank it
below every finite payoff, but it is never fed into arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from coalsec.channel import ChannelState, SimConfig

NEG_INFINITY = float("-inf")


class CoalitionSizeError(ValueError):
    """Coalition too small to null every eavesdropper (needs more than K members)."""


class InfeasibleBeamformingError(ArithmeticError):
    pass


def as_coalition(members: Iterable[int]) -> tuple[int, ...]:
    """Canonical coalition: sorted tuple of distinct user ids."""
    out = tuple(sorted(set(int(m) for m in members)))
    if not out:
        raise ValueError("coalition must be non-empty")
    return out


def admissible_size(size: int, K: int) -> bool:
    return size == 1 or size > K


def _log2p(snr: float) -> float:
    return math.log2(1.0 + snr)


def noncoop_secrecy_capacity(i: int, ch: ChannelState, cfg: SimConfig) -> float:
    """Secrecy capacity of user ``i`` transmitting alone at full power over its whole slot."""
    m = ch.assignment[i]
    scale = cfg.slot_power / cfg.noise_power
    c_dest = _log2p(scale * abs(ch.h[i, m]) ** 2)
    c_eve = max(_log2p(scale * abs(gk) ** 2) for gk in ch.g[i])
    return max(c_dest - c_eve, 0.0)


def _farthest_q(i: int, S, ch: ChannelState) -> float:
    return min(ch.q[i, j] for j in S if j != i)


def exchange_power(i: int, S, ch: ChannelState, cfg: SimConfig) -> float:
    """Power user ``i`` spends broadcasting its data to the farthest member of ``S``."""
    S = as_coalition(S)
    if i not in S:
        raise ValueError(f"user {i} is not a member of {S}")
    if len(S) == 1:
        return 0.0
    return cfg.exchange_snr * cfg.noise_power / _farthest_q(i, S, ch)


def remaining_power(i: int, S, ch: ChannelState, cfg: SimConfig) -> float:
    return max(cfg.slot_power - exchange_power(i, S, ch, cfg), 0.0)


@dataclass(frozen=True)
class BeamformingSolution:
    weights: np.ndarray
    beta: float
    data_power: float
    feasible: bool
    condition: float = math.nan


def nulling_matrix(i: int, S, ch: ChannelState) -> np.ndarray:
    """The (K+1) x |S| matrix mapping member weights to received amplitudes.

    Row 0 holds every member's channel to the slot owner's destination
    ``m_i`` (all members relay toward it); row k holds the channels to
    eavesdropper k. ``G @ w`` is what each of them receives.
    """
    idx = np.asarray(S)
    m = ch.assignment[i]
    return np.vstack([ch.h[idx, m][None, :], ch.g[idx, :].T])


def beamforming_weights(i: int, S, ch: ChannelState, cfg: SimConfig) -> BeamformingSolution:
    """Weights maximizing the SNR at ``m_i`` under exact nulls toward every eavesdropper.

    ``w = beta * G^H (G G^H)^-1 e`` with ``beta`` set so that ``||w||^2``
    equals the power left after information exchange. Then ``G w = beta e``.
    """
    S = as_coalition(S)
    K = ch.g.shape[1]
    if len(S) <= K:
        raise CoalitionSizeError(
            f"coalition too small to null {K} eavesdroppers: |S|={len(S)}")
    if i not in S:
        raise ValueError(f"user {i} is not a member of {S}")
    power = remaining_power(i, S, ch, cfg)
    G = nulling_matrix(i, S, ch)
    gram = G @ G.conj().T
    cond = float(np.linalg.cond(gram))
    zero = np.zeros(len(S), dtype=complex)
    if not cond <= cfg.singular_threshold or power <= 0.0:
        return BeamformingSolution(zero, 0.0, power, False, cond)
    e = np.zeros(K + 1, dtype=complex)
    e[0] = 1.0
    x = np.linalg.solve(gram, e)
    beta = math.sqrt(power / x[0].real)
    w = beta * (G.conj().T @ x)
    return BeamformingSolution(w, beta, power, True, cond)


def coop_secrecy_capacity(i: int, S, ch: ChannelState, cfg: SimConfig) -> float:
    """Half-slot secrecy capacity of user ``i`` when ``S`` beamforms its data with eavesdropper nulls."""
    sol = beamforming_weights(i, S, ch, cfg)
    if not sol.feasible:
        raise InfeasibleBeamformingError(f"no nulling beamformer for user {i} in {tuple(S)}")
    # w^H R w with R = h h^H, h the conjugated destination row
    h_s = nulling_matrix(i, as_coalition(S), ch)[0].conj()
    R = np.outer(h_s, h_s.conj())
    quad = float(np.real(sol.weights.conj() @ R @ sol.weights))
    return 0.5 * _log2p(quad / cfg.noise_power)


def exchange_leakage_cost(i: int, S, ch: ChannelState, cfg: SimConfig) -> float:
    """Secrecy lost to the best-placed eavesdropper while ``i`` broadcasts inside ``S``."""
    p_bar = exchange_power(i, S, ch, cfg)
    if p_bar == 0.0:
        return 0.0
    return max(0.5 * _log2p(p_bar * abs(gk) ** 2 / cfg.noise_power) for gk in ch.g[i])


@dataclass(frozen=True)
class MemberValue:
    """Breakdown of one member's payoff: ``payoff = (gain - cost)+`` unless infeasible."""

    payoff: float
    gain: float
    cost: float
    data_power: float
    exchange_power: float


def value_breakdown(S, ch: ChannelState, cfg: SimConfig) -> dict[int, MemberValue]:
    S = as_coalition(S)
    K = ch.g.shape[1]
    if not admissible_size(len(S), K):
        raise CoalitionSizeError(f"size violates the more-than-K rule: |S|={len(S)}, K={K}")
    if len(S) == 1:
        (i,) = S
        c = noncoop_secrecy_capacity(i, ch, cfg)
        return {i: MemberValue(c, c, 0.0, cfg.slot_power, 0.0)}
    out = {}
    for i in S:
        p_bar = exchange_power(i, S, ch, cfg)
        cost = exchange_leakage_cost(i, S, ch, cfg)
        power = max(cfg.slot_power - p_bar, 0.0)
        if power == 0.0:
            out[i] = MemberValue(NEG_INFINITY, 0.0, cost, 0.0, p_bar)
            continue
        try:
            gain = coop_secrecy_capacity(i, S, ch, cfg)
        except InfeasibleBeamformingError:
            out[i] = MemberValue(NEG_INFINITY, 0.0, cost, power, p_bar)
            continue
        out[i] = MemberValue(max(gain - cost, 0.0), gain, cost, power, p_bar)
    return out


def coalition_value(S, ch: ChannelState, cfg: SimConfig) -> dict[int, float]:
    """Payoff vector of coalition ``S``: one entry per member."""
    return {i: mv.payoff for i, mv in value_breakdown(S, ch, cfg).items()}


class CoalitionValuer:
    """Memoized, vectorized coalition values for one channel state.

    Computes the same payoffs as :func:`coalition_value` but solves only one
    Gram system per distinct destination in the coalition, since members
    sharing a destination share the nulling matrix and differ only in power.
    """

    def __init__(self, ch: ChannelState, cfg: SimConfig):
        self.ch = ch
        self.cfg = cfg
        self.K = ch.g.shape[1]
        self._cache: dict[tuple[int, ...], dict[int, float]] = {}
        snr = cfg.slot_power / cfg.noise_power
        dest = np.abs(ch.h[np.arange(ch.n_users), ch.assignment]) ** 2
        eve = (np.abs(ch.g) ** 2).max(axis=1)
        self.singleton = np.maximum(np.log2(1 + snr * dest) - np.log2(1 + snr * eve), 0.0)
        self._eve_gain = eve
        self.evaluations = 0

    def __call__(self, S) -> dict[int, float]:
        key = S if isinstance(S, tuple) else as_coalition(S)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._compute(key)
            self._cache[key] = hit
        return hit

    def payoff(self, i: int, S) -> float:
        return self(S)[i]

    def _compute(self, S: tuple[int, ...]) -> dict[int, float]:
        if len(S) == 1:
            return {S[0]: float(self.singleton[S[0]])}
        if len(S) <= self.K:
            raise CoalitionSizeError(f"size violates the more-than-K rule: |S|={len(S)}, K={self.K}")
        self.evaluations += 1
        ch, cfg = self.ch, self.cfg
        idx = np.asarray(S)
        sub_q = ch.q[np.ix_(idx, idx)]
        p_bar = cfg.exchange_snr * cfg.noise_power / sub_q.min(axis=1)
        power = cfg.slot_power - p_bar
        leak = 0.5 * np.log2(1 + p_bar * self._eve_gain[idx] / cfg.noise_power)

        g_rows = ch.g[idx, :].T
        dests = ch.assignment[idx]
        inv00 = {}
        for m in np.unique(dests):
            G = np.vstack([ch.h[idx, m][None, :], g_rows])
            gram = G @ G.conj().T
            eig = np.linalg.eigvalsh(gram)
            if eig[0] <= 0 or eig[-1] / eig[0] > cfg.singular_threshold:
                inv00[m] = None
                continue
            e = np.zeros(self.K + 1)
            e[0] = 1.0
            inv00[m] = np.linalg.solve(gram, e)[0].real

        out = {}
        for pos, i in enumerate(S):
            x = inv00[dests[pos]]
            if power[pos] <= 0.0 or x is None:
                out[i] = NEG_INFINITY
                continue
            gain = 0.5 * math.log2(1 + power[pos] / x / cfg.noise_power)
            out[i] = max(gain - float(leak[pos]), 0.0)
        return out

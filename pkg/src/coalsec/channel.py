"""Geometry, unit handling and line-of-sight channel tables.

All quantities are linear: positions in meters, powers in watts, SNRs as
plain ratios. Conversions from dBm/dB happen once, when a config file is
parsed (see :mod:`coalsec.cli`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np


class ConfigError(ValueError):
    """Raised for an invalid simulation parameter; names the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class CoincidentNodesError(ValueError):
    pass


SWEEP_ORDERS = ("ascending", "descending", "random")


@dataclass(frozen=True)
class SimConfig:
    n_users: int = 15
    n_destinations: int = 2
    n_eavesdroppers: int = 2
    area_side: float = 2500.0
    slot_power: float = 0.01
    noise_power: float = 1e-12
    exchange_snr: float = 10.0
    pathloss_exp: float = 3.0
    rng_seed: int = 0
    singular_threshold: float = 1e12
    numeric_tol: float = 1e-9
    # formation engine limits
    max_sweeps: int = 10_000
    max_split_size: int = 32
    max_subsets: int = 2**20
    max_dc_users: int = 12
    sweep_order: str = "ascending"

    def __post_init__(self):
        for name in ("n_users", "n_destinations"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be at least 1")
        if self.n_eavesdroppers < 2:
            raise ConfigError("n_eavesdroppers", "must be at least 2 (multiple eavesdroppers)")
        for name in ("area_side", "slot_power", "noise_power", "exchange_snr",
                     "singular_threshold", "numeric_tol"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(name, f"must be strictly positive and finite, got {value!r}")
        if not self.pathloss_exp >= 2:
            raise ConfigError("pathloss_exp", f"must be >= 2, got {self.pathloss_exp!r}")
        for name in ("max_sweeps", "max_split_size", "max_subsets", "max_dc_users"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be at least 1")
        if self.rng_seed < 0:
            raise ConfigError("rng_seed", "must be non-negative")
        if self.sweep_order not in SWEEP_ORDERS:
            raise ConfigError("sweep_order", f"must be one of {SWEEP_ORDERS}")

    @property
    def K(self) -> int:
        return self.n_eavesdroppers

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def channel_gain(pos_a, pos_b, mu: float, phi: float) -> complex:
    """Line-of-sight gain ``d**(-mu/2) * exp(j*phi)`` between two points."""
    d = math.dist(pos_a, pos_b)
    if d == 0:
        raise CoincidentNodesError(f"coincident nodes at {tuple(pos_a)}")
    return d ** (-mu / 2) * complex(math.cos(phi), math.sin(phi))


def max_exchange_distance(config: SimConfig) -> float:
    """Distance at which the information-exchange power equals the slot budget."""
    return (config.slot_power / (config.exchange_snr * config.noise_power)) ** (1.0 / config.pathloss_exp)


def exchange_power_at(distance: float, config: SimConfig) -> float:
    """Broadcast power needed to reach a partner ``distance`` meters away."""
    return config.exchange_snr * config.noise_power * distance**config.pathloss_exp


@dataclass(frozen=True)
class Deployment:
    user_pos: np.ndarray
    dest_pos: np.ndarray
    eve_pos: np.ndarray
    assignment: np.ndarray

    def __post_init__(self):
        for name in ("user_pos", "dest_pos", "eve_pos"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1, 2)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        assign = np.array(self.assignment, dtype=int).reshape(-1)
        if assign.shape[0] != self.user_pos.shape[0]:
            raise ValueError("assignment must give one destination per user")
        if assign.size and (assign.min() < 0 or assign.max() >= self.dest_pos.shape[0]):
            raise ValueError("assignment refers to a missing destination")
        assign.setflags(write=False)
        object.__setattr__(self, "assignment", assign)

    @classmethod
    def nearest(cls, user_pos, dest_pos, eve_pos) -> "Deployment":
        """Deployment with every user assigned to its closest destination (lowest index on ties)."""
        user_pos = np.asarray(user_pos, dtype=float).reshape(-1, 2)
        dest_pos = np.asarray(dest_pos, dtype=float).reshape(-1, 2)
        d = np.linalg.norm(user_pos[:, None, :] - dest_pos[None, :, :], axis=-1)
        return cls(user_pos, dest_pos, eve_pos, np.argmin(d, axis=1))

    @property
    def n_users(self) -> int:
        return self.user_pos.shape[0]

    def with_user_positions(self, user_pos, reassign: bool = True) -> "Deployment":
        if reassign:
            return Deployment.nearest(user_pos, self.dest_pos, self.eve_pos)
        return Deployment(user_pos, self.dest_pos, self.eve_pos, self.assignment)


@dataclass(frozen=True, eq=False)
class ChannelState:
    """Complex gains and path losses for one deployment.

    ``h[i, m]`` user i to destination m, ``g[i, k]`` user i to eavesdropper k,
    ``q[i, j] = d_ij**-mu`` between users (``inf`` on the diagonal).
    ``user_dist`` keeps the raw inter-user distances for diameter checks.
    """

    h: np.ndarray
    g: np.ndarray
    q: np.ndarray
    phases: dict
    assignment: np.ndarray
    user_dist: np.ndarray
    positions: Deployment | None = field(repr=False, default=None)

    @property
    def n_users(self) -> int:
        return self.h.shape[0]

    @classmethod
    def from_gains(cls, h, g, user_pos, assignment, pathloss_exp: float) -> "ChannelState":
        """Channel state with hand-picked gains; only inter-user path loss comes from geometry."""
        h = np.array(h, dtype=complex)
        g = np.array(g, dtype=complex)
        user_pos = np.asarray(user_pos, dtype=float).reshape(-1, 2)
        d = _pairwise(user_pos, user_pos)
        with np.errstate(divide="ignore"):
            q = d ** (-pathloss_exp)
        np.fill_diagonal(q, np.inf)
        return cls(h=h, g=g, q=q, phases={}, assignment=np.asarray(assignment, dtype=int),
                   user_dist=d)

    def __eq__(self, other):
        if not isinstance(other, ChannelState):
            return NotImplemented
        return (np.array_equal(self.h, other.h) and np.array_equal(self.g, other.g)
                and np.array_equal(self.q, other.q)
                and np.array_equal(self.assignment, other.assignment))


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))


def _los(d: np.ndarray, mu: float, phase: np.ndarray) -> np.ndarray:
    return d ** (-mu / 2) * np.exp(1j * phase)


def build_channel_state(dep: Deployment, cfg: SimConfig, rng) -> ChannelState:
    """Tabulate every gain of ``dep``; phases are i.i.d. uniform on [0, 2pi).

    ``rng`` is a seed or a :class:`numpy.random.Generator`. Phases for the
    destination links are drawn before the eavesdropper links, so the same
    seed always yields the same table.
    """
    rng = np.random.default_rng(rng)
    mu = cfg.pathloss_exp
    d_ud = _pairwise(dep.user_pos, dep.dest_pos)
    d_ue = _pairwise(dep.user_pos, dep.eve_pos)
    if np.any(d_ud == 0):
        i, m = np.argwhere(d_ud == 0)[0]
        raise CoincidentNodesError(f"coincident nodes: user {i} and destination {m}")
    if np.any(d_ue == 0):
        i, k = np.argwhere(d_ue == 0)[0]
        raise CoincidentNodesError(f"coincident nodes: user {i} and eavesdropper {k}")

    phi_h = rng.uniform(0.0, 2 * np.pi, size=d_ud.shape)
    phi_g = rng.uniform(0.0, 2 * np.pi, size=d_ue.shape)
    h = _los(d_ud, mu, phi_h)
    g = _los(d_ue, mu, phi_g)

    d_uu = _pairwise(dep.user_pos, dep.user_pos)
    off = ~np.eye(dep.n_users, dtype=bool)
    if np.any(d_uu[off] == 0):
        i, j = np.argwhere((d_uu == 0) & off)[0]
        raise CoincidentNodesError(f"coincident nodes: users {i} and {j}")
    with np.errstate(divide="ignore"):
        q = np.where(off, d_uu, 0.0) ** (-mu)
    np.fill_diagonal(q, np.inf)

    for arr in (h, g, q, d_uu, phi_h, phi_g):
        arr.setflags(write=False)
    return ChannelState(h=h, g=g, q=q, phases={"h": phi_h, "g": phi_g},
                        assignment=dep.assignment, user_dist=d_uu, positions=dep)

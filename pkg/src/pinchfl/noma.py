"""Uplink NOMA rates under SIC and per-round latency/energy bookkeeping.

Two NOMA groups share the round: the conventional-antenna group and the
pinching-antenna group. They occupy orthogonal bands, so neither group's
transmit powers ever enter the other's interference term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .topology import (ClientProfile, NetworkGeometry, PlacementRangeError,
                       conventional_gain, pinching_gain, pinching_gains_batch)


class OrderingError(ValueError):
    """NOMA group members are not in SIC decode order."""


class InstanceError(ValueError):
    """Decision vectors do not match the round instance."""


@dataclass(frozen=True)
class NomaMember:
    client_id: int
    gain: float
    power: float


@dataclass(frozen=True)
class NomaGroup:
    """Members in decode order: strongest gain first, ties by ascending id."""

    members: tuple[NomaMember, ...]
    bandwidth: float
    noise: float

    @classmethod
    def from_unsorted(cls, members, bandwidth: float, noise: float) -> NomaGroup:
        ordered = sorted(members, key=lambda m: (-m.gain, m.client_id))
        return cls(tuple(ordered), bandwidth, noise)

    def check_order(self) -> None:
        for a, b in zip(self.members, self.members[1:]):
            if (a.gain, -a.client_id) < (b.gain, -b.client_id):
                raise OrderingError(
                    f"client {a.client_id} (gain {a.gain:.3e}) decoded before "
                    f"client {b.client_id} (gain {b.gain:.3e})"
                )


def sic_rates(group: NomaGroup) -> np.ndarray:
    """Achievable rate of each member, in decode order.

    Member ``n`` sees every member decoded after it as interference.
    """
    if not group.members:
        raise ValueError("empty NOMA group")
    group.check_order()
    for m in group.members:
        if m.power < 0:
            raise ValueError(f"negative power for client {m.client_id}")
    received = np.array([m.power * m.gain for m in group.members])
    rates = np.empty(len(received))
    for n in range(len(received)):
        interference = received[n + 1:].sum()
        rates[n] = group.bandwidth * math.log2(1.0 + received[n] / (interference + group.noise))
    return rates


def compute_cost(client: ClientProfile, freq: float) -> tuple[float, float]:
    """Local training latency and energy for one full-batch local step."""
    if freq <= 0:
        raise ZeroDivisionError(f"client {client.id}: CPU frequency must be > 0")
    cycles = client.cycles_per_sample * client.dataset_size
    return cycles / freq, client.capacitance_half * cycles * freq ** 2


def comm_cost(client: ClientProfile, rate: float, power: float) -> tuple[float, float]:
    """Upload latency and energy; a zero rate with a payload never finishes."""
    if client.model_bits == 0:
        return 0.0, 0.0
    if rate <= 0:
        return math.inf, math.inf
    t_com = client.model_bits / rate
    return t_com, power * t_com


@dataclass(frozen=True)
class RoundDecision:
    """Pinching abscissa plus per-client power and CPU frequency.

    ``power`` and ``freq`` follow the instance's client order (conventional
    clients first, then pinching clients).
    """

    x_p: float
    power: np.ndarray
    freq: np.ndarray

    def to_dict(self) -> dict:
        return {"x_p": float(self.x_p), "power": [float(v) for v in self.power],
                "freq": [float(v) for v in self.freq]}

    @classmethod
    def from_dict(cls, data: dict) -> RoundDecision:
        return cls(float(data["x_p"]), np.asarray(data["power"], dtype=float),
                   np.asarray(data["freq"], dtype=float))


@dataclass
class RoundMetrics:
    client_ids: list[int]
    t_cmp: np.ndarray
    t_com: np.ndarray
    e_cmp: np.ndarray
    e_com: np.ndarray
    energy_ok: np.ndarray
    freq_ok: np.ndarray
    e_max: np.ndarray

    @property
    def latency(self) -> np.ndarray:
        return self.t_cmp + self.t_com

    @property
    def round_latency(self) -> float:
        return float(np.max(self.latency))

    @property
    def stragglers(self) -> np.ndarray:
        """Clients whose upload never completes."""
        return ~np.isfinite(self.t_com)


@dataclass
class RoundInstance:
    """One problem instance: geometry plus the two selected client groups.

    With ``use_pinching`` off the second group is served by a conventional
    antenna on its own band (the no-pinching benchmark). ``fading`` maps
    client id to a multiplicative gain factor applied to whichever link the
    client uses.
    """

    geometry: NetworkGeometry
    conventional: list[ClientProfile]
    pinching: list[ClientProfile]
    use_pinching: bool = True
    split_band: bool = False
    fading: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        ids = [c.id for c in self.clients]
        if len(set(ids)) != len(ids):
            raise InstanceError("a client appears in both groups")

    @property
    def clients(self) -> list[ClientProfile]:
        return list(self.conventional) + list(self.pinching)

    @property
    def size(self) -> int:
        return len(self.conventional) + len(self.pinching)

    @property
    def n_conventional(self) -> int:
        return len(self.conventional)

    def group_band(self) -> tuple[float, float]:
        """Bandwidth and noise power seen by each group."""
        geo = self.geometry
        share = 0.5 if self.split_band else 1.0
        return geo.bandwidth * share, geo.noise_power * share

    def conv_gain(self, client: ClientProfile) -> float:
        return conventional_gain(client, self.geometry, self.fading.get(client.id))

    def second_group_gain(self, client: ClientProfile, x_p: float) -> float:
        if not self.use_pinching:
            return self.conv_gain(client)
        return pinching_gain(client, x_p, self.geometry) * self.fading.get(client.id, 1.0)

    def gains(self, x_p: float) -> np.ndarray:
        return np.array([self.conv_gain(c) for c in self.conventional]
                        + [self.second_group_gain(c, x_p) for c in self.pinching])

    def arrays(self) -> dict[str, np.ndarray]:
        """Per-client constants as arrays in instance order, for batch evaluation."""
        cl = self.clients
        return {
            "ids": np.array([c.id for c in cl]),
            "xs": np.array([c.position.x for c in cl]),
            "ys": np.array([c.position.y for c in cl]),
            "cycles": np.array([c.cycles_per_sample * c.dataset_size for c in cl], dtype=float),
            "cap": np.array([c.capacitance_half for c in cl]),
            "bits": np.array([c.model_bits for c in cl]),
            "p_max": np.array([c.p_max for c in cl]),
            "f_max": np.array([c.f_max for c in cl]),
            "e_max": np.array([c.e_max for c in cl]),
            "fading": np.array([self.fading.get(c.id, 1.0) for c in cl]),
            "conv_gain": np.array([self.conv_gain(c) for c in cl]),
        }


def build_groups(instance: RoundInstance, decision: RoundDecision) -> tuple[NomaGroup, NomaGroup]:
    geo = instance.geometry
    if not 0.0 <= decision.x_p <= geo.area_length:
        raise PlacementRangeError(f"x_p={decision.x_p} outside [0, {geo.area_length}]")
    n = instance.size
    if len(decision.power) != n or len(decision.freq) != n:
        raise InstanceError(
            f"decision has {len(decision.power)} powers / {len(decision.freq)} "
            f"frequencies for {n} clients"
        )
    bandwidth, noise = instance.group_band()
    gains = instance.gains(decision.x_p)
    k = instance.n_conventional
    members = [NomaMember(c.id, float(g), float(p))
               for c, g, p in zip(instance.clients, gains, decision.power)]
    return (NomaGroup.from_unsorted(members[:k], bandwidth, noise),
            NomaGroup.from_unsorted(members[k:], bandwidth, noise))


def evaluate_round(instance: RoundInstance, decision: RoundDecision) -> RoundMetrics:
    """Evaluate the min-max latency objective and energy constraints for one decision."""
    groups = build_groups(instance, decision)
    rate_by_id: dict[int, float] = {}
    for group in groups:
        if group.members:
            for m, r in zip(group.members, sic_rates(group)):
                rate_by_id[m.client_id] = float(r)

    rows = []
    for client, p, f in zip(instance.clients, decision.power, decision.freq):
        t_cmp, e_cmp = compute_cost(client, float(f))
        t_com, e_com = comm_cost(client, rate_by_id[client.id], float(p))
        rows.append((t_cmp, t_com, e_cmp, e_com, f <= client.f_max * (1 + 1e-12)))
    t_cmp, t_com, e_cmp, e_com, freq_ok = (np.array(col) for col in zip(*rows))
    e_max = np.array([c.e_max for c in instance.clients])
    return RoundMetrics(
        client_ids=[c.id for c in instance.clients],
        t_cmp=t_cmp, t_com=t_com, e_cmp=e_cmp, e_com=e_com,
        energy_ok=(e_cmp + e_com) <= e_max,
        freq_ok=freq_ok.astype(bool),
        e_max=e_max,
    )


def _group_rates_batch(gains: np.ndarray, power: np.ndarray, ids: np.ndarray,
                       bandwidth: float, noise: float) -> np.ndarray:
    """Vectorized SIC rates; rows are independent candidates, columns clients."""
    if gains.shape[-1] == 0:
        return np.zeros_like(gains)
    by_id = np.argsort(ids, kind="stable")
    g = gains[:, by_id]
    p = power[:, by_id]
    order = np.argsort(-g, axis=1, kind="stable")
    q = np.take_along_axis(p * g, order, axis=1)
    tail = np.cumsum(q[:, ::-1], axis=1)[:, ::-1]
    interference = tail - q
    rates_sorted = bandwidth * np.log2(1.0 + q / (interference + noise))
    rates = np.empty_like(rates_sorted)
    np.put_along_axis(rates, order, rates_sorted, axis=1)
    out = np.empty_like(rates)
    out[:, by_id] = rates
    return out


@dataclass
class BatchMetrics:
    round_latency: np.ndarray  # (B,)
    energy: np.ndarray  # (B, N)
    energy_ok: np.ndarray  # (B, N)
    latency: np.ndarray  # (B, N)


class BatchEvaluator:
    """Evaluate many decisions of one instance at once.

    Numerically identical in formula to :func:`evaluate_round`; used by the
    grid oracle and the DDPG environment where per-call overhead matters.
    """

    def __init__(self, instance: RoundInstance):
        self.instance = instance
        self.arr = instance.arrays()
        self.k = instance.n_conventional
        self.bandwidth, self.noise = instance.group_band()

    def gains(self, x_p: np.ndarray) -> np.ndarray:
        a = self.arr
        x_p = np.atleast_1d(np.asarray(x_p, dtype=float))
        conv = np.broadcast_to(a["conv_gain"][: self.k], (x_p.shape[0], self.k))
        if self.instance.use_pinching:
            pin = pinching_gains_batch(a["xs"][self.k:], a["ys"][self.k:], x_p,
                                       self.instance.geometry) * a["fading"][self.k:]
        else:
            pin = np.broadcast_to(a["conv_gain"][self.k:], (x_p.shape[0], a["xs"].size - self.k))
        return np.concatenate([conv, pin], axis=1)

    def rates(self, x_p: np.ndarray, power: np.ndarray) -> np.ndarray:
        g = self.gains(x_p)
        k, ids = self.k, self.arr["ids"]
        return np.concatenate([
            _group_rates_batch(g[:, :k], power[:, :k], ids[:k], self.bandwidth, self.noise),
            _group_rates_batch(g[:, k:], power[:, k:], ids[k:], self.bandwidth, self.noise),
        ], axis=1)

    def __call__(self, x_p, power, freq) -> BatchMetrics:
        a = self.arr
        power = np.atleast_2d(np.asarray(power, dtype=float))
        freq = np.atleast_2d(np.asarray(freq, dtype=float))
        rates = self.rates(x_p, power)
        t_cmp = a["cycles"] / freq
        e_cmp = a["cap"] * a["cycles"] * freq ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            t_com = np.where(a["bits"] == 0, 0.0,
                             np.where(rates > 0, a["bits"] / rates, np.inf))
            e_com = np.where(np.isfinite(t_com), power * t_com, np.inf)
        latency = t_cmp + t_com
        energy = e_cmp + e_com
        return BatchMetrics(latency.max(axis=1), energy, energy <= a["e_max"], latency)

"""Geometry, client profiles and the two uplink channel models.

The service area is the rectangle [0, L] x [-W/2, W/2] on the ground plane.
The server sits at the origin (midpoint of the left edge) and the waveguide
runs along the x-axis at height ``d``, so a pinching antenna placed at
abscissa ``x_p`` radiates from ``(x_p, 0, d)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class DegenerateGeometryError(ValueError):
    """A client coincides with the radiating point it talks to."""


class PlacementRangeError(ValueError):
    """Pinching antenna abscissa outside the waveguide span [0, L]."""


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite coordinate in {self!r}")

    def distance(self, other: Point3) -> float:
        return math.sqrt(
            (self.x - other.x) ** 2 + (self.y - other.y) ** 2 + (self.z - other.z) ** 2
        )


def noise_power_watts(psd_dbm_hz: float, bandwidth: float) -> float:
    """Integrate a noise PSD given in dBm/Hz over ``bandwidth`` Hz."""
    return 10.0 ** ((psd_dbm_hz - 30.0) / 10.0) * bandwidth


@dataclass(frozen=True)
class NetworkGeometry:
    area_length: float = 30.0
    area_width: float = 10.0
    waveguide_height: float = 3.0
    carrier_freq: float = 3.5e9
    bandwidth: float = 1e6
    noise_psd_dbm_hz: float = -174.0
    pathloss_exp: float = 2.4
    lightspeed: float = SPEED_OF_LIGHT
    server_pos: Point3 = field(default_factory=lambda: Point3(0.0, 0.0, 0.0))

    def __post_init__(self):
        for name in ("area_length", "area_width", "waveguide_height", "carrier_freq",
                     "bandwidth", "lightspeed"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not self.pathloss_exp > 0:
            raise ValueError("pathloss_exp must be > 0")

    @property
    def noise_power(self) -> float:
        return noise_power_watts(self.noise_psd_dbm_hz, self.bandwidth)

    @property
    def wavelength(self) -> float:
        return self.lightspeed / self.carrier_freq

    @property
    def eta(self) -> float:
        """Free-space path-loss constant c / (4 pi f_c)."""
        return self.lightspeed / (4.0 * math.pi * self.carrier_freq)

    def pinching_point(self, x_p: float) -> Point3:
        return Point3(x_p, 0.0, self.waveguide_height)


@dataclass(frozen=True)
class ClientProfile:
    id: int
    position: Point3
    dataset_size: int
    cycles_per_sample: float = 2e4
    f_max: float = 2e9
    p_max: float = 0.2
    e_max: float = 1.0
    capacitance_half: float = 1e-28
    model_bits: float = 1e6
    dc_ceiling: float = 1.0
    dc_scale: float = 1.0
    dc_rate: float = 1e-3

    def __post_init__(self):
        if self.dataset_size < 1:
            raise ValueError(f"client {self.id}: dataset_size must be >= 1")
        for name in ("cycles_per_sample", "f_max", "p_max", "e_max", "capacitance_half"):
            if not getattr(self, name) > 0:
                raise ValueError(f"client {self.id}: {name} must be > 0")
        if self.model_bits < 0:
            raise ValueError(f"client {self.id}: model_bits must be >= 0")
        if self.dc_ceiling > 1.0 or self.dc_ceiling - self.dc_scale < 0.0:
            raise ValueError(
                f"client {self.id}: need dc_scale <= dc_ceiling <= 1, "
                f"got ceiling={self.dc_ceiling} scale={self.dc_scale}"
            )


def conventional_gain(client: ClientProfile, geo: NetworkGeometry,
                      fading: float | None = None) -> float:
    """Power gain of the server's conventional antenna link.

    ``eta**2 * dist**(-pathloss_exp)``, optionally scaled by a unit-mean
    small-scale fading factor.
    """
    dist = client.position.distance(geo.server_pos)
    if dist <= 0.0:
        raise DegenerateGeometryError(f"client {client.id} is co-located with the server")
    gain = geo.eta ** 2 * dist ** (-geo.pathloss_exp)
    if fading is not None:
        gain *= fading
    return gain


def pinching_coefficient(client: ClientProfile, x_p: float, geo: NetworkGeometry) -> complex:
    """Complex LoS coefficient from ``client`` to the pinching antenna at ``x_p``."""
    if not 0.0 <= x_p <= geo.area_length:
        raise PlacementRangeError(f"x_p={x_p} outside [0, {geo.area_length}]")
    dist = client.position.distance(geo.pinching_point(x_p))
    if dist <= 0.0:
        raise DegenerateGeometryError(f"client {client.id} touches the pinching antenna")
    phase = -2.0 * math.pi * dist / geo.wavelength
    return geo.eta / dist * complex(math.cos(phase), math.sin(phase))


def pinching_gain(client: ClientProfile, x_p: float, geo: NetworkGeometry) -> float:
    return abs(pinching_coefficient(client, x_p, geo)) ** 2


def pinching_gains_batch(xs: np.ndarray, ys: np.ndarray, x_p: np.ndarray,
                         geo: NetworkGeometry) -> np.ndarray:
    """|h|^2 for clients at (xs, ys) and a batch of placements.

    Returns an array of shape ``x_p.shape + xs.shape``.
    """
    x_p = np.asarray(x_p, dtype=float)
    dx = np.asarray(xs, dtype=float) - x_p[..., None]
    dist_sq = dx ** 2 + np.asarray(ys, dtype=float) ** 2 + geo.waveguide_height ** 2
    return geo.eta ** 2 / dist_sq


def place_clients(count: int, geo: NetworkGeometry, seed: int, *,
                  dataset_range: tuple[int, int] = (100, 1000),
                  **overrides) -> list[ClientProfile]:
    """Drop ``count`` clients uniformly over the service rectangle.

    Dataset sizes are uniform integers in ``dataset_range`` (inclusive).
    The Weibull rate defaults to ``3 / max(D)`` so the largest dataset has a
    data contribution near 0.95. Extra keyword arguments override the
    remaining ClientProfile fields for every client.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0.0, geo.area_length, size=count)
    ys = rng.uniform(-geo.area_width / 2.0, geo.area_width / 2.0, size=count)
    lo, hi = dataset_range
    sizes = rng.integers(lo, hi + 1, size=count)
    overrides.setdefault("dc_rate", 3.0 / float(sizes.max()))
    return [
        ClientProfile(id=i, position=Point3(float(xs[i]), float(ys[i]), 0.0),
                      dataset_size=int(sizes[i]), **overrides)
        for i in range(count)
    ]


ROSTER_FIELDS = ("id", "x", "y", "D_n", "c_n", "f_max", "p_max", "E_max", "d_n",
                 "ϖ", "τ_wb", "λ_wb")


def write_roster(path: str | Path, clients: list[ClientProfile]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROSTER_FIELDS)
        for c in clients:
            writer.writerow([c.id, repr(c.position.x), repr(c.position.y), c.dataset_size,
                             repr(c.cycles_per_sample), repr(c.f_max), repr(c.p_max),
                             repr(c.e_max), repr(c.model_bits), repr(c.dc_ceiling),
                             repr(c.dc_scale), repr(c.dc_rate)])


def read_roster(path: str | Path, capacitance_half: float = 1e-28) -> list[ClientProfile]:
    """Load a roster written by :func:`write_roster`.

    The roster format carries no capacitance column, so every client gets
    ``capacitance_half``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROSTER_FIELDS:
            raise ValueError(f"unexpected roster header {reader.fieldnames}")
        return [
            ClientProfile(
                id=int(row["id"]),
                position=Point3(float(row["x"]), float(row["y"]), 0.0),
                dataset_size=int(row["D_n"]),
                cycles_per_sample=float(row["c_n"]),
                f_max=float(row["f_max"]),
                p_max=float(row["p_max"]),
                e_max=float(row["E_max"]),
                capacitance_half=capacitance_half,
                model_bits=float(row["d_n"]),
                dc_ceiling=float(row["ϖ"]),
                dc_scale=float(row["τ_wb"]),
                dc_rate=float(row["λ_wb"]),
            )
            for row in reader
        ]

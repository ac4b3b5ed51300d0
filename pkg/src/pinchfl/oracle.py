"""Exhaustive grid oracle and the benchmark schemes for the round-latency problem."""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .fuzzy import Selection
from .noma import BatchEvaluator, RoundDecision, RoundInstance
from .topology import ClientProfile, NetworkGeometry


@dataclass(frozen=True)
class BaselineKind:
    """``optimized``: solve for (x_p, p, f). ``fixed``: x_p frozen at ``x_p``.
    ``without_pinching``: the second group uses a conventional antenna on its
    own band."""

    name: str
    x_p: float | None = None

    OPTIMIZED = "optimized"
    FIXED = "fixed"
    WITHOUT = "without_pinching"

    def __post_init__(self):
        if self.name not in (self.OPTIMIZED, self.FIXED, self.WITHOUT):
            raise ValueError(f"unknown scheme {self.name!r}")
        if self.name == self.FIXED and self.x_p is None:
            raise ValueError("fixed placement needs an abscissa")

    @classmethod
    def optimized(cls) -> BaselineKind:
        return cls(cls.OPTIMIZED)

    @classmethod
    def fixed(cls, x_p: float) -> BaselineKind:
        return cls(cls.FIXED, float(x_p))

    @classmethod
    def without_pinching(cls) -> BaselineKind:
        return cls(cls.WITHOUT)

    @property
    def label(self) -> str:
        return self.name

    def validate(self, geo: NetworkGeometry) -> None:
        if self.name == self.FIXED and not 0.0 <= self.x_p <= geo.area_length:
            raise ValueError(f"fixed x_p={self.x_p} outside [0, {geo.area_length}]")


def make_instance(clients: list[ClientProfile], selection: Selection, geo: NetworkGeometry,
                  kind: BaselineKind | None = None, **kw) -> RoundInstance:
    by_id = {c.id: c for c in clients}
    kind = kind or BaselineKind.optimized()
    kind.validate(geo)
    return RoundInstance(
        geometry=geo,
        conventional=[by_id[i] for i in selection.conventional],
        pinching=[by_id[i] for i in selection.pinching],
        use_pinching=kind.name != BaselineKind.WITHOUT,
        **kw,
    )


class SearchBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchSpec:
    """Grid resolution per decision dimension.

    ``mode="reduced"`` replaces the frequency grid with the largest
    energy-feasible frequency for each client, which is exact because the
    latency falls and the energy rises monotonically in frequency.
    """

    x_points: int = 9
    power_points: int = 5
    freq_points: int = 3
    mode: str = "reduced"
    feasibility: str = "reject"
    f_floor_frac: float = 0.01
    cap: int = 2_000_000
    chunk: int = 50_000

    def __post_init__(self):
        if min(self.x_points, self.power_points, self.freq_points) < 1:
            raise ValueError("grid needs at least one point per dimension")
        if self.mode not in ("reduced", "full"):
            raise ValueError(f"unknown oracle mode {self.mode!r}")
        if self.feasibility not in ("reject", "penalize"):
            raise ValueError(f"unknown feasibility mode {self.feasibility!r}")

    def size(self, n_clients: int, n_x: int) -> int:
        per = self.power_points ** n_clients
        if self.mode == "full":
            per *= self.freq_points ** n_clients
        return n_x * per


@dataclass
class OracleResult:
    decision: RoundDecision
    round_latency: float
    feasible: bool
    energy_excess: float
    evaluations: int
    instance_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "instance_hash": self.instance_hash,
            "best_decision": self.decision.to_dict(),
            "best_T": self.round_latency,
            "feasible": self.feasible,
            "energy_excess": self.energy_excess,
            "evaluations": self.evaluations,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> OracleResult:
        d = json.loads(Path(path).read_text())
        return cls(RoundDecision.from_dict(d["best_decision"]), d["best_T"], d["feasible"],
                   d["energy_excess"], d["evaluations"], d["instance_hash"])


def instance_hash(instance: RoundInstance) -> str:
    payload = {
        "geometry": repr(instance.geometry),
        "conventional": [repr(c) for c in instance.conventional],
        "pinching": [repr(c) for c in instance.pinching],
        "use_pinching": instance.use_pinching,
        "split_band": instance.split_band,
        "fading": sorted(instance.fading.items()),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def max_feasible_freq(arr: dict, energy_comm: np.ndarray, f_floor: np.ndarray) -> np.ndarray:
    """Largest f in [f_floor, f_max] meeting the energy budget, else f_floor."""
    room = np.maximum(arr["e_max"] - energy_comm, 0.0)
    with np.errstate(invalid="ignore"):
        f = np.sqrt(room / (arr["cap"] * arr["cycles"]))
    f = np.where(np.isfinite(f), f, 0.0)
    return np.clip(f, f_floor, arr["f_max"])


def _x_grid(instance: RoundInstance, kind: BaselineKind | None, spec: SearchSpec) -> np.ndarray:
    if kind is not None and kind.name == BaselineKind.FIXED:
        return np.array([kind.x_p])
    if not instance.use_pinching or (kind is not None and kind.name == BaselineKind.WITHOUT):
        return np.array([0.0])
    if spec.x_points == 1:
        return np.array([instance.geometry.area_length / 2.0])
    return np.linspace(0.0, instance.geometry.area_length, spec.x_points)


def grid_search(instance: RoundInstance, spec: SearchSpec | None = None,
                kind: BaselineKind | None = None, xi1: float = 1.0, xi2: float = 1.0,
                t_cap: float = 100.0) -> OracleResult:
    """Exhaustive search over the grid; minimal T among energy-feasible points.

    Ties resolve to the lexicographically first grid index. If no point is
    feasible the one with the smallest total energy excess is returned.
    """
    spec = spec or SearchSpec()
    evaluator = BatchEvaluator(instance)
    arr = evaluator.arr
    n = instance.size
    xs = _x_grid(instance, kind, spec)
    total = spec.size(n, len(xs))
    if total > spec.cap:
        raise SearchBudgetError(
            f"grid needs {total} evaluations, cap is {spec.cap}; use mode='reduced' "
            f"or fewer points"
        )
    p_levels = np.linspace(0.0, 1.0, spec.power_points) if spec.power_points > 1 else np.ones(1)
    f_floor = spec.f_floor_frac * arr["f_max"]
    f_levels = (np.linspace(spec.f_floor_frac, 1.0, spec.freq_points)
                if spec.freq_points > 1 else np.ones(1))
    dims = [range(len(xs))] + [range(len(p_levels))] * n
    if spec.mode == "full":
        dims += [range(len(f_levels))] * n

    best = None  # (key tuple, x, p, f, T, excess)
    index_iter = itertools.product(*dims)
    evaluations = 0
    while True:
        chunk = list(itertools.islice(index_iter, spec.chunk))
        if not chunk:
            break
        idx = np.array(chunk, dtype=np.int64)
        x_p = xs[idx[:, 0]]
        power = p_levels[idx[:, 1:n + 1]] * arr["p_max"]
        if spec.mode == "full":
            freq = f_levels[idx[:, n + 1:]] * arr["f_max"]
        else:
            rates = evaluator.rates(x_p, power)
            with np.errstate(divide="ignore", invalid="ignore"):
                t_com = np.where(arr["bits"] == 0, 0.0,
                                 np.where(rates > 0, arr["bits"] / rates, np.inf))
                e_com = np.where(np.isfinite(t_com), power * t_com, np.inf)
            freq = max_feasible_freq(arr, e_com, f_floor)
        m = evaluator(x_p, power, freq)
        evaluations += len(chunk)
        excess = np.maximum(m.energy - arr["e_max"], 0.0).sum(axis=1)
        feasible = m.energy_ok.all(axis=1)
        if spec.feasibility == "penalize":
            t_clip = np.minimum(m.round_latency, t_cap)
            score = xi1 * t_clip - xi2 * np.where(m.energy_ok, 1.0, -1.0).sum(axis=1)
            key_primary = np.zeros_like(score)
            excess_key = np.zeros_like(score)
        else:
            score = m.round_latency
            key_primary = np.where(feasible, 0.0, 1.0)
            excess_key = np.where(feasible, 0.0, np.nan_to_num(excess, nan=np.inf))
        order = np.lexsort((score, excess_key, key_primary))
        i = int(order[0])
        cand = (key_primary[i], excess_key[i], score[i])
        if best is None or cand < best[0]:
            best = (cand, float(x_p[i]), power[i].copy(), freq[i].copy(),
                    float(m.round_latency[i]), float(excess[i]), bool(feasible[i]))

    _, x_best, p_best, f_best, t_best, exc, feas = best
    return OracleResult(RoundDecision(x_best, p_best, f_best), t_best, feas, exc, evaluations,
                        instance_hash(instance))


Solver = Callable[[RoundInstance, BaselineKind], "BaselineOutcome"]


@dataclass
class BaselineOutcome:
    kind: BaselineKind
    reward: float
    round_latency: float
    decision: RoundDecision
    history: list[float] | None = None


def oracle_solver(spec: SearchSpec | None = None, xi1: float = 1.0, xi2: float = 1.0,
                  t_cap: float = 100.0) -> Solver:
    """Solver adaptor running :func:`grid_search` for a scheme."""
    from .ddpg import reward_from_batch

    def solve(instance: RoundInstance, kind: BaselineKind) -> BaselineOutcome:
        res = grid_search(instance, spec, kind, xi1, xi2, t_cap)
        m = BatchEvaluator(instance)(np.array([res.decision.x_p]), res.decision.power[None],
                                      res.decision.freq[None])
        r = float(reward_from_batch(m, xi1, xi2, t_cap)[0])
        return BaselineOutcome(kind, r, res.round_latency, res.decision)

    return solve


def evaluate_baseline(clients: list[ClientProfile], selection: Selection, geo: NetworkGeometry,
                      kind: BaselineKind, solver: Solver, **instance_kw) -> BaselineOutcome:
    instance = make_instance(clients, selection, geo, kind, **instance_kw)
    return solver(instance, kind)


def swap_to_conventional(instance: RoundInstance) -> RoundInstance:
    return replace(instance, use_pinching=False)

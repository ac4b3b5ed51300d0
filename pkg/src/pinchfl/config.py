"""Experiment configuration: a YAML file with six fixed blocks, plus seed fan-out."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists field-level diagnostics."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class GeometryBlock:
    L: float = 30.0
    W: float = 10.0
    d: float = 3.0
    f_c: float = 3.5e9
    B: float = 1e6
    noise_psd_dbm_hz: float = -174.0
    pathloss_exponent: float = 2.4

    def check(self) -> list[str]:
        out = []
        for name in ("L", "W", "d", "f_c", "B", "pathloss_exponent"):
            if getattr(self, name) <= 0:
                out.append(f"geometry.{name} must be > 0")
        return out


@dataclass
class PopulationBlock:
    M: int = 30
    N: int = 6
    K: int = 3
    dataset_min: int = 100
    dataset_max: int = 1000
    c_n: float = 2e4
    f_max: float = 2e9
    p_max: float = 0.2
    E_max: float = 1.0
    d_n: float = 1e6
    tau_half: float = 1e-28
    roster: str | None = None
    overrides: dict = field(default_factory=dict)

    def check(self) -> list[str]:
        out = []
        if self.M < 1:
            out.append("population.M must be >= 1")
        if not 1 <= self.N <= self.M:
            out.append(f"population.N must satisfy 1 <= N <= M (N={self.N}, M={self.M})")
        if not 0 <= self.K <= self.N:
            out.append(f"population.K must satisfy 0 <= K <= N (K={self.K}, N={self.N})")
        if not 0 <= self.dataset_min <= self.dataset_max:
            out.append("population.dataset_min must be in [0, dataset_max]")
        for name in ("c_n", "f_max", "E_max", "d_n", "tau_half"):
            if getattr(self, name) <= 0:
                out.append(f"population.{name} must be > 0")
        if self.p_max < 0:
            out.append("population.p_max must be >= 0")
        for key, vals in self.overrides.items():
            if not isinstance(vals, dict):
                out.append(f"population.overrides.{key} must be a mapping")
                continue
            bad = set(vals) - {"c_n", "f_max", "p_max", "E_max", "d_n", "tau_half"}
            if bad:
                out.append(f"population.overrides.{key}: unknown keys {sorted(bad)}")
        return out


@dataclass
class FuzzyBlock:
    cq_breakpoints: list = field(default_factory=lambda: [[0.0, 0.0, 0.5], [0.0, 0.5, 1.0],
                                                          [0.5, 1.0, 1.0]])
    dc_breakpoints: list = field(default_factory=lambda: [[0.0, 0.0, 0.5], [0.0, 0.5, 1.0],
                                                          [0.5, 1.0, 1.0]])
    output_breakpoints: list = field(default_factory=lambda: [[0.0, 1 / 6, 1 / 3],
                                                              [1 / 3, 1 / 2, 2 / 3],
                                                              [2 / 3, 5 / 6, 1.0]])
    output_centroids: list | None = None
    weibull_ceiling: float = 1.0
    weibull_scale: float = 1.0
    weibull_rate: float | None = None
    cog_grid: int = 1001

    def check(self) -> list[str]:
        out = []
        for name in ("cq_breakpoints", "dc_breakpoints", "output_breakpoints"):
            sets = getattr(self, name)
            if len(sets) != 3:
                out.append(f"fuzzy.{name} needs three membership sets")
                continue
            for i, bp in enumerate(sets):
                if len(bp) not in (3, 4) or any(b < a for a, b in zip(bp, bp[1:])):
                    out.append(f"fuzzy.{name}[{i}] must be 3 or 4 nondecreasing points")
                elif bp[0] < 0 or bp[-1] > 1:
                    out.append(f"fuzzy.{name}[{i}] must lie in [0, 1]")
        if self.output_centroids is not None and len(self.output_centroids) != 3:
            out.append("fuzzy.output_centroids needs three values")
        if self.cog_grid < 2:
            out.append("fuzzy.cog_grid must be >= 2")
        if self.weibull_rate is not None and self.weibull_rate <= 0:
            out.append("fuzzy.weibull_rate must be > 0")
        return out


@dataclass
class DdpgBlock:
    discount: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    buffer_size: int = 100_000
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    hidden: list = field(default_factory=lambda: [64, 64])
    noise_start: float = 0.2
    noise_end: float = 0.02
    slots_per_episode: int = 1
    total_steps: int = 20_000
    warmup_steps: int = 1_000
    f_floor_frac: float = 0.01
    loss_cap: float = 1e8
    block_fading: bool = False


@dataclass
class OracleBlock:
    x_points: int = 9
    power_points: int = 5
    freq_points: int = 3
    mode: str = "reduced"
    feasibility: str = "reject"
    cap: int = 2_000_000


@dataclass
class SolverBlock:
    ddpg: DdpgBlock = field(default_factory=DdpgBlock)
    oracle: OracleBlock = field(default_factory=OracleBlock)
    T_cap: float = 100.0
    xi1: float = 1.0
    xi2: float = 1.0
    fixed_x_p: float | None = None
    fl_solver: str = "oracle"

    def check(self) -> list[str]:
        out = []
        try:
            self.hyperparams()
        except ValueError as exc:
            out.append(f"solver.ddpg: {exc}")
        try:
            self.search_spec()
        except ValueError as exc:
            out.append(f"solver.oracle: {exc}")
        if self.fl_solver not in ("oracle", "ddpg"):
            out.append("solver.fl_solver must be 'oracle' or 'ddpg'")
        return out

    def hyperparams(self):
        from .ddpg import Hyperparams
        d = dataclasses.asdict(self.ddpg)
        return Hyperparams(xi1=self.xi1, xi2=self.xi2, t_cap=self.T_cap, **d)

    def search_spec(self):
        from .oracle import SearchSpec
        return SearchSpec(f_floor_frac=self.ddpg.f_floor_frac, **dataclasses.asdict(self.oracle))


@dataclass
class FlBlock:
    rounds: int = 100
    alpha: float = 0.1
    alpha_skew: float = 0.1
    total_samples: int = 16_500
    classes: int = 10
    features: int = 32
    test_samples: int = 2000
    fading: bool = False

    def check(self) -> list[str]:
        out = []
        if self.rounds < 0:
            out.append("fl.rounds must be >= 0")
        if self.alpha < 0:
            out.append("fl.alpha must be >= 0")
        if self.alpha_skew <= 0:
            out.append("fl.alpha_skew must be > 0")
        if self.classes < 2 or self.features < 1:
            out.append("fl.classes must be >= 2 and fl.features >= 1")
        return out


@dataclass
class SeedsBlock:
    master: int = 0

    def check(self) -> list[str]:
        return [] if 0 <= self.master < 2 ** 64 else ["seeds.master must be a u64"]


@dataclass
class ExperimentConfig:
    geometry: GeometryBlock = field(default_factory=GeometryBlock)
    population: PopulationBlock = field(default_factory=PopulationBlock)
    fuzzy: FuzzyBlock = field(default_factory=FuzzyBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    fl: FlBlock = field(default_factory=FlBlock)
    seeds: SeedsBlock = field(default_factory=SeedsBlock)

    def validate(self) -> ExperimentConfig:
        problems = []
        for f in fields(self):
            problems += getattr(self, f.name).check()
        if self.fl.total_samples < self.population.M:
            problems.append("fl.total_samples must be >= population.M")
        x = self.solver.fixed_x_p
        if x is not None and not 0.0 <= x <= self.geometry.L:
            problems.append(f"solver.fixed_x_p must lie in [0, geometry.L]")
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()

    @property
    def fixed_x_p(self) -> float:
        return self.geometry.L / 2.0 if self.solver.fixed_x_p is None else self.solver.fixed_x_p


def _build(cls, data: Any, path: str, problems: list[str]):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        problems.append(f"{path or 'config'} must be a mapping")
        return cls()
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    for key in unknown:
        problems.append(f"{path + '.' if path else ''}{key}: unknown key")
    kwargs = {}
    for name, f in known.items():
        if name not in data:
            continue
        value = data[name]
        sub = f.default_factory if f.default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kwargs[name] = _build(sub, value, f"{path}.{name}" if path else name, problems)
        else:
            kwargs[name] = _coerce(value, getattr(cls(), name), f"{path}.{name}", problems)
    return cls(**kwargs)


def _coerce(value, default, where: str, problems: list[str]):
    # Ints are accepted where floats are expected; everything else must match.
    if isinstance(default, bool):
        if not isinstance(value, bool):
            problems.append(f"{where}: expected a boolean, got {value!r}")
            return default
        return value
    if isinstance(default, float) and isinstance(value, str):
        # YAML 1.1 reads exponent literals without a dot ("1e-4") as strings.
        try:
            value = float(value)
        except ValueError:
            pass
    if isinstance(default, float) or (default is None and isinstance(value, (int, float))):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{where}: expected a number, got {value!r}")
            return default
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{where}: expected an integer, got {value!r}")
            return default
        return value
    if isinstance(default, str) and not isinstance(value, str):
        problems.append(f"{where}: expected a string, got {value!r}")
        return default
    return value


def from_dict(data: dict | None) -> ExperimentConfig:
    problems: list[str] = []
    cfg = _build(ExperimentConfig, data or {}, "", problems)
    if problems:
        raise ConfigError(problems)
    return cfg.validate()


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read a YAML config (or defaults when ``path`` is None) and apply overrides."""
    data: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError([f"config is not valid YAML: {exc}"]) from exc
    for item in overrides or []:
        data = apply_override(data, item)
    return from_dict(data)


def apply_override(data: dict, item: str) -> dict:
    """Apply one ``dotted.key=value`` override; the value is parsed as YAML."""
    if "=" not in item:
        raise ConfigError([f"override {item!r} is not key=value"])
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError([f"override {item!r} has an empty key segment"])
    out = copy.deepcopy(data)
    node = out
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError([f"override {key}: {p} is not a block"])
        node = nxt
    try:
        node[parts[-1]] = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError([f"override {key}: bad value {raw!r}"]) from exc
    return out


def derive_seed(master: int, label: str) -> int:
    """Stage seed = first 8 bytes (big-endian) of sha256("<master>:<label>")."""
    if not label:
        raise ValueError("stage label must be nonempty")
    digest = hashlib.sha256(f"{int(master)}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")

"""Turn an :class:`ExperimentConfig` into geometry, clients, classifier and instances."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

from .config import ExperimentConfig, derive_seed
from .fuzzy import (CONVENTIONAL, PINCHING, ClassificationOutcome, FuzzyClassifier,
                    MembershipFunction, Selection, classify_and_select)
from .noma import RoundInstance
from .oracle import BaselineKind, make_instance
from .topology import ClientProfile, NetworkGeometry, conventional_gain, place_clients, read_roster

CLASSIFICATION_FIELDS = ("id", "CQ_norm", "DC_norm", "NO*", "category", "selected")
SCHEMES = (BaselineKind.OPTIMIZED, BaselineKind.FIXED, BaselineKind.WITHOUT)


class DependencyError(RuntimeError):
    """A subcommand needs an artifact that an earlier subcommand produces."""

    def __init__(self, artifact: Path, producer: str):
        self.artifact, self.producer = artifact, producer
        super().__init__(f"missing {artifact}; run the '{producer}' subcommand first")


def geometry(cfg: ExperimentConfig) -> NetworkGeometry:
    g = cfg.geometry
    return NetworkGeometry(area_length=g.L, area_width=g.W, waveguide_height=g.d,
                           carrier_freq=g.f_c, bandwidth=g.B,
                           noise_psd_dbm_hz=g.noise_psd_dbm_hz, pathloss_exp=g.pathloss_exponent)


_PROFILE_KEYS = {"c_n": "cycles_per_sample", "f_max": "f_max", "p_max": "p_max",
                 "E_max": "e_max", "d_n": "model_bits", "tau_half": "capacitance_half"}


def clients(cfg: ExperimentConfig, geo: NetworkGeometry | None = None) -> list[ClientProfile]:
    geo = geo or geometry(cfg)
    pop, fz = cfg.population, cfg.fuzzy
    if pop.roster:
        roster = read_roster(pop.roster, capacitance_half=pop.tau_half)
        if len(roster) != pop.M:
            from .config import ConfigError
            raise ConfigError([f"population.roster has {len(roster)} clients, M is {pop.M}"])
        out = roster
    else:
        base = {v: getattr(pop, k) for k, v in _PROFILE_KEYS.items()}
        base.update(dc_ceiling=fz.weibull_ceiling, dc_scale=fz.weibull_scale)
        if fz.weibull_rate is not None:
            base["dc_rate"] = fz.weibull_rate
        out = place_clients(pop.M, geo, derive_seed(cfg.seeds.master, "placement"),
                            dataset_range=(pop.dataset_min, pop.dataset_max), **base)
    for key, vals in pop.overrides.items():
        i = int(key)
        out[i] = replace(out[i], **{_PROFILE_KEYS[k]: float(v) for k, v in vals.items()})
    return out


def classifier(cfg: ExperimentConfig) -> FuzzyClassifier:
    fz = cfg.fuzzy

    def family(labels, sets):
        return [MembershipFunction(lab, tuple(bp)) for lab, bp in zip(labels, sets)]

    clf = FuzzyClassifier(
        cq_family=family(("weak", "medium", "strong"), fz.cq_breakpoints),
        dc_family=family(("low", "moderate", "high"), fz.dc_breakpoints),
        output_family=family(("discarded", "conventional", "pinching"), fz.output_breakpoints),
        grid_size=fz.cog_grid,
    )
    if fz.output_centroids is not None:
        clf.defuzzifier.centroids = dict(zip(("discarded", "conventional", "pinching"),
                                             map(float, fz.output_centroids)))
    return clf


def _sorted(sel: Selection) -> Selection:
    # Groups are kept in id order so a selection read back from CSV matches.
    return Selection(sorted(sel.conventional), sorted(sel.pinching), sorted(sel.discarded))


def classify(cfg: ExperimentConfig, geo: NetworkGeometry, population: list[ClientProfile]
             ) -> tuple[Selection, list[ClassificationOutcome]]:
    gains = [conventional_gain(c, geo) for c in population]
    sel, outcomes = classify_and_select(population, gains, cfg.population.N, cfg.population.K,
                                        classifier(cfg))
    return _sorted(sel), outcomes


def write_classification(path: str | Path, outcomes: list[ClassificationOutcome],
                         sel: Selection) -> None:
    group = {i: CONVENTIONAL for i in sel.conventional}
    group.update({i: PINCHING for i in sel.pinching})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLASSIFICATION_FIELDS)
        for o in sorted(outcomes, key=lambda o: o.client_id):
            w.writerow([o.client_id, repr(o.cq_norm), repr(o.dc_norm), repr(o.crisp), o.category,
                        group.get(o.client_id, "no")])


def read_classification(path: str | Path) -> Selection:
    path = Path(path)
    if not path.exists():
        raise DependencyError(path, "classify")
    conv, pin, rest = [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            i = int(row["id"])
            {CONVENTIONAL: conv, PINCHING: pin}.get(row["selected"], rest).append(i)
    return _sorted(Selection(conv, pin, rest))


def scheme_kind(cfg: ExperimentConfig, name: str) -> BaselineKind:
    if name == BaselineKind.FIXED:
        return BaselineKind.fixed(cfg.fixed_x_p)
    return BaselineKind(name)


@dataclass
class Scenario:
    cfg: ExperimentConfig
    geo: NetworkGeometry
    clients: list[ClientProfile]
    selection: Selection

    def instance(self, kind: BaselineKind) -> RoundInstance:
        return make_instance(self.clients, self.selection, self.geo, kind)


def build(cfg: ExperimentConfig, selection: Selection | None = None) -> Scenario:
    geo = geometry(cfg)
    population = clients(cfg, geo)
    if selection is None:
        selection, _ = classify(cfg, geo, population)
    return Scenario(cfg, geo, population, selection)

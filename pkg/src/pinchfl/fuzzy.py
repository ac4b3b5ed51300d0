"""Mamdani fuzzy classification of clients into conventional/pinching/discarded.

Inputs are channel quality (CQ, the conventional-link gain normalized by the
population maximum) and data contribution (DC, a saturating exponential of the
dataset size, also max-normalized). Rules fire with Max-Min inference and the
clipped output sets are collapsed with a discretized center of gravity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .topology import ClientProfile

CONVENTIONAL = "conventional"
PINCHING = "pinching"
DISCARDED = "discarded"
OUTPUT_TERMS = (DISCARDED, CONVENTIONAL, PINCHING)

CQ_TERMS = ("weak", "medium", "strong")
DC_TERMS = ("low", "moderate", "high")


class NormalizationError(ValueError):
    """Fuzzifier input outside [0, 1]."""


class NoRuleFiredError(ValueError):
    """Every output strength is zero, so the centroid is undefined."""


class InsufficientPopulationError(ValueError):
    pass


@dataclass(frozen=True)
class MembershipFunction:
    """Trapezoid (a, b, c, d); a triangle has b == c.

    Degenerate shoulders are allowed: with a == b the degree is 1 at x == a.
    """

    label: str
    breakpoints: tuple[float, ...]

    def __post_init__(self):
        bp = self.breakpoints
        if len(bp) == 3:
            bp = (bp[0], bp[1], bp[1], bp[2])
            object.__setattr__(self, "breakpoints", bp)
        if len(bp) != 4 or any(b2 < b1 for b1, b2 in zip(bp, bp[1:])):
            raise ValueError(f"bad breakpoints for {self.label}: {self.breakpoints}")

    @property
    def shape(self) -> str:
        a, b, c, d = self.breakpoints
        return "triangular" if b == c else "trapezoidal"

    def __call__(self, x):
        a, b, c, d = self.breakpoints
        x = np.asarray(x, dtype=float)
        rise = np.ones_like(x) if b == a else np.clip((x - a) / (b - a), 0.0, 1.0)
        fall = np.ones_like(x) if d == c else np.clip((d - x) / (d - c), 0.0, 1.0)
        inside = (x >= a) & (x <= d)
        out = np.where(inside, np.minimum(rise, fall), 0.0)
        return out if out.ndim else float(out)

    @property
    def centroid(self) -> float:
        a, b, c, d = self.breakpoints
        grid = np.linspace(a, d, 20001)
        mu = self(grid)
        return float(np.trapezoid(grid * mu, grid) / np.trapezoid(mu, grid))


def triangle(label: str, a: float, b: float, c: float) -> MembershipFunction:
    return MembershipFunction(label, (a, b, c))


def default_cq_family() -> list[MembershipFunction]:
    return [triangle("weak", 0.0, 0.0, 0.5), triangle("medium", 0.0, 0.5, 1.0),
            triangle("strong", 0.5, 1.0, 1.0)]


def default_dc_family() -> list[MembershipFunction]:
    return [triangle("low", 0.0, 0.0, 0.5), triangle("moderate", 0.0, 0.5, 1.0),
            triangle("high", 0.5, 1.0, 1.0)]


def default_output_family() -> list[MembershipFunction]:
    return [triangle(DISCARDED, 0.0, 1 / 6, 1 / 3), triangle(CONVENTIONAL, 1 / 3, 1 / 2, 2 / 3),
            triangle(PINCHING, 2 / 3, 5 / 6, 1.0)]


# (DC term, CQ term) -> output term
DEFAULT_RULES: dict[tuple[str, str], str] = {
    ("low", "weak"): DISCARDED, ("low", "medium"): DISCARDED, ("low", "strong"): CONVENTIONAL,
    ("moderate", "weak"): DISCARDED, ("moderate", "medium"): CONVENTIONAL,
    ("moderate", "strong"): CONVENTIONAL,
    ("high", "weak"): PINCHING, ("high", "medium"): PINCHING, ("high", "strong"): PINCHING,
}


@dataclass(frozen=True)
class RuleTable:
    rules: dict[tuple[str, str], str] = field(default_factory=lambda: dict(DEFAULT_RULES))

    def __post_init__(self):
        cells = {(d, c) for d in DC_TERMS for c in CQ_TERMS}
        if set(self.rules) != cells:
            raise ValueError("rule table must cover all 9 (DC, CQ) cells")
        bad = {v for v in self.rules.values() if v not in OUTPUT_TERMS}
        if bad:
            raise ValueError(f"unknown output terms {bad}")


def data_contribution(client: ClientProfile, dataset_size: float | None = None) -> float:
    """Saturating data-contribution curve ceiling - scale * exp(-rate * D)."""
    d = client.dataset_size if dataset_size is None else dataset_size
    if d < 0:
        raise ValueError("dataset size must be >= 0")
    return client.dc_ceiling - client.dc_scale * math.exp(-client.dc_rate * d)


def fuzzify(value: float, family: list[MembershipFunction]) -> dict[str, float]:
    if not 0.0 <= value <= 1.0:
        raise NormalizationError(f"input {value} is not normalized to [0, 1]")
    return {mf.label: float(mf(value)) for mf in family}


def rule_activations(cq_degrees: dict[str, float], dc_degrees: dict[str, float],
                     rules: RuleTable) -> dict[tuple[str, str], float]:
    return {(d, c): min(dc_degrees[d], cq_degrees[c]) for (d, c) in rules.rules}


def infer(cq_degrees: dict[str, float], dc_degrees: dict[str, float],
          rules: RuleTable) -> dict[str, float]:
    """Max-Min inference: min over antecedents, max over rules sharing an output."""
    strengths = {term: 0.0 for term in OUTPUT_TERMS}
    for (d, c), act in rule_activations(cq_degrees, dc_degrees, rules).items():
        out = rules.rules[(d, c)]
        strengths[out] = max(strengths[out], act)
    return strengths


class Defuzzifier:
    """Discretized center of gravity over the clipped, max-aggregated output sets."""

    def __init__(self, output_family: list[MembershipFunction] | None = None,
                 grid_size: int = 1001):
        self.family = output_family or default_output_family()
        self.grid = np.linspace(0.0, 1.0, grid_size)
        self._mu = {mf.label: mf(self.grid) for mf in self.family}
        self.centroids = {mf.label: mf.centroid for mf in self.family}

    def aggregate(self, strengths: dict[str, float], grid: np.ndarray | None = None) -> np.ndarray:
        grid = self.grid if grid is None else grid
        agg = np.zeros_like(grid)
        for mf in self.family:
            mu = self._mu[mf.label] if grid is self.grid else mf(grid)
            agg = np.maximum(agg, np.minimum(mu, strengths.get(mf.label, 0.0)))
        return agg

    def _kinks(self, strengths: dict[str, float]) -> list[float]:
        # Abscissae where the aggregate bends; adding them to the grid makes the
        # piecewise-linear aggregate exact under the trapezoid rule.
        pts = []
        for mf in self.family:
            h = strengths.get(mf.label, 0.0)
            if h > 0.0:
                a, b, c, d = mf.breakpoints
                pts += [a, b, c, d]
                if h < 1.0:
                    pts += [a + h * (b - a), d - h * (d - c)]
        return [p for p in pts if 0.0 <= p <= 1.0]

    def __call__(self, strengths: dict[str, float]) -> float:
        if max(strengths.values(), default=0.0) <= 0.0:
            raise NoRuleFiredError("no fuzzy rule fired")
        kinks = self._kinks(strengths)
        grid = np.union1d(self.grid, kinks) if kinks else self.grid
        agg = self.aggregate(strengths, grid)
        total = np.trapezoid(agg, grid)
        if total <= 0.0:
            raise NoRuleFiredError("no fuzzy rule fired")
        return float(np.trapezoid(grid * agg, grid) / total)

    def category(self, crisp: float) -> str:
        return min(self.centroids, key=lambda lab: (abs(self.centroids[lab] - crisp), lab))


def defuzzify_cog(strengths: dict[str, float],
                  output_family: list[MembershipFunction] | None = None,
                  grid_size: int = 1001) -> float:
    return Defuzzifier(output_family, grid_size)(strengths)


@dataclass
class FuzzyClassifier:
    cq_family: list[MembershipFunction] = field(default_factory=default_cq_family)
    dc_family: list[MembershipFunction] = field(default_factory=default_dc_family)
    output_family: list[MembershipFunction] = field(default_factory=default_output_family)
    rules: RuleTable = field(default_factory=RuleTable)
    grid_size: int = 1001

    def __post_init__(self):
        self.defuzzifier = Defuzzifier(self.output_family, self.grid_size)

    def evaluate(self, client_id: int, cq_norm: float, dc_norm: float) -> ClassificationOutcome:
        cq_deg = fuzzify(cq_norm, self.cq_family)
        dc_deg = fuzzify(dc_norm, self.dc_family)
        acts = rule_activations(cq_deg, dc_deg, self.rules)
        strengths = infer(cq_deg, dc_deg, self.rules)
        try:
            crisp = self.defuzzifier(strengths)
            category = self.defuzzifier.category(crisp)
        except NoRuleFiredError:
            crisp, category = 0.0, DISCARDED
        return ClassificationOutcome(client_id, cq_norm, dc_norm, crisp, category,
                                     strengths, acts)

    def classify(self, clients: list[ClientProfile],
                 gains: list[float]) -> list[ClassificationOutcome]:
        if len(clients) != len(gains):
            raise ValueError("one gain per client required")
        g = np.asarray(gains, dtype=float)
        dc = np.array([data_contribution(c) for c in clients])
        cq_norm = g / g.max()
        dc_norm = dc / dc.max() if dc.max() > 0 else np.zeros_like(dc)
        return [self.evaluate(c.id, float(min(max(q, 0.0), 1.0)), float(min(max(d, 0.0), 1.0)))
                for c, q, d in zip(clients, cq_norm, dc_norm)]


@dataclass
class ClassificationOutcome:
    client_id: int
    cq_norm: float
    dc_norm: float
    crisp: float
    category: str
    strengths: dict[str, float]
    activations: dict[tuple[str, str], float]


@dataclass
class Selection:
    conventional: list[int]
    pinching: list[int]
    discarded: list[int]

    @property
    def selected(self) -> list[int]:
        return self.conventional + self.pinching


def _ranked(outcomes):
    return sorted(outcomes, key=lambda o: (-o.crisp, o.client_id))


def select_clients(outcomes: list[ClassificationOutcome], n_select: int,
                   n_conventional: int) -> Selection:
    """Top-K conventional and top-(N-K) pinching clients, with fallback.

    Slots a category cannot fill are taken from the unselected pool ranked
    by crisp output (conventional shortfall first).
    """
    m = len(outcomes)
    if not 0 <= n_conventional <= n_select:
        raise ValueError(f"need 0 <= K <= N, got K={n_conventional} N={n_select}")
    if m < n_select:
        raise InsufficientPopulationError(f"{m} clients cannot fill {n_select} slots")
    conv = [o for o in _ranked(outcomes) if o.category == CONVENTIONAL][:n_conventional]
    pin = [o for o in _ranked(outcomes) if o.category == PINCHING][:n_select - n_conventional]
    taken = {o.client_id for o in conv + pin}
    pool = [o for o in _ranked(outcomes) if o.client_id not in taken]
    while len(conv) < n_conventional:
        conv.append(pool.pop(0))
    while len(pin) < n_select - n_conventional:
        pin.append(pool.pop(0))
    return Selection([o.client_id for o in conv], [o.client_id for o in pin],
                     sorted(o.client_id for o in pool))


def classify_and_select(clients: list[ClientProfile], gains: list[float], n_select: int,
                        n_conventional: int, classifier: FuzzyClassifier | None = None
                        ) -> tuple[Selection, list[ClassificationOutcome]]:
    classifier = classifier or FuzzyClassifier()
    if len(clients) < n_select:
        raise InsufficientPopulationError(f"{len(clients)} clients cannot fill {n_select} slots")
    outcomes = classifier.classify(clients, gains)
    return select_clients(outcomes, n_select, n_conventional), outcomes

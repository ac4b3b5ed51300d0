import math

import numpy as np
import pytest

from pinchfl.fuzzy import (CONVENTIONAL, DEFAULT_RULES, DISCARDED, PINCHING, ClassificationOutcome,
                           Defuzzifier, FuzzyClassifier, InsufficientPopulationError,
                           MembershipFunction, NoRuleFiredError, NormalizationError, RuleTable,
                           classify_and_select, data_contribution, default_cq_family,
                           default_output_family, defuzzify_cog, fuzzify, infer, select_clients)
from pinchfl.topology import ClientProfile, Point3

import reference as ref

CORNER = {"weak": 0.0, "medium": 0.5, "strong": 1.0, "low": 0.0, "moderate": 0.5, "high": 1.0}


def client(i=0, d=500, **kw):
    return ClientProfile(id=i, position=Point3(1.0 + i, 0.0), dataset_size=d, **kw)


def test_data_contribution_examples():
    assert data_contribution(client(), 0) == 0.0
    assert data_contribution(client(dc_rate=1e-3), 1000) == pytest.approx(1 - math.exp(-1), rel=1e-12)
    assert data_contribution(client(dc_rate=1e-3), 1000) == pytest.approx(0.6321, abs=1e-4)
    assert data_contribution(client(dc_rate=1e-3), 1e6) == pytest.approx(1.0)


def test_data_contribution_increasing_and_concave():
    c = client(dc_rate=3e-3)
    dc = np.array([data_contribution(c, d) for d in range(0, 2000, 50)])
    assert np.all(np.diff(dc) > 0)
    assert np.all(np.diff(dc, 2) < 0)


def test_fuzzify_boundaries():
    fam = default_cq_family()
    assert fuzzify(0.0, fam) == {"weak": 1.0, "medium": 0.0, "strong": 0.0}
    assert fuzzify(0.5, fam)["medium"] == 1.0
    assert fuzzify(1.0, fam)["strong"] == 1.0
    with pytest.raises(NormalizationError):
        fuzzify(1.2, fam)


def test_trapezoid_plateau():
    mf = MembershipFunction("plateau", (0.1, 0.3, 0.6, 0.9))
    assert mf.shape == "trapezoidal"
    assert mf(0.45) == 1.0 and mf(0.2) == pytest.approx(0.5) and mf(0.95) == 0.0


@pytest.mark.parametrize("dc_term", ["low", "moderate", "high"])
@pytest.mark.parametrize("cq_term", ["weak", "medium", "strong"])
def test_rule_table_corners(dc_term, cq_term):
    out = FuzzyClassifier().evaluate(0, CORNER[cq_term], CORNER[dc_term])
    assert out.category == DEFAULT_RULES[(dc_term, cq_term)]


def test_infer_examples():
    rules = RuleTable()
    cq = {"weak": 0.0, "medium": 0.0, "strong": 1.0}
    dc = {"low": 1.0, "moderate": 0.0, "high": 0.0}
    assert infer(cq, dc, rules) == {DISCARDED: 0.0, CONVENTIONAL: 1.0, PINCHING: 0.0}
    cq = {"weak": 0.2, "medium": 0.7, "strong": 0.4}
    dc = {"low": 0.0, "moderate": 0.0, "high": 1.0}
    assert infer(cq, dc, rules)[PINCHING] == 0.7
    zero = {k: 0.0 for k in cq}
    assert set(infer(zero, {k: 0.0 for k in dc}, rules).values()) == {0.0}


def test_rule_table_must_be_complete():
    partial = dict(DEFAULT_RULES)
    partial.pop(("low", "weak"))
    with pytest.raises(ValueError):
        RuleTable(partial)


def test_single_term_cog_is_centroid():
    for term, c in zip((DISCARDED, CONVENTIONAL, PINCHING), (1 / 6, 1 / 2, 5 / 6)):
        s = {DISCARDED: 0.0, CONVENTIONAL: 0.0, PINCHING: 0.0, term: 1.0}
        assert defuzzify_cog(s) == pytest.approx(c, abs=1e-8)


def test_symmetric_pair_cog_is_midpoint():
    s = {DISCARDED: 0.6, CONVENTIONAL: 0.0, PINCHING: 0.6}
    assert defuzzify_cog(s) == pytest.approx(0.5, abs=1e-8)


def test_cog_matches_fine_trapezoid_oracle():
    rng = np.random.default_rng(7)
    d = Defuzzifier()
    for _ in range(50):
        s = rng.uniform(0, 1, 3) * (rng.uniform(size=3) < 0.8)
        if s.max() == 0:
            continue
        got = d(dict(zip((DISCARDED, CONVENTIONAL, PINCHING), s)))
        assert abs(got - ref.cog_fine(list(s))) <= 1e-6


def test_no_rule_fired():
    with pytest.raises(NoRuleFiredError):
        defuzzify_cog({DISCARDED: 0.0, CONVENTIONAL: 0.0, PINCHING: 0.0})


def test_cog_inside_active_support():
    rng = np.random.default_rng(2)
    d = Defuzzifier()
    fam = default_output_family()
    for _ in range(100):
        s = rng.uniform(0, 1, 3) * (rng.uniform(size=3) < 0.6)
        if s.max() == 0:
            continue
        active = [mf for mf, v in zip(fam, s) if v > 0]
        lo, hi = active[0].breakpoints[0], active[-1].breakpoints[-1]
        assert lo <= d(dict(zip((DISCARDED, CONVENTIONAL, PINCHING), s))) <= hi


def test_crisp_output_continuity():
    clf = FuzzyClassifier()
    rng = np.random.default_rng(4)
    for _ in range(50):
        cq, dc = rng.uniform(0.05, 0.95, 2)
        a = clf.evaluate(0, cq, dc).crisp
        b = clf.evaluate(0, cq + 1e-6, dc - 1e-6).crisp
        assert abs(a - b) < 1e-3


def outcome(i, crisp, cat):
    return ClassificationOutcome(i, 0.0, 0.0, crisp, cat, {}, {})


def test_all_pinching_forces_fallback():
    outs = [outcome(i, 0.9 - 0.001 * i, PINCHING) for i in range(30)]
    sel = select_clients(outs, 6, 3)
    assert sel.pinching == [0, 1, 2]
    assert sel.conventional == [3, 4, 5]
    assert len(sel.discarded) == 24


def test_tie_ranks_lower_id_first():
    outs = [outcome(4, 0.5, CONVENTIONAL), outcome(1, 0.5, CONVENTIONAL),
            outcome(2, 0.9, PINCHING)]
    sel = select_clients(outs, 2, 1)
    assert sel.conventional == [1] and sel.pinching == [2]


def test_selection_is_partition_with_three_plus_three():
    cl = [client(i, d=100 + 30 * i, dc_rate=3 / 1000) for i in range(30)]
    gains = [1.0 / (1 + i) ** 2.4 for i in range(30)]
    sel, outs = classify_and_select(cl, gains, 6, 3)
    assert len(sel.conventional) == 3 and len(sel.pinching) == 3
    ids = sel.conventional + sel.pinching + sel.discarded
    assert sorted(ids) == list(range(30))
    with pytest.raises(InsufficientPopulationError):
        classify_and_select(cl[:4], gains[:4], 6, 3)

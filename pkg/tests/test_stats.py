from __future__ import annotations

import math
import random
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ragtemp.errors import EmptyGroup, MixedKeys, NoComparablePairs, NonBaselineEntry, TooFewRuns, ZeroMean
from ragtemp.stats import (
    ConditionKey,
    ConditionStats,
    RunStats,
    aggregate_all,
    aggregate_condition,
    baseline_cv,
    fragile_samples,
    group_run_stats,
    per_sample_stats,
)

KEY = ConditionKey("m", 0.4, "Original", "bridge")


def test_constant_runs():
    s = per_sample_stats([0.9, 0.9, 0.9], "s", KEY)
    assert (s.mean, s.std, s.cv) == (0.9, 0.0, 0.0)


def test_spread_runs():
    s = per_sample_stats([0.8, 0.9, 1.0], "s", KEY)
    # oracle: statistics.stdev -> 0.1, cv = 0.1 / 0.9
    assert s.mean == pytest.approx(0.9, abs=1e-15)
    assert s.std == pytest.approx(statistics.stdev([0.8, 0.9, 1.0]), abs=1e-15)
    assert s.cv == pytest.approx(0.1111, abs=1e-4)


def test_run_errors():
    with pytest.raises(TooFewRuns):
        per_sample_stats([0.5], "s", KEY)
    with pytest.raises(ValueError):
        per_sample_stats([0.5, 1.5], "s", KEY)
    assert per_sample_stats([0.0, 0.0], "s", KEY).cv == 0.0


def test_zero_mean_with_spread_is_an_error():
    # unreachable for [0, 1] scores; exercised through a negative-free path is impossible,
    # so check the guard directly on a crafted call
    with pytest.raises(ZeroMean):
        from ragtemp import stats as mod
        original = mod._mean
        try:
            mod._mean = lambda xs: 0.0
            mod.per_sample_stats([0.2, 0.4], "s", KEY)
        finally:
            mod._mean = original


@settings(max_examples=200, deadline=None)
@given(scores=st.lists(st.one_of(st.just(0.0), st.floats(1e-6, 1)), min_size=2, max_size=8))
def test_per_sample_matches_oracle(scores):
    s = per_sample_stats(scores, "s", KEY)
    mean, std, cv = oracles.sample_stats(scores)
    assert abs(s.mean - mean) < 1e-12 and abs(s.std - std) < 1e-12
    if std > 0 and mean > 1e-3:
        assert abs(s.cv - cv) < 1e-12 * max(1.0, cv)


@settings(max_examples=100, deadline=None)
@given(scores=st.lists(st.floats(0.01, 0.5), min_size=2, max_size=6), c=st.floats(0.1, 2.0))
def test_cv_scale_invariant(scores, c):
    a = per_sample_stats(scores, "s", KEY)
    b = per_sample_stats([x * c for x in scores], "s", KEY)
    assert b.cv == pytest.approx(a.cv, rel=1e-9, abs=1e-12)


def _rs(sid, mean, std=0.0, cv=0.0, key=KEY):
    return RunStats(sid, key, 3, mean, std, cv)


def test_aggregate_examples():
    one = _rs("a", 0.8, 0.1, 0.125)
    c = aggregate_condition([one, one])
    assert (c.mean_of_means, c.mean_of_stds, c.mean_cv, c.n_samples) == (0.8, 0.1, 0.125, 2)
    assert aggregate_condition([_rs("a", 0.8), _rs("b", 1.0)]).mean_of_means == pytest.approx(0.9)
    with pytest.raises(EmptyGroup):
        aggregate_condition([])
    with pytest.raises(MixedKeys):
        aggregate_condition([_rs("a", 0.8), _rs("b", 0.8, key=ConditionKey("m", 0.6, "Original", "bridge"))])


def test_singleton_aggregate_equals_input():
    s = _rs("a", 0.7, 0.05, 0.05 / 0.7)
    c = aggregate_condition([s])
    assert (c.mean_of_means, c.mean_of_stds, c.mean_cv) == (s.mean, s.std, s.cv)


def test_condition_cv_secondary_column():
    c = ConditionStats(KEY, 2, 0.5, 0.1, 0.3)
    assert c.condition_cv == pytest.approx(0.2)
    assert ConditionStats(KEY, 1, 0.0, 0.0, 0.0).condition_cv == 0.0


def _base(temp, mean_cv, pert="Original", model="m", qt="bridge"):
    return ConditionStats(ConditionKey(model, temp, pert, qt), 1, 0.5, 0.1, mean_cv)


def test_baseline_cv():
    assert baseline_cv([_base(t / 5, 0.05) for t in range(11)]) == pytest.approx(0.05)
    assert baseline_cv([_base(0.0, 0.1), _base(2.0, 0.3)]) == pytest.approx(0.2)
    with pytest.raises(NonBaselineEntry):
        baseline_cv([_base(0.0, 0.1), _base(0.2, 0.1, pert="SentenceRemoval")])
    with pytest.raises(MixedKeys):
        baseline_cv([_base(0.0, 0.1), _base(0.2, 0.1, model="other")])
    with pytest.raises(EmptyGroup):
        baseline_cv([])


def _pair(sid, base, pert, T=0.4):
    return [_rs(sid, base, key=ConditionKey("m", T, "Original", "bridge")),
            _rs(sid, pert, key=ConditionKey("m", T, "SentenceRemoval", "bridge"))]


def test_fragile_examples():
    rows = _pair("A", 0.9, 0.4) + _pair("B", 0.6, 0.5)
    sid, gap = fragile_samples(rows, "m", 0.4, "bridge", "SentenceRemoval")
    assert sid == "A" and gap == pytest.approx(0.5)
    tie = _pair("B", 0.75, 0.5) + _pair("A", 0.5, 0.25)  # exact binary fractions
    assert fragile_samples(tie, "m", 0.4, "bridge", "SentenceRemoval")[0] == "A"
    only_base = [_pair("A", 0.9, 0.4)[0], _pair("B", 0.9, 0.4)[1]]
    with pytest.raises(NoComparablePairs):
        fragile_samples(only_base, "m", 0.4, "bridge", "SentenceRemoval")


@settings(max_examples=150, deadline=None)
@given(data=st.data())
def test_fragile_matches_oracle_and_ignores_order(data):
    ids = data.draw(st.lists(st.sampled_from("ABCDEFGH"), min_size=1, max_size=8, unique=True))
    grid = st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0])  # coarse values force ties
    base = {i: data.draw(grid) for i in ids}
    pert = {i: data.draw(grid) for i in ids if data.draw(st.booleans()) or i == ids[0]}
    rows = [r for i in ids for r in _pair(i, base[i], pert.get(i, 0.0))
            if i in pert or r.key.perturbation == "Original"]
    want = oracles.fragile(base, pert)
    random.Random(data.draw(st.integers(0, 99))).shuffle(rows)
    got = fragile_samples(rows, "m", 0.4, "bridge", "SentenceRemoval")
    assert got[0] == want[0] and abs(got[1] - want[1]) < 1e-12


def test_grouping_and_aggregation_against_oracle():
    rng = random.Random(3)
    rows = []
    for t in (0.0, 1.0):
        for sid in "abc":
            for _ in range(3):
                rows.append((ConditionKey("m", t, "Original", "bridge"), sid, rng.random()))
    rows.append((ConditionKey("m", 2.0, "Original", "bridge"), "z", 0.5))  # single run: skipped
    run = group_run_stats(rows)
    assert len(run) == 6 and all(r.sample_id != "z" for r in run)
    conds = aggregate_all(run)
    assert [c.key.temperature for c in conds] == [0.0, 1.0]
    for c in conds:
        per = [oracles.sample_stats([v for k, s, v in rows if k == c.key and s == sid]) for sid in "abc"]
        assert abs(c.mean_of_means - math.fsum(p[0] for p in per) / 3) < 1e-12
        assert abs(c.mean_of_stds - math.fsum(p[1] for p in per) / 3) < 1e-12
        assert abs(c.mean_cv - math.fsum(p[2] for p in per) / 3) < 1e-12


def test_condition_key_normalizes():
    from ragtemp.perturb import PerturbationKind

    assert ConditionKey("m", 1, PerturbationKind.NerReplacement, "bridge") == ConditionKey(
        "m", 1.0, "NerReplacement", "bridge")
    with pytest.raises(ValueError):
        ConditionKey("m", 1, "Bogus", "bridge")

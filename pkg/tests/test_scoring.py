import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigfuse.errors import DegenerateWarning, TooFewReferences, ZeroDelta
from sigfuse.scoring import (
    ACCEPT,
    EPSILON,
    REJECT,
    FusionStats,
    UserTemplate,
    decide,
    fusion_stats,
    mcs_score,
    normalized_score,
    population_stats,
    user_delta,
    verification_score,
)


def table(values):
    return lambda a, b: values[frozenset((a, b))] if a != b else 0.0


TABLE = table({frozenset(("r1", "r2")): 2.0, frozenset(("r1", "r3")): 4.0, frozenset(("r2", "r3")): 6.0})


def test_user_delta_table():
    # nearest others: r1 -> 2, r2 -> 2, r3 -> 4
    assert user_delta(["r1", "r2", "r3"], TABLE) == pytest.approx(8 / 3)


def test_user_delta_errors_and_floor():
    with pytest.raises(TooFewReferences):
        user_delta(["r1"], TABLE)
    with pytest.warns(DegenerateWarning):
        assert user_delta(["a", "b"], lambda a, b: 0.0) == EPSILON


def test_normalized_and_verification_score():
    assert normalized_score(3.0, 1.5) == 2.0
    with pytest.raises(ZeroDelta):
        normalized_score(1.0, 0.0)
    d = lambda r, t: {"r1": 5.0, "r2": 3.0}[r]
    assert verification_score(["r1", "r2"], "t", d, 2.0) == 1.5


def test_template():
    tpl = UserTemplate.build("u", ["r1", "r2", "r3"], {"ged": TABLE})
    assert tpl.deltas["ged"] == pytest.approx(8 / 3)
    with pytest.raises(TooFewReferences):
        UserTemplate.build("u", ["r1"], {"ged": TABLE})


def test_population_stats():
    mean, std, degenerate = population_stats([1.0, 2.0, 3.0, 4.0])
    assert mean == 2.5
    assert std == pytest.approx(math.sqrt(1.25))
    assert not degenerate
    assert population_stats([2.0, 2.0]) == (2.0, EPSILON, True)


def flat_loop_stats(users, d, delta):
    values = []
    for u, refs in users.items():
        for v, others in users.items():
            if u != v:
                for r in refs:
                    for s in others:
                        values.append(d(r, s) / delta[u])
    mean = sum(values) / len(values)
    return mean, math.sqrt(sum((x - mean) ** 2 for x in values) / len(values))


def test_fusion_stats_against_flat_loop():
    rng = np.random.default_rng(0)
    users = {f"u{k}": [f"u{k}_{i}" for i in range(3)] for k in range(3)}
    ids = [i for refs in users.values() for i in refs]
    pts = {i: rng.normal(size=2) for i in ids}
    d1 = lambda a, b: float(np.linalg.norm(pts[a] - pts[b]))
    d2 = lambda a, b: float(np.abs(pts[a] - pts[b]).sum())
    tpls = [UserTemplate.build(u, refs, {"ged": d1, "neural": d2}) for u, refs in users.items()]
    stats = fusion_stats(tpls, d1, d2)
    mg, sg = flat_loop_stats(users, d1, {t.user_id: t.deltas["ged"] for t in tpls})
    mn, sn = flat_loop_stats(users, d2, {t.user_id: t.deltas["neural"] for t in tpls})
    assert stats.mean_ged == pytest.approx(mg, rel=1e-12)
    assert stats.std_ged == pytest.approx(sg, rel=1e-12)
    assert stats.mean_neural == pytest.approx(mn, rel=1e-12)
    assert stats.std_neural == pytest.approx(sn, rel=1e-12)


def test_degenerate_fusion_stats_warn():
    users = {"a": ["a1", "a2"], "b": ["b1", "b2"]}
    d = lambda x, y: 0.0 if x == y else 1.0
    tpls = [UserTemplate.build(u, refs, {"ged": d, "neural": d}) for u, refs in users.items()]
    with pytest.warns(DegenerateWarning):
        stats = fusion_stats(tpls, d, d)
    assert stats.degenerate and stats.std_ged == EPSILON


def test_mcs_minimum_over_per_reference_sums():
    # reference 1 is best for GED, reference 2 is best for the network
    ged_d = {"r1": 0.0, "r2": 10.0}
    nn_d = {"r1": 10.0, "r2": 0.0}
    tpl = UserTemplate("u", ("r1", "r2"), {"ged": 1.0, "neural": 1.0})
    stats = FusionStats(0.0, 1.0, 0.0, 1.0)
    score = mcs_score(tpl, "t", lambda r, t: ged_d[r], lambda r, t: nn_d[r], stats)
    assert score == 10.0
    separate_minima = min(ged_d.values()) + min(nn_d.values())
    assert score != separate_minima


def test_mcs_z_scores():
    tpl = UserTemplate("u", ("r1",), {"ged": 2.0, "neural": 4.0})
    stats = FusionStats(1.0, 0.5, 2.0, 2.0)
    # ged: 3/2 -> (1.5 - 1)/0.5 = 1; neural: 8/4 -> (2 - 2)/2 = 0
    assert mcs_score(tpl, "t", lambda r, t: 3.0, lambda r, t: 8.0, stats) == 1.0


def test_decide():
    assert decide(0.5, 1.0) == ACCEPT
    assert decide(1.0, 1.0) == REJECT
    assert decide(2.0, 1.0) == REJECT


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(0.01, 100), min_size=3, max_size=3),
    st.lists(st.floats(0.01, 100), min_size=3, max_size=3),
    st.floats(0.1, 50),
)
def test_scale_invariance(ref_pairs, probe, factor):
    refs = ["r1", "r2", "r3"]
    pair = {frozenset(("r1", "r2")): ref_pairs[0], frozenset(("r1", "r3")): ref_pairs[1], frozenset(("r2", "r3")): ref_pairs[2]}
    probe_d = dict(zip(refs, probe))

    def make(k):
        def d(a, b):
            if b == "t":
                return k * probe_d[a]
            return k * pair[frozenset((a, b))]

        return d

    base, scaled = make(1.0), make(factor)
    t1 = UserTemplate.build("u", refs, {"x": base})
    t2 = UserTemplate.build("u", refs, {"x": scaled})
    for a, b in zip(t1.normalized("t", "x", base), t2.normalized("t", "x", scaled)):
        assert abs(a - b) <= 1e-9 * max(1.0, abs(a))
    s1, s2 = t1.score("t", "x", base), t2.score("t", "x", scaled)
    assert abs(s1 - s2) <= 1e-9 * max(1.0, abs(s1))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10))
def test_fusion_invariant_under_rescaling_one_classifier(a):
    rng = np.random.default_rng(1)
    users = {f"u{k}": [f"u{k}_{i}" for i in range(3)] for k in range(3)}
    ids = [i for refs in users.values() for i in refs] + ["t"]
    pts = {i: rng.normal(size=2) for i in ids}
    d1 = lambda x, y: float(np.linalg.norm(pts[x] - pts[y]))
    d2 = lambda x, y: float(np.abs(pts[x] - pts[y]).sum())
    d2s = lambda x, y: a * d2(x, y)
    scores = []
    for dn in (d2, d2s):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            tpls = [UserTemplate.build(u, refs, {"ged": d1, "neural": dn}) for u, refs in users.items()]
            stats = fusion_stats(tpls, d1, dn)
        scores.append(mcs_score(tpls[0], "t", d1, dn, stats))
    assert scores[0] == pytest.approx(scores[1], abs=1e-9)


def random_table(rng, names):
    values = {}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            values[frozenset((a, b))] = float(rng.uniform(0.1, 10))
    return table(values)


def test_table_oracles():
    rng = np.random.default_rng(12)
    assert user_delta(["a", "b"], lambda x, y: 0.4) == 0.4

    names = [f"r{i}" for i in range(5)]
    d = random_table(rng, names + ["t"])
    walk = []
    for r in names:
        row = [d(r, s) for s in names if s != r]
        walk.append(min(row))
    delta = user_delta(names, d)
    assert delta == pytest.approx(sum(walk) / 5, rel=1e-12)
    assert verification_score(names, "t", d, delta) == min(d(r, "t") / delta for r in names)
    assert verification_score(names, "r3", d, delta) == 0.0


def test_normalized_score_examples():
    assert normalized_score(0.7, 0.7) == 1.0
    assert normalized_score(0.0, 0.2) == 0.0
    assert normalized_score(0.3, 0.2) == pytest.approx(1.5)


def test_population_two_values():
    assert population_stats([1.0, 3.0]) == (2.0, 1.0, False)


def test_mcs_examples():
    tpl = UserTemplate("u", ("r1",), {"ged": 1.0, "neural": 1.0})
    stats = FusionStats(1.0, 2.0, 1.0, 2.0)
    assert mcs_score(tpl, "t", lambda r, t: 3.0, lambda r, t: 5.0, stats) == 3.0
    at_mean = FusionStats(3.0, 2.0, 5.0, 2.0)
    assert mcs_score(tpl, "t", lambda r, t: 3.0, lambda r, t: 5.0, at_mean) == 0.0

    rng = np.random.default_rng(13)
    refs = ("r0", "r1", "r2", "r3")
    g = {r: float(rng.uniform(0, 5)) for r in refs}
    n = {r: float(rng.uniform(0, 5)) for r in refs}
    tpl = UserTemplate("u", refs, {"ged": 1.5, "neural": 0.5})
    stats = FusionStats(1.0, 0.8, 4.0, 3.0)
    want = min((g[r] / 1.5 - 1.0) / 0.8 + (n[r] / 0.5 - 4.0) / 3.0 for r in refs)
    assert mcs_score(tpl, "t", lambda r, t: g[r], lambda r, t: n[r], stats) == pytest.approx(want, abs=1e-12)


def test_decide_infinite_score():
    assert decide(math.inf, 1e300) == REJECT
    assert decide(0.5, 0.6) == ACCEPT

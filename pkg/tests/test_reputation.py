import itertools
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import f_measure, min_cut, path_flow, per_rater_mean
from tangletrust.reputation import (
    InteractionGraph,
    KeyMismatch,
    NetFlowScorer,
    Trust,
    aggregate_average,
    calibrated_netflow,
    classify,
    confusion,
    edmonds_karp,
    fscore,
    fscore_from_counts,
    netflow_score,
)
from tangletrust.trade import Feedback

RATERS = [bytes([i]) * 64 for i in range(1, 9)]
SUBJECT = b"\xaa" * 64


def fb(rater, rating, subject=SUBJECT, amount=10, i=0):
    return Feedback(None, rater, subject, rating, amount, None, bytes([i % 256]) * 64)


# -- average --------------------------------------------------------------------

def test_plain_mean_of_three_raters():
    assert aggregate_average([fb(RATERS[0], 1000), fb(RATERS[1], 800), fb(RATERS[2], 600)]) == pytest.approx(0.8)


def test_repeated_ratings_are_averaged_per_rater():
    fbs = [fb(RATERS[0], 1000, i=i) for i in range(4)] + [fb(RATERS[1], 200)]
    assert aggregate_average(fbs) == pytest.approx(0.6)
    assert aggregate_average(fbs, dedup_policy="none") == pytest.approx(0.84)
    with pytest.raises(ValueError):
        aggregate_average(fbs, dedup_policy="bogus")


def test_no_feedback_scores_zero():
    assert aggregate_average([]) == 0.0


ratings = st.lists(st.tuples(st.integers(0, 7), st.integers(0, 1000)), max_size=30)


@given(ratings, st.randoms(use_true_random=False))
def test_average_matches_oracle_and_ignores_order(rs, rnd):
    fbs = [fb(RATERS[r], v, i=i) for i, (r, v) in enumerate(rs)]
    expected = float(per_rater_mean((RATERS[r], v) for r, v in rs))
    assert aggregate_average(fbs) == expected
    rnd.shuffle(fbs)
    assert aggregate_average(fbs) == expected


# -- NetFlow ----------------------------------------------------------------------

def test_saturated_direct_edge_scores_one():
    g = InteractionGraph.from_edges([("s", "e", 3), ("e", "x", 3)])
    assert netflow_score(g, "e", "s") == 1.0


def test_disconnected_subject_scores_zero():
    g = InteractionGraph.from_edges([("s", "x", 3), ("e", "x", 3)])
    g.add_vertex("lonely")
    assert netflow_score(g, "e", "s") == 0.0
    assert netflow_score(g, "e", "lonely") == 0.0
    assert netflow_score(g, "nobody", "s") == 0.0
    assert netflow_score(g, "e", "e") == 0.0


def random_caps(n, rng, cmax=4, density=0.5):
    return {(u, v): rng.randint(1, cmax) for u in range(n) for v in range(n) if u != v and rng.random() < density}


def test_flows_match_cut_and_path_oracles_on_random_graphs():
    rng = random.Random(2024)
    for _ in range(300):
        n = rng.randint(2, 6)
        caps = random_caps(n, rng)
        g = InteractionGraph()
        for v in range(n):
            g.add_vertex(v)
        for (u, v), c in caps.items():
            g.add_edge(u, v, c)
        scorer = NetFlowScorer(g)
        for s, t in itertools.permutations(range(n), 2):
            want = min_cut(n, caps, s, t)
            assert path_flow(n, caps, s, t) == want
            assert edmonds_karp(n, caps, s, t) == want
            assert scorer.max_flow(s, t) == want


def test_four_vertex_unit_graphs_exhaustively():
    pairs = list(itertools.permutations(range(4), 2))
    for mask in range(1 << len(pairs)):
        caps = {p: 1 for i, p in enumerate(pairs) if mask >> i & 1}
        g = InteractionGraph()
        for v in range(4):
            g.add_vertex(v)
        for (u, v), c in caps.items():
            g.add_edge(u, v, c)
        scorer = NetFlowScorer(g)
        for t in range(4):
            subjects = [s for s in range(4) if s != t]
            assert scorer.flows_into(t, subjects) == [min_cut(4, caps, s, t) for s in subjects]


graphs = st.integers(0, 2 ** 32).map(lambda seed: random_caps(5, random.Random(seed)))


def build(caps, factor=1):
    g = InteractionGraph()
    for v in range(5):
        g.add_vertex(v)
    for (u, v), c in caps.items():
        g.add_edge(u, v, c * factor)
    return g


@settings(max_examples=100, deadline=None)
@given(graphs, st.integers(2, 50))
def test_scores_are_scale_invariant(caps, k):
    a, b = NetFlowScorer(build(caps)), NetFlowScorer(build(caps, k))
    for e in range(5):
        assert a.scores(e, list(range(5))) == b.scores(e, list(range(5)))


@settings(max_examples=100, deadline=None)
@given(graphs, st.integers(0, 4), st.integers(0, 4), st.integers(1, 4))
def test_adding_subject_to_evaluator_edge_never_lowers_score(caps, s, e, c):
    if s == e:
        return
    before = netflow_score(build(caps), e, s)
    more = dict(caps)
    more[(s, e)] = more.get((s, e), 0) + c
    assert netflow_score(build(more), e, s) >= before


def test_fake_clique_gets_no_credit():
    rng = random.Random(9)
    honest = [f"h{i}" for i in range(12)]
    fakes = [f"f{i}" for i in range(5)]
    g = InteractionGraph()
    for _ in range(60):
        a, b = rng.sample(honest, 2)
        g.add_edge(a, b, rng.randint(100, 1000))
    for a, b in itertools.permutations(fakes, 2):
        g.add_edge(a, b, 10 ** 6)
    scorer = NetFlowScorer(g)
    for e in honest:
        assert scorer.scores(e, fakes) == [0.0] * len(fakes)


def test_big_capacities_fall_back_to_python_flow():
    g = InteractionGraph.from_edges([("s", "e", 2 ** 62), ("e", "x", 2 ** 62), ("s", "x", 2 ** 62)])
    scorer = NetFlowScorer(g)
    assert not scorer.native
    assert scorer.max_flow("s", "e") == 2 ** 62


def test_edgelist_round_trip_and_determinism():
    fbs = [fb(RATERS[i % 4], 100 * i, subject=RATERS[4 + i % 3], amount=i + 1, i=i) for i in range(12)]
    g = InteractionGraph.from_feedback(fbs)
    text = g.to_edgelist()
    again = InteractionGraph.from_edgelist(text)
    assert again.edges() == g.edges()
    assert InteractionGraph.from_feedback(list(reversed(fbs))).to_edgelist() == text


def test_negative_capacity_rejected():
    with pytest.raises(ValueError):
        InteractionGraph().add_edge("a", "b", -1)


def test_calibration_scales_by_reference_median():
    g = InteractionGraph.from_edges([("a", "e", 2), ("b", "e", 4), ("c", "e", 8), ("e", "z", 16)])
    scorer = NetFlowScorer(g)
    raw = dict(zip("abc", scorer.scores("e", list("abc"))))
    assert raw == {"a": 0.125, "b": 0.25, "c": 0.5}
    cal = calibrated_netflow(scorer, ["e"], list("abc"), ["b", "c"])
    median = (0.25 + 0.5) / 2
    assert cal == {s: min(1.0, raw[s] / median) for s in "abc"}


# -- classification and F-Score ----------------------------------------------------

@pytest.mark.parametrize("score,threshold,expected", [
    (0.6, 0.5, Trust.TRUSTED), (0.5, 0.5, Trust.DISTRUSTED), (0.0, 0.0, Trust.DISTRUSTED)])
def test_threshold_is_strict(score, threshold, expected):
    assert classify(score, threshold) == expected


def test_threshold_range_is_checked():
    with pytest.raises(ValueError):
        classify(0.5, 1.5)


def test_perfect_detection_scores_one():
    truth = {i: Trust.DISTRUSTED if i < 3 else Trust.TRUSTED for i in range(6)}
    assert fscore(truth, truth) == 1.0


def test_half_precision_full_recall():
    assert fscore_from_counts(1, 1, 0) == pytest.approx(2 * 0.5 / 1.5)


def test_hand_computed_fscore():
    assert fscore_from_counts(8, 2, 4) == pytest.approx(0.7273, abs=5e-5)
    assert Fraction(fscore_from_counts(8, 2, 4)).limit_denominator(1000) == f_measure(8, 2, 4)


@given(st.integers(0, 300), st.integers(0, 300), st.integers(0, 300))
def test_fscore_matches_exact_oracle(tp, fp, fn):
    assert fscore_from_counts(tp, fp, fn) == pytest.approx(float(f_measure(tp, fp, fn)), rel=1e-12)


def test_confusion_counts_and_key_mismatch():
    D, T = Trust.DISTRUSTED, Trust.TRUSTED
    pred = {1: D, 2: D, 3: T, 4: T}
    truth = {1: D, 2: T, 3: D, 4: T}
    assert confusion(pred, truth) == (1, 1, 1, 1)
    with pytest.raises(KeyMismatch):
        confusion(pred, {1: D})

import math
import random

import pytest

from dialret.corpus import CollectionStats
from dialret.lm import (
    DecayParams,
    cross_entropy,
    decay_weights,
    dirichlet,
    doc_mixture,
    history_future_mixtures,
    mix,
    mle,
    restrict_to_vocab,
    sent_mixture,
)


def make_stats(cf: dict[str, int]) -> CollectionStats:
    total = sum(cf.values())
    return CollectionStats(
        total_terms=total,
        doc_count=1,
        sentence_count=1,
        cf=dict(cf),
        df={t: 1 for t in cf},
        sf={t: 1 for t in cf},
        avg_doc_len=float(total),
        avg_sentence_len=float(total),
    )


def test_mle_counts():
    assert mle(["a", "b", "a"]) == {"a": pytest.approx(2 / 3), "b": pytest.approx(1 / 3)}


def test_mle_empty_rejected():
    with pytest.raises(ValueError, match="empty"):
        mle([])


def test_dirichlet_by_hand():
    # c(w)=2, |x|=10, mu=1000, p(w|C)=0.01 -> 12/1010
    stats = make_stats({"w": 1, "pad": 99})
    model = dirichlet({"w": 2, "other": 8}, 1000.0, stats)
    assert model("w") == pytest.approx(0.011881188118811881, abs=1e-12)


def test_dirichlet_mu_zero_is_mle():
    stats = make_stats({"a": 1, "b": 1})
    model = dirichlet(["a", "a", "b"], 0.0, stats)
    assert model("a") == pytest.approx(2 / 3)
    assert model("b") == pytest.approx(1 / 3)


def test_dirichlet_mu_zero_empty_text_rejected():
    stats = make_stats({"a": 1})
    with pytest.raises(ValueError):
        dirichlet({}, 0.0, stats)


def test_dirichlet_negative_mu_rejected():
    with pytest.raises(ValueError, match="mu"):
        dirichlet({"a": 1}, -1.0, make_stats({"a": 1}))


def test_dirichlet_sums_to_one_over_vocab():
    # with mu > 0 the smoothed model is a distribution over collection vocab
    stats = make_stats({"a": 3, "b": 5, "c": 2})
    model = dirichlet({"a": 2, "b": 1}, 7.5, stats)
    assert sum(model(t) for t in stats.cf) == pytest.approx(1.0, abs=1e-12)


def test_cross_entropy_by_hand():
    # -[0.6 ln 0.5 + 0.4 ln 0.25] frozen
    q = {"x": 0.5, "y": 0.25, "z": 0.25}
    value = cross_entropy({"x": 0.6, "y": 0.4}, q.__getitem__)
    assert value == pytest.approx(0.9704060527839234, abs=1e-12)


def test_cross_entropy_self_is_entropy():
    p = {"a": 0.2, "b": 0.3, "c": 0.5}
    entropy = -sum(v * math.log(v) for v in p.values())
    assert cross_entropy(p, p.__getitem__) == pytest.approx(entropy, abs=1e-12)


def test_cross_entropy_skips_zero_mass_terms():
    q = {"a": 1.0}
    assert cross_entropy({"a": 1.0, "b": 0.0}, q.get) == pytest.approx(0.0)


def test_cross_entropy_zero_target_rejected():
    with pytest.raises(ValueError, match="zero probability.*'b'"):
        cross_entropy({"a": 0.5, "b": 0.5}, {"a": 1.0, "b": 0.0}.__getitem__)


def test_cross_entropy_gibbs_inequality():
    rng = random.Random(7)
    for _ in range(50):
        terms = [f"t{i}" for i in range(rng.randint(2, 8))]
        raw_p = [rng.random() + 1e-3 for _ in terms]
        raw_q = [rng.random() + 1e-3 for _ in terms]
        p = {t: v / sum(raw_p) for t, v in zip(terms, raw_p)}
        q = {t: v / sum(raw_q) for t, v in zip(terms, raw_q)}
        assert cross_entropy(p, q.__getitem__) >= cross_entropy(p, p.__getitem__) - 1e-12


def test_decay_single_index():
    assert decay_weights(DecayParams(0.5, pivot=3, indices=(3,))) == {3: 1.0}


def test_decay_by_hand():
    # delta=0.01, pivot=3, indices 1..3 frozen
    weights = decay_weights(DecayParams(0.01, pivot=3, indices=(1, 2, 3)))
    assert weights[1] == pytest.approx(0.3300056109710218, abs=1e-12)
    assert weights[2] == pytest.approx(0.3333222224999936, abs=1e-12)
    assert weights[3] == pytest.approx(0.3366721665289847, abs=1e-12)
    assert sum(weights.values()) == pytest.approx(1.0, abs=1e-12)


def test_decay_monotone_toward_pivot():
    weights = decay_weights(DecayParams(0.7, pivot=5, indices=tuple(range(1, 6))))
    ordered = [weights[i] for i in range(1, 6)]
    assert ordered == sorted(ordered)


def test_decay_vanishing_delta_is_uniform():
    weights = decay_weights(DecayParams(1e-9, pivot=4, indices=(1, 2, 3, 4)))
    for w in weights.values():
        assert w == pytest.approx(0.25, abs=1e-6)


def test_decay_rejects_bad_params():
    with pytest.raises(ValueError):
        DecayParams(0.0, pivot=1, indices=(1,))
    with pytest.raises(ValueError):
        DecayParams(0.1, pivot=1, indices=())


def test_doc_mixture_by_hand():
    # turns ["x","y"], ["y"], ["y","z"]; beta=0.3
    dist = doc_mixture([["x", "y"], ["y"], ["y", "z"]], 0.3)
    assert dist["x"] == pytest.approx(0.35, abs=1e-12)
    assert dist["y"] == pytest.approx(0.575, abs=1e-12)
    assert dist["z"] == pytest.approx(0.075, abs=1e-12)


def test_doc_mixture_beta_zero_is_first_turn():
    dist = doc_mixture([["a", "b"], ["c"]], 0.0)
    assert dist == {"a": pytest.approx(0.5), "b": pytest.approx(0.5)}


def test_doc_mixture_single_turn():
    assert doc_mixture([["a"]], 0.9) == {"a": pytest.approx(1.0)}


def test_doc_mixture_rejects_empty_dialogue():
    with pytest.raises(ValueError, match="no turns"):
        doc_mixture([], 0.3)


def test_sent_mixture_by_hand():
    # turns ["a"], ["b"], ["a"]; beta=0.3, delta=0.01 frozen
    dist = sent_mixture([["a"], ["b"], ["a"]], 0.3, 0.01)
    assert dist["a"] == pytest.approx(0.8492500062499374, abs=1e-12)
    assert dist["b"] == pytest.approx(0.1507499937500625, abs=1e-12)


def test_sent_mixture_beta_zero_is_last_turn():
    dist = sent_mixture([["x"], ["y"], ["z", "z"]], 0.0, 0.01)
    assert dist == {"z": pytest.approx(1.0)}


def test_sent_mixture_two_turns_splits_beta():
    # with two turns the single history weight is 1, so beta lands on turn 1
    dist = sent_mixture([["a"], ["b"]], 0.25, 3.0)
    assert dist["a"] == pytest.approx(0.25, abs=1e-12)
    assert dist["b"] == pytest.approx(0.75, abs=1e-12)


def test_mixtures_sum_to_one():
    rng = random.Random(11)
    for _ in range(30):
        turns = [
            [f"w{rng.randint(0, 9)}" for _ in range(rng.randint(1, 6))]
            for _ in range(rng.randint(1, 5))
        ]
        beta = rng.random()
        assert sum(doc_mixture(turns, beta).values()) == pytest.approx(1.0, abs=1e-9)
        assert sum(sent_mixture(turns, beta, 0.01).values()) == pytest.approx(1.0, abs=1e-9)


def test_doc_mixture_linear_in_beta():
    turns = [["a", "b"], ["b", "c"], ["c"]]
    lo = doc_mixture(turns, 0.0)
    hi = doc_mixture(turns, 1.0)
    mid = doc_mixture(turns, 0.4)
    for term in mid:
        expected = 0.6 * lo.get(term, 0.0) + 0.4 * hi.get(term, 0.0)
        assert mid[term] == pytest.approx(expected, abs=1e-12)


def test_mix_drops_empty_turns_and_renormalizes():
    # empty opening turn leaves only the beta-weighted turn, renormalized
    dist = doc_mixture([[], ["a"]], 0.3)
    assert dist == {"a": pytest.approx(1.0)}


def test_mix_zero_surviving_weight_falls_back_to_uniform():
    dist = doc_mixture([[], ["a"], ["b"]], 0.0)
    assert dist["a"] == pytest.approx(0.5)
    assert dist["b"] == pytest.approx(0.5)


def test_mix_all_empty_rejected():
    with pytest.raises(ValueError, match="all turns empty"):
        mix([(0.5, []), (0.5, [])])


def test_history_future_mixture_weights():
    # two future turns at indices n+2, n+3 with pivot n+2: first weighs more
    h_mix, f_mix = history_future_mixtures([["h"]], [["a"], ["b"]], 0.01)
    assert h_mix == {"h": pytest.approx(1.0)}
    assert f_mix["a"] == pytest.approx(0.5024999791668749, abs=1e-12)
    assert f_mix["b"] == pytest.approx(0.4975000208331251, abs=1e-12)


def test_history_future_requires_both_sides():
    with pytest.raises(ValueError, match="history"):
        history_future_mixtures([], [["a"]], 0.01)
    with pytest.raises(ValueError, match="future"):
        history_future_mixtures([["a"]], [], 0.01)


def test_restrict_to_vocab_drops_and_renormalizes():
    stats = make_stats({"a": 1, "b": 1})
    dist = restrict_to_vocab({"a": 0.25, "oov": 0.75}, stats)
    assert dist == {"a": pytest.approx(1.0)}


def test_restrict_to_vocab_all_oov_is_empty():
    stats = make_stats({"a": 1})
    assert restrict_to_vocab({"oov": 1.0}, stats) == {}

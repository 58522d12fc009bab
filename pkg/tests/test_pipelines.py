import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from propdetect.corpus import NUM_TECHNIQUES, ClassifiedSample, Span, TcLabel, Technique
from propdetect.neural.checkpoint import init_checkpoint
from propdetect.neural.encoder import EncoderConfig
from propdetect.pipelines.common import TrainConfig
from propdetect.pipelines.si import SiModel, predict_si_many, segment_article, train_si
from propdetect.pipelines.tc import (
    Ensemble, TcModel, TcPrediction, build_ensemble, ensemble_vote, predict_tc, resolve_overlaps, train_tc,
)
from propdetect.segmenter import RuleTokenizer, Vocabulary
from propdetect.synth import SynthConfig, generate

from oracles import random_predictions, resolution_violations

TOK = RuleTokenizer()


def one_hot_probs(classes, k=NUM_TECHNIQUES, weight=0.9):
    out = np.full((len(classes), k), (1 - weight) / (k - 1))
    out[np.arange(len(classes)), classes] = weight
    return out


class TestVote:
    def test_majority(self):
        best, agg = ensemble_vote(one_hot_probs([3, 3, 3, 5, 7]))
        assert best == 3
        np.testing.assert_allclose(agg.sum(), 1.0)

    def test_vote_tie_goes_to_larger_mass(self):
        probs = one_hot_probs([2, 2, 6, 6, 1])
        probs[2:4, 6] += 0.05  # unnormalized on purpose
        assert ensemble_vote(probs)[0] == 6

    def test_full_tie_goes_to_lowest_index(self):
        assert ensemble_vote(one_hot_probs([9, 4]))[0] == 4

    def test_scale_invariance(self):
        probs = np.random.default_rng(0).random((5, NUM_TECHNIQUES))
        scaled = probs * np.array([[1.0], [3.0], [0.5], [7.0], [2.0]])
        a, b = ensemble_vote(probs), ensemble_vote(scaled)
        assert a[0] == b[0]
        np.testing.assert_allclose(a[1], b[1], atol=1e-15)

    def test_shape_check(self):
        with pytest.raises(ValueError):
            ensemble_vote(np.ones((2, 5)))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, NUM_TECHNIQUES - 1), min_size=5, max_size=5), st.integers(0, 2**31))
def test_majority_soundness(classes, seed):
    rng = np.random.default_rng(seed)
    probs = rng.random((5, NUM_TECHNIQUES))
    probs[np.arange(5), classes] += 20.0  # make the member argmaxes the given classes
    counts = np.bincount(classes, minlength=NUM_TECHNIQUES)
    best = ensemble_vote(probs)[0]
    if counts.max() >= 3:
        assert best == counts.argmax()
    assert counts[best] == counts.max()


def pred(article, a, b, probs, k=1):
    probs = np.asarray(probs, dtype=float)
    member = np.tile(probs, (k, 1))
    best, agg = ensemble_vote(member)
    return TcPrediction(article, Span(a, b), member, Technique(best), agg)


def peaked(first, p_first, second=None, p_second=0.0):
    probs = np.full(NUM_TECHNIQUES, 0.0)
    probs[first] = p_first
    if second is not None:
        probs[second] = p_second
    rest = [c for c in range(NUM_TECHNIQUES) if probs[c] == 0.0]
    probs[rest] = (1 - probs.sum()) / len(rest)
    return probs


class TestResolveOverlaps:
    def test_weaker_overlap_moves_to_second_choice(self):
        a = pred(1, 0, 10, peaked(Technique.DOUBT, 0.9))
        b = pred(1, 5, 15, peaked(Technique.DOUBT, 0.6, Technique.SLOGANS, 0.3))
        out = resolve_overlaps([b, a])
        assert out == [TcLabel(1, Technique.SLOGANS, Span(5, 15)), TcLabel(1, Technique.DOUBT, Span(0, 10))]

    def test_disjoint_untouched(self):
        a = pred(1, 0, 5, peaked(Technique.DOUBT, 0.9))
        b = pred(1, 5, 9, peaked(Technique.DOUBT, 0.6))
        c = pred(2, 0, 5, peaked(Technique.DOUBT, 0.5))
        assert [l.technique for l in resolve_overlaps([a, b, c])] == [Technique.DOUBT] * 3

    def test_single(self):
        a = pred(3, 2, 4, peaked(Technique.REPETITION, 0.4))
        assert resolve_overlaps([a]) == [TcLabel(3, Technique.REPETITION, Span(2, 4))]

    def test_empty(self):
        assert resolve_overlaps([]) == []


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 25))
def test_resolution_postcondition(seed, n):
    preds = random_predictions(np.random.default_rng(seed), n)
    labels = resolve_overlaps(preds)
    assert [(l.article_id, l.span) for l in labels] == [(p.article_id, p.span) for p in preds]
    assert resolution_violations(preds, labels) == []


def test_resolution_fallback_keeps_vote():
    # 15 spans over one region cannot all differ among 14 techniques
    rng = np.random.default_rng(0)
    preds = [pred(1, 0, 10, rng.dirichlet(np.ones(NUM_TECHNIQUES))) for _ in range(15)]
    labels = resolve_overlaps(preds)
    assert len({l.technique for l in labels}) == NUM_TECHNIQUES
    assert resolution_violations(preds, labels) == []


@pytest.fixture(scope="module")
def tiny():
    corpus = generate(SynthConfig(n_articles=40, seed=5))
    train, dev = corpus.articles[:32], corpus.articles[32:]
    ids = {a.id for a in train}
    vocab = Vocabulary.build((a.text for a in train), TOK, 300)
    enc = EncoderConfig(vocab_size=len(vocab), hidden_dim=16, layers=1, heads=2, max_seq_len=130, dropout=0.0)
    texts = {a.id: a.text for a in corpus.articles}
    samples = [
        ClassifiedSample(l.article_id, l.span, texts[l.article_id][l.span.start : l.span.end], l.technique)
        for l in corpus.tc_labels
    ]
    return dict(
        corpus=corpus, train=train, dev=dev, vocab=vocab, enc=enc,
        si_train=[l for l in corpus.si_labels if l.article_id in ids],
        si_dev=[l for l in corpus.si_labels if l.article_id not in ids],
        tc_train=[s for s in samples if s.article_id in ids],
        tc_dev=[s for s in samples if s.article_id not in ids],
    )


class TestSiPipeline:
    def test_train_round_trip_and_determinism(self, tiny):
        cfg = TrainConfig(epochs=2, batch_size=8, seed=1, encoder=tiny["enc"])
        model = train_si(tiny["train"], tiny["si_train"], tiny["dev"], tiny["si_dev"], cfg, vocab=tiny["vocab"])
        assert len(model.history) == 2
        pred = predict_si_many(model, tiny["dev"])
        back = SiModel.from_bytes(model.to_bytes())
        assert predict_si_many(back, tiny["dev"]) == pred
        again = train_si(tiny["train"], tiny["si_train"], tiny["dev"], tiny["si_dev"], cfg, vocab=tiny["vocab"])
        assert again.to_bytes() == model.to_bytes()

    def test_predictions_lie_inside_articles(self, tiny):
        cfg = TrainConfig(epochs=1, batch_size=8, encoder=tiny["enc"])
        model = train_si(tiny["train"], tiny["si_train"], [], [], cfg, vocab=tiny["vocab"])
        by_id = {a.id: a for a in tiny["dev"]}
        for l in predict_si_many(model, tiny["dev"]):
            assert 0 <= l.span.start < l.span.end <= len(by_id[l.article_id].text)

    def test_segments_respect_limit(self, tiny):
        for a in tiny["train"]:
            for strategy in ("paragraph", "sentence"):
                assert all(len(s) <= 128 for s in segment_article(a, TOK, strategy, 128))

    def test_no_positive_segment(self, tiny):
        with pytest.raises(ValueError):
            train_si(tiny["train"], [], [], [], TrainConfig(epochs=1, encoder=tiny["enc"]), vocab=tiny["vocab"])

    def test_vocab_mismatch(self, tiny):
        ck = init_checkpoint(EncoderConfig(vocab_size=10, hidden_dim=16, heads=2), 0)
        with pytest.raises(ValueError, match="vocab"):
            train_si(tiny["train"], tiny["si_train"], [], [], TrainConfig(epochs=1), ck, tiny["vocab"])


class TestTcPipeline:
    def test_train_round_trip(self, tiny):
        cfg = TrainConfig(epochs=2, batch_size=16, lr=1e-3, oversample=True, encoder=tiny["enc"])
        model = train_tc(tiny["tc_train"], tiny["tc_dev"], cfg, vocab=tiny["vocab"])
        probs = model.predict_proba(tiny["tc_dev"])
        assert probs.shape == (len(tiny["tc_dev"]), NUM_TECHNIQUES)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        back = TcModel.from_bytes(model.to_bytes())
        assert back.predict_proba(tiny["tc_dev"]).tobytes() == probs.tobytes()

    def test_missing_technique_warns(self, tiny):
        only = [s for s in tiny["tc_train"] if s.technique == Technique.LOADED_LANGUAGE]
        model = train_tc(only, [], TrainConfig(epochs=1, encoder=tiny["enc"]), vocab=tiny["vocab"])
        assert len(model.warnings) == NUM_TECHNIQUES - 1

    def test_identical_members_collapse(self, tiny):
        model = train_tc(tiny["tc_train"], [], TrainConfig(epochs=1, encoder=tiny["enc"]), vocab=tiny["vocab"])
        single = predict_tc(model, tiny["tc_dev"])
        for k in (2, 3, 5):
            many = predict_tc(Ensemble([model] * k), tiny["tc_dev"])
            assert [p.technique for p in many] == [p.technique for p in single]
            for a, b in zip(many, single):
                np.testing.assert_array_equal(a.member_probs, np.tile(b.member_probs, (k, 1)))
                np.testing.assert_allclose(a.aggregate, b.aggregate, rtol=0, atol=1e-15)

    def test_build_ensemble(self, tiny):
        cks = []
        for i, frac in enumerate((0.5, 1.0)):
            ck = init_checkpoint(tiny["enc"], i, tiny["vocab"].surfaces)
            ck.step, ck.total_steps = int(frac * 10), 10
            cks.append(ck)
        cfg = TrainConfig(epochs=1, encoder=tiny["enc"])
        ens = build_ensemble(cks, tiny["tc_train"], [], cfg, tiny["vocab"])
        assert len(ens) == 2 and [m.step_fraction for m in ens.members] == [0.5, 1.0]
        with pytest.raises(ValueError):
            build_ensemble(cks[:1], tiny["tc_train"], [], cfg, tiny["vocab"])

    def test_ensemble_vocab_check(self, tiny):
        model = train_tc(tiny["tc_train"][:5], [], TrainConfig(epochs=1, encoder=tiny["enc"]), vocab=tiny["vocab"])
        other_vocab = Vocabulary.build(["zz yy"], TOK, 10)
        other = train_tc(
            tiny["tc_train"][:5], [],
            TrainConfig(epochs=1, encoder=dataclasses.replace(tiny["enc"], vocab_size=len(other_vocab))),
            vocab=other_vocab,
        )
        with pytest.raises(ValueError):
            Ensemble([model, other])
        with pytest.raises(ValueError):
            Ensemble([])


def test_train_config_contracts():
    with pytest.raises(ValueError):
        TrainConfig(split_strategy="word")
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)

"""Acceptance suite: one test (one pass/fail line under ``pytest -v``) per
criterion.  Criteria that require the official shared-task training release
are gated on the ``ECPE_ECF_TRAIN`` environment variable (a path to the
task-json training file) and skip with a reason when it is unset; each of
those has a synthetic stand-in that always runs.
"""

import math
import os
import random
import time

import pytest

from ecpe.analysis import cause_scores_by_emotion, confusion, distance_profile
from ecpe.cause import CauseExtractor, build_pair_candidates, heuristic_baseline
from ecpe.corpus import (
    Conversation,
    Utterance,
    load_corpus,
    corpus_stats,
    speaker_encodings,
    split_corpus,
)
from ecpe.embeddings import HashingEmbedder
from ecpe.labels import ALL_LABELS, EMOTIONAL_LABELS, EmotionLabel
from ecpe.local_emotion import LocalEmotionClassifier
from ecpe.metrics import classification_f1, score_pairs, weighted_average
from ecpe.prompts import DEFAULT_INSTRUCTION, PromptTemplate, build_prompt

from conftest import make_synthetic_corpus
from oracles import oracle_score_pairs, random_instance

ECF_ENV = "ECPE_ECF_TRAIN"

requires_dataset = pytest.mark.skipif(
    ECF_ENV not in os.environ,
    reason=f"set {ECF_ENV} to the official task-json training file",
)

EMBEDDER = HashingEmbedder(dim=96)


def _real_corpus():
    return load_corpus(os.environ[ECF_ENV], format="task-json")


def _pair_map(conversations, pairs_per_conv):
    return {c.id: list(p) for c, p in zip(conversations, pairs_per_conv)}


def _gold_map(conversations):
    return {c.id: list(c.gold_pairs) for c in conversations}


def _gold_emotions(conversations):
    return [[u.gold_emotion for u in c.utterances] for c in conversations]


# -- shared trained model (criteria 2, 6, 8) --------------------------------

@pytest.fixture(scope="module")
def splits():
    corpus = make_synthetic_corpus(60, seed=42)
    return split_corpus(corpus, dev_fraction=0.2, seed=7)


@pytest.fixture(scope="module")
def extractor(splits):
    train, dev = splits
    model = CauseExtractor(
        embedder=EMBEDDER,
        hidden_size=48,
        num_layers=2,
        ff_hidden=48,
        dropout=0.0,
        max_speakers=4,
        lr=1e-3,
        epochs=40,
        batch_size=8,
        seed=0,
    )
    model.fit(train, dev=dev)
    return model


@pytest.fixture(scope="module")
def dev_predictions(splits, extractor):
    _, dev = splits
    return _pair_map(dev, extractor.predict(dev, _gold_emotions(dev)))


# -- 1. metric oracle equivalence --------------------------------------------

def test_criterion_1_metric_oracle_equivalence():
    rng = random.Random(1729)
    start = time.monotonic()
    for _ in range(1000):
        pred, gold, _ = random_instance(rng)
        for mode in ("strict", "proportional"):
            report = score_pairs(pred, gold, mode=mode)
            per_emotion, weighted, macro = oracle_score_pairs(pred, gold, mode)
            assert math.isclose(report.weighted_f1, weighted, abs_tol=1e-9)
            assert math.isclose(report.macro_f1, macro, abs_tol=1e-9)
            for emotion, (p, r, f1) in per_emotion.items():
                got = report.per_emotion[emotion]
                assert math.isclose(got.precision, p, abs_tol=1e-9)
                assert math.isclose(got.recall, r, abs_tol=1e-9)
                assert math.isclose(got.f1, f1, abs_tol=1e-9)
    assert time.monotonic() - start < 60


# -- 2. proportional dominates strict -----------------------------------------

def test_criterion_2_dominance_randomized_and_dev(splits, dev_predictions):
    rng = random.Random(271828)
    for _ in range(400):
        pred, gold, _ = random_instance(rng)
        prop = score_pairs(pred, gold, mode="proportional").weighted_f1
        strict = score_pairs(pred, gold, mode="strict").weighted_f1
        assert prop >= strict - 1e-12
    _, dev = splits
    gold = _gold_map(dev)
    prop = score_pairs(dev_predictions, gold, mode="proportional").weighted_f1
    strict = score_pairs(dev_predictions, gold, mode="strict").weighted_f1
    assert prop >= strict - 1e-12


# -- 3. corpus statistics (official release) ----------------------------------

@requires_dataset
def test_criterion_3_corpus_statistics_official_release():
    corpus = _real_corpus()
    stats = corpus_stats(corpus)
    assert stats.n_conversations == 1374
    assert stats.n_utterances == 13619
    assert stats.n_pairs == 9364
    assert stats.emotional_with_cause_fraction == pytest.approx(0.91, abs=0.01)
    assert stats.multi_emotion_cause_fraction == pytest.approx(0.16, abs=0.01)


def test_criterion_3_synthetic_stand_in(small_corpus):
    stats = corpus_stats(small_corpus)
    assert stats.n_conversations == len(small_corpus)
    assert stats.n_utterances == sum(len(c) for c in small_corpus)
    assert stats.n_pairs == sum(len(c.gold_pairs) for c in small_corpus)


# -- 4. split reproduction -----------------------------------------------------

def test_criterion_4_split_reproduces_published_counts():
    corpus = [
        Conversation(
            id=str(i),
            utterances=(Utterance(index=1, speaker="A", text="hi"),),
            gold_pairs=(),
        )
        for i in range(1374)
    ]
    train, dev = split_corpus(corpus, dev_fraction=0.1)  # fixed default seed
    assert (len(train), len(dev)) == (1236, 138)
    assert {c.id for c in train} | {c.id for c in dev} == {c.id for c in corpus}


# -- 5. cause-model capacity (overfit sanity) ----------------------------------

def test_criterion_5_overfit_ten_dialogs():
    corpus = make_synthetic_corpus(10, seed=5)
    model = CauseExtractor(
        embedder=EMBEDDER,
        hidden_size=48,
        num_layers=2,
        ff_hidden=48,
        dropout=0.0,
        max_speakers=4,
        lr=1e-3,
        epochs=200,
        batch_size=10,
        seed=3,
    )
    start = time.monotonic()
    model.fit(corpus)
    pred = _pair_map(corpus, model.predict(corpus, _gold_emotions(corpus)))
    report = score_pairs(pred, _gold_map(corpus), mode="proportional")
    assert report.weighted_f1 >= 0.95
    assert time.monotonic() - start < 600


# -- 6. cause-model usefulness vs heuristic ------------------------------------

def _beats_heuristic(train, dev, epochs):
    model = CauseExtractor(
        embedder=EMBEDDER,
        hidden_size=48,
        num_layers=2,
        ff_hidden=48,
        dropout=0.0,
        max_speakers=9,
        lr=1e-3,
        epochs=epochs,
        batch_size=8,
        seed=0,
    )
    model.fit(train, dev=dev)
    gold_emotions = _gold_emotions(dev)
    gold = _gold_map(dev)
    model_pairs = _pair_map(dev, model.predict(dev, gold_emotions))
    baseline_pairs = _pair_map(
        dev, [heuristic_baseline(c, e) for c, e in zip(dev, gold_emotions)]
    )
    model_f1 = score_pairs(model_pairs, gold, mode="proportional").weighted_f1
    base_f1 = score_pairs(baseline_pairs, gold, mode="proportional").weighted_f1
    return model_f1, base_f1


def test_criterion_6_beats_heuristic_synthetic(splits, extractor, dev_predictions):
    _, dev = splits
    gold = _gold_map(dev)
    gold_emotions = _gold_emotions(dev)
    baseline_pairs = _pair_map(
        dev, [heuristic_baseline(c, e) for c, e in zip(dev, gold_emotions)]
    )
    model_f1 = score_pairs(dev_predictions, gold, mode="proportional").weighted_f1
    base_f1 = score_pairs(baseline_pairs, gold, mode="proportional").weighted_f1
    assert model_f1 > base_f1


@requires_dataset
def test_criterion_6_beats_heuristic_official_release():
    corpus = _real_corpus()
    train, dev = split_corpus(corpus, dev_fraction=0.1)
    model_f1, base_f1 = _beats_heuristic(train, dev, epochs=200)
    assert model_f1 > base_f1


# -- 7. emotion route substitutes ----------------------------------------------

FINETUNED_F1_ROW = {
    EmotionLabel.NEUTRAL: 0.70,
    EmotionLabel.ANGER: 0.57,
    EmotionLabel.DISGUST: 0.42,
    EmotionLabel.FEAR: 0.51,
    EmotionLabel.JOY: 0.63,
    EmotionLabel.SADNESS: 0.52,
    EmotionLabel.SURPRISE: 0.66,
}


@requires_dataset
def test_criterion_7a_weighted_average_reproduces_reported_value():
    corpus = _real_corpus()
    _, dev = split_corpus(corpus, dev_fraction=0.1)
    supports = {lbl: 0 for lbl in ALL_LABELS}
    for conv in dev:
        for u in conv.utterances:
            if u.gold_emotion is not None:
                supports[u.gold_emotion] += 1
    weighted, _ = weighted_average(FINETUNED_F1_ROW, supports)
    assert weighted == pytest.approx(0.64, abs=0.02)


def test_criterion_7a_weighted_average_arithmetic_stand_in():
    # drives the same code path with hand-checkable numbers
    f1s = {EmotionLabel.JOY: 0.5, EmotionLabel.ANGER: 1.0}
    supports = {EmotionLabel.JOY: 3, EmotionLabel.ANGER: 1}
    weighted, macro = weighted_average(f1s, supports)
    assert weighted == pytest.approx((0.5 * 3 + 1.0 * 1) / 4)
    assert macro == pytest.approx(0.75)


def test_criterion_7b_local_classifier_beats_always_neutral(splits):
    train, dev = splits
    clf = LocalEmotionClassifier(embedder=EMBEDDER, seed=0)
    clf.fit(train)
    pred = [l for labels in clf.predict(dev) for l in labels]
    gold = [u.gold_emotion for c in dev for u in c.utterances]
    neutral = [EmotionLabel.NEUTRAL] * len(gold)
    assert (
        classification_f1(pred, gold)["weighted_f1"]
        > classification_f1(neutral, gold)["weighted_f1"]
    )


def test_criterion_7c_prompt_construction_pinned(small_corpus):
    # byte-exact golden copies live in tests/golden and are asserted by
    # test_prompts.py; here we re-check the structural contract directly.
    template = PromptTemplate(instruction=DEFAULT_INSTRUCTION)
    conv = small_corpus[0]
    messages = build_prompt(template, conv, 2)
    assert messages[-1]["role"] == "system"
    content = messages[-1]["content"]
    assert conv.utterance(1).text in content
    assert conv.utterance(2).text in content
    assert "<UTT_1>" not in content and "<UTT_2>" not in content


# -- 8. architectural invariants ------------------------------------------------

def test_criterion_8_architectural_invariants(tmp_path, splits, extractor):
    start = time.monotonic()
    _, dev = splits
    emotions = _gold_emotions(dev)
    predictions = extractor.predict(dev, emotions)
    for conv, labels, pairs in zip(dev, emotions, predictions):
        neutral_targets = {
            t for t, lbl in enumerate(labels, start=1) if lbl is EmotionLabel.NEUTRAL
        }
        for p in pairs:
            assert p.cause_index <= p.target_index
            assert p.target_index not in neutral_targets
        # candidate count per target t equals t
        contextual = extractor.contextualize(
            EMBEDDER.encode([u.text for u in conv.utterances])
        )
        speakers = speaker_encodings(conv, extractor.max_speakers)
        for t, lbl in enumerate(labels, start=1):
            if lbl is EmotionLabel.NEUTRAL:
                continue
            candidates = build_pair_candidates(conv, t, lbl, contextual, speakers)
            assert len(candidates) == t
    path = tmp_path / "model.pt"
    extractor.save(path)
    reloaded = CauseExtractor.load(path, embedder=EMBEDDER)
    assert reloaded.predict(dev, emotions) == predictions
    assert time.monotonic() - start < 60


# -- 9. analysis suite ------------------------------------------------------------

def test_criterion_9_analysis_suite(splits, dev_predictions):
    train, dev = splits
    # gold cause-distance mode is d = 0 (self-cause dominates)
    profile = distance_profile({}, _gold_map(train))
    assert max(profile.gold_counts, key=profile.gold_counts.get) == 0

    # confusion-matrix row sums equal gold class counts
    gold_labels = [u.gold_emotion for c in train for u in c.utterances]
    pred_labels = list(gold_labels)
    pred_labels[0] = (
        EmotionLabel.JOY if gold_labels[0] is not EmotionLabel.JOY else EmotionLabel.ANGER
    )
    matrix = confusion(pred_labels, gold_labels)
    for i, lbl in enumerate(ALL_LABELS):
        assert matrix.counts[i].sum() == gold_labels.count(lbl)

    # cause_scores_by_emotion equals a manual filter + score on a fixture
    gold = _gold_map(dev)
    gold_emotion_map = {c.id: [u.gold_emotion for u in c.utterances] for c in dev}
    pred_emotion_map = {cid: list(lbls) for cid, lbls in gold_emotion_map.items()}
    first = next(iter(pred_emotion_map))
    pred_emotion_map[first] = [EmotionLabel.NEUTRAL] * len(pred_emotion_map[first])
    report = cause_scores_by_emotion(
        dev_predictions, gold, pred_emotion_map, gold_emotion_map
    )

    def keep(cid, pairs):
        out = []
        for p in pairs:
            lbl = pred_emotion_map[cid][p.target_index - 1]
            if lbl is gold_emotion_map[cid][p.target_index - 1] and (
                lbl is not EmotionLabel.NEUTRAL
            ):
                out.append(p)
        return out

    manual = score_pairs(
        {cid: keep(cid, ps) for cid, ps in dev_predictions.items()},
        {cid: keep(cid, ps) for cid, ps in gold.items()},
        mode="proportional",
    )
    assert report.weighted_f1 == pytest.approx(manual.weighted_f1, abs=1e-12)
    for e in EMOTIONAL_LABELS:
        assert report.per_emotion[e] == manual.per_emotion[e]

import math

import numpy as np
import pytest
import torch

from ecpe.cause import (
    CauseExtractor,
    _CauseNet,
    build_pair_candidates,
    heuristic_baseline,
    whole_utterance_span,
)
from ecpe.corpus import Conversation, Utterance, speaker_encodings
from ecpe.embeddings import HashingEmbedder
from ecpe.errors import CheckpointError, ConfigError, DataError
from ecpe.labels import EmotionLabel

from conftest import make_synthetic_corpus

EMB_DIM = 96


@pytest.fixture(scope="module")
def embedder():
    return HashingEmbedder(dim=EMB_DIM)


def small_extractor(embedder, **overrides):
    params = dict(
        embedder=embedder,
        hidden_size=32,
        num_layers=2,
        ff_hidden=32,
        dropout=0.0,
        max_speakers=4,
        epochs=5,
        batch_size=8,
        seed=0,
    )
    params.update(overrides)
    return CauseExtractor(**params)


@pytest.fixture(scope="module")
def trained(embedder):
    train = make_synthetic_corpus(20, seed=70)
    dev = make_synthetic_corpus(5, seed=71)
    return small_extractor(embedder, epochs=8).fit(train, dev=dev)


def _conv(n):
    return Conversation(
        id="c",
        utterances=tuple(
            Utterance(index=i + 1, speaker="AB"[i % 2], text=f"utterance {i}")
            for i in range(n)
        ),
    )


# -- candidate construction ------------------------------------------------

def test_candidate_count_equals_target_index():
    conv = _conv(5)
    speakers = speaker_encodings(conv, max_speakers=9)
    contextual = np.random.default_rng(0).normal(size=(5, 512)).astype(np.float32)
    for t in (1, 3, 5):
        candidates = build_pair_candidates(conv, t, EmotionLabel.JOY, contextual, speakers)
        assert [c.cause_index for c in candidates] == list(range(1, t + 1))
        assert all(c.target_index == t for c in candidates)


def test_candidate_feature_dimension():
    # 2*(2*256) + 2*9 + 6 = 1048 for hidden 256 per direction, 9 speakers
    conv = _conv(3)
    speakers = speaker_encodings(conv, max_speakers=9)
    contextual = np.zeros((3, 512), dtype=np.float32)
    candidates = build_pair_candidates(conv, 3, EmotionLabel.FEAR, contextual, speakers)
    assert candidates[0].features.shape == (1048,)


def test_neutral_target_rejected():
    conv = _conv(2)
    speakers = speaker_encodings(conv, max_speakers=9)
    contextual = np.zeros((2, 512), dtype=np.float32)
    with pytest.raises(ConfigError, match="neutral"):
        build_pair_candidates(conv, 1, EmotionLabel.NEUTRAL, contextual, speakers)


def test_training_positive_rate(trained):
    corpus = make_synthetic_corpus(10, seed=75)
    embeddings = [np.zeros((len(c), EMB_DIM), dtype=np.float32) for c in corpus]
    padded, lengths = trained._batch_tensors(embeddings)
    contextual = trained.net_.contextualize(padded, lengths)
    _, labels, meta = trained._gather_candidates(corpus, contextual, training=True)
    n_candidates = sum(
        t
        for c in corpus
        for t, u in enumerate(c.utterances, start=1)
        if u.gold_emotion is not EmotionLabel.NEUTRAL
    )
    n_reachable_gold = sum(
        1 for c in corpus for p in c.gold_pairs if p.cause_index <= p.target_index
    )
    assert len(meta) == n_candidates
    assert int(labels.sum()) == n_reachable_gold


# -- network behaviour -------------------------------------------------------

def test_initial_loss_near_ln2():
    torch.manual_seed(0)
    net = _CauseNet(embed_dim=EMB_DIM, hidden_size=32, num_layers=2,
                    ff_hidden=32, dropout=0.0, max_speakers=4)
    feat_dim = 4 * 32 + 2 * 4 + 6
    feats = torch.randn(64, feat_dim)
    labels = torch.tensor([0, 1] * 32)
    loss = torch.nn.functional.cross_entropy(net.head(feats), labels)
    assert abs(float(loss.detach()) - math.log(2)) < 0.2


def test_contextualize_shapes_and_determinism(trained):
    emb = np.random.default_rng(1).normal(size=(4, EMB_DIM)).astype(np.float32)
    out1 = trained.contextualize(emb)
    out2 = trained.contextualize(emb)
    assert out1.shape == (4, 64)  # 2 * hidden_size
    assert np.array_equal(out1, out2)
    single = trained.contextualize(emb[:1])
    assert single.shape == (1, 64)


def test_contextualize_is_order_sensitive(trained):
    emb = np.random.default_rng(2).normal(size=(3, EMB_DIM)).astype(np.float32)
    forward = trained.contextualize(emb)
    permuted = trained.contextualize(emb[::-1].copy())
    assert not np.allclose(forward[0], permuted[2], atol=1e-6)


def test_contextualize_dimension_mismatch(trained):
    with pytest.raises(ConfigError, match="dimension"):
        trained.contextualize(np.zeros((3, EMB_DIM + 1), dtype=np.float32))


# -- prediction invariants -----------------------------------------------------

def test_all_neutral_conversation_yields_no_pairs(trained):
    conv = _conv(4)
    pairs = trained.predict([conv], [[EmotionLabel.NEUTRAL] * 4])[0]
    assert pairs == []


def test_no_future_causes_and_span_coverage(trained):
    dev = make_synthetic_corpus(10, seed=81)
    emotions = [[u.gold_emotion for u in c.utterances] for c in dev]
    for conv, pairs in zip(dev, trained.predict(dev, emotions)):
        for p in pairs:
            assert p.cause_index <= p.target_index
            assert p.cause_span == whole_utterance_span(conv, p.cause_index)
            assert p.emotion is not EmotionLabel.NEUTRAL


def test_pairs_per_target_bounded(trained):
    dev = make_synthetic_corpus(6, seed=82)
    emotions = [[u.gold_emotion for u in c.utterances] for c in dev]
    for conv, pairs in zip(dev, trained.predict(dev, emotions)):
        per_target = {}
        for p in pairs:
            per_target.setdefault(p.target_index, 0)
            per_target[p.target_index] += 1
        for t, count in per_target.items():
            assert 0 <= count <= t


def test_misaligned_emotions_rejected(trained):
    conv = _conv(3)
    with pytest.raises(ConfigError):
        trained.predict([conv], [[EmotionLabel.JOY]])
    with pytest.raises(ConfigError):
        trained.predict([conv], [])


# -- training ---------------------------------------------------------------

def test_same_seed_identical_predictions(embedder):
    train = make_synthetic_corpus(8, seed=91)
    dev = make_synthetic_corpus(3, seed=92)
    emotions = [[u.gold_emotion for u in c.utterances] for c in dev]
    a = small_extractor(embedder, epochs=3).fit(train).predict(dev, emotions)
    b = small_extractor(embedder, epochs=3).fit(train).predict(dev, emotions)
    assert a == b


def test_zero_positive_candidates_rejected(embedder):
    conv = Conversation(
        id="c",
        utterances=(
            Utterance(index=1, speaker="A", text="hi", gold_emotion=EmotionLabel.NEUTRAL),
        ),
    )
    with pytest.raises(DataError, match="positive"):
        small_extractor(embedder).fit([conv])


def test_history_logged(trained):
    assert len(trained.history_) == 8
    assert all("train_loss" in rec and "dev_f1" in rec for rec in trained.history_)


def test_best_checkpoint_retained(trained):
    assert trained.best_state_ is not None
    assert trained.final_state_ is not None
    assert trained.best_dev_f1_ >= 0


# -- persistence ----------------------------------------------------------------

def test_save_load_prediction_identical(tmp_path, trained, embedder):
    dev = make_synthetic_corpus(4, seed=93)
    emotions = [[u.gold_emotion for u in c.utterances] for c in dev]
    before = trained.predict(dev, emotions)
    path = tmp_path / "cause.pt"
    trained.save(path, which="best")
    # "best" weights are what a fitted model with a dev set predicts with
    reloaded = CauseExtractor.load(path, embedder)
    assert reloaded.predict(dev, emotions) == before


def test_load_rejects_mismatched_embedder(tmp_path, trained):
    path = tmp_path / "cause.pt"
    trained.save(path)
    with pytest.raises(CheckpointError, match="embedder"):
        CauseExtractor.load(path, HashingEmbedder(dim=EMB_DIM + 1))


def test_load_missing_file(tmp_path, embedder):
    with pytest.raises(CheckpointError):
        CauseExtractor.load(tmp_path / "missing.pt", embedder)


# -- heuristic baseline -------------------------------------------------------

def test_heuristic_baseline_pairs():
    conv = _conv(3)
    emotions = [EmotionLabel.NEUTRAL, EmotionLabel.JOY, EmotionLabel.NEUTRAL]
    pairs = heuristic_baseline(conv, emotions)
    assert [(p.cause_index, p.target_index) for p in pairs] == [(1, 2), (2, 2)]
    emotions = [EmotionLabel.ANGER, EmotionLabel.NEUTRAL, EmotionLabel.NEUTRAL]
    pairs = heuristic_baseline(conv, emotions)
    assert [(p.cause_index, p.target_index) for p in pairs] == [(1, 1)]

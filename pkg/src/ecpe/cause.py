"""Stage 2: BiLSTM contextualization and binary causal-utterance detection.

Utterance embeddings are contextualized by a bidirectional LSTM stack.
For every target utterance with a non-neutral emotion, one candidate per
history position i in 1..t is assembled as the concatenation

    contextual(i) || speaker(i) || contextual(t) || speaker(t) || emotion(t)

with the emotion encoded one-hot over the six non-neutral labels, and
classified causal / not causal by a feed-forward head (hidden linear
layer, batch normalization, ReLU, 2-way output; argmax decision).
Candidates never reach past the target, so predicted causes always lie
in the target's history; gold future causes are architecturally
unreachable and cap recall.

Predicted pairs carry whole-utterance cause spans.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch import nn

from .corpus import (
    Conversation,
    EmotionCausePair,
    SpeakerEncoding,
    speaker_encodings,
)
from .embeddings import Embedder, EmbeddingCache, embed_conversation
from .errors import CheckpointError, ConfigError, DataError
from .labels import EMOTION_ONEHOT_INDEX, EmotionLabel

logger = logging.getLogger(__name__)


@dataclass
class PairCandidate:
    cause_index: int
    target_index: int
    features: np.ndarray


def whole_utterance_span(conv: Conversation, index: int) -> tuple[int, int]:
    return (0, max(len(conv.utterance(index).text), 1))


def build_pair_candidates(
    conv: Conversation,
    t: int,
    emotion: EmotionLabel,
    contextual: np.ndarray,
    speakers: SpeakerEncoding,
) -> list[PairCandidate]:
    """Exactly t candidates for target t, cause index running 1..t."""
    if emotion is EmotionLabel.NEUTRAL:
        raise ConfigError("neutral targets have no cause candidates")
    if not 1 <= t <= len(conv):
        raise ConfigError(f"target index {t} outside 1..{len(conv)}")
    emo_vec = np.zeros(len(EMOTION_ONEHOT_INDEX), dtype=np.float32)
    emo_vec[EMOTION_ONEHOT_INDEX[emotion]] = 1.0
    target_part = np.concatenate([contextual[t - 1], speakers.vectors[t - 1], emo_vec])
    candidates = []
    for i in range(1, t + 1):
        features = np.concatenate([contextual[i - 1], speakers.vectors[i - 1], target_part])
        candidates.append(PairCandidate(cause_index=i, target_index=t, features=features))
    return candidates


def heuristic_baseline(
    conv: Conversation, emotions: list[EmotionLabel]
) -> list[EmotionCausePair]:
    """Deterministic baseline: every non-neutral target is caused by itself
    and, when it exists, the immediately preceding utterance."""
    pairs = []
    for t, emotion in enumerate(emotions, start=1):
        if emotion is EmotionLabel.NEUTRAL:
            continue
        for i in ([t - 1] if t > 1 else []) + [t]:
            pairs.append(
                EmotionCausePair(
                    cause_index=i,
                    target_index=t,
                    emotion=emotion,
                    cause_span=whole_utterance_span(conv, i),
                )
            )
    return pairs


class _CauseNet(nn.Module):
    def __init__(self, embed_dim: int, hidden_size: int, num_layers: int,
                 ff_hidden: int, dropout: float, max_speakers: int):
        super().__init__()
        self.lstm = nn.LSTM(
            input_size=embed_dim,
            hidden_size=hidden_size,
            num_layers=num_layers,
            bidirectional=True,
            dropout=dropout if num_layers > 1 else 0.0,
            batch_first=True,
        )
        feat_dim = 4 * hidden_size + 2 * max_speakers + len(EMOTION_ONEHOT_INDEX)
        self.head = nn.Sequential(
            nn.Linear(feat_dim, ff_hidden),
            nn.BatchNorm1d(ff_hidden),
            nn.ReLU(),
            nn.Linear(ff_hidden, 2),
        )

    def contextualize(self, padded: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        packed = nn.utils.rnn.pack_padded_sequence(
            padded, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        out, _ = self.lstm(packed)
        unpacked, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True)
        return unpacked


class CauseExtractor(BaseEstimator):
    """Trainable cause detector with a fit/predict surface.

    Training follows the reference recipe: Adam at learning rate 1e-4
    with weight decay 1e-5, cross-entropy loss, 200 epochs, batches of
    32 dialogs.  Both the final-epoch and the best-dev-F1 weights are
    retained; prediction defaults to best-dev when a dev set was given.
    """

    def __init__(
        self,
        embedder: Embedder | None = None,
        hidden_size: int = 256,
        num_layers: int = 3,
        ff_hidden: int = 256,
        dropout: float = 0.1,
        max_speakers: int = 9,
        lr: float = 1e-4,
        weight_decay: float = 1e-5,
        epochs: int = 200,
        batch_size: int = 32,
        pos_weight: float = 1.0,
        seed: int = 0,
    ):
        self.embedder = embedder
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.ff_hidden = ff_hidden
        self.dropout = dropout
        self.max_speakers = max_speakers
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.pos_weight = pos_weight
        self.seed = seed

    # -- internals ---------------------------------------------------------

    def _embed_all(
        self, conversations: list[Conversation], cache: EmbeddingCache | None
    ) -> list[np.ndarray]:
        return [embed_conversation(conv, self.embedder, cache) for conv in conversations]

    def _batch_tensors(self, embeddings: list[np.ndarray]) -> tuple[torch.Tensor, torch.Tensor]:
        lengths = torch.tensor([e.shape[0] for e in embeddings], dtype=torch.long)
        max_len = int(lengths.max())
        dim = embeddings[0].shape[1]
        padded = torch.zeros(len(embeddings), max_len, dim)
        for i, emb in enumerate(embeddings):
            padded[i, : emb.shape[0]] = torch.from_numpy(emb)
        return padded, lengths

    def _gather_candidates(
        self,
        convs: list[Conversation],
        contextual: torch.Tensor,
        training: bool,
        emotions_per_conv: list[list[EmotionLabel]] | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, list[tuple[int, int, int, EmotionLabel]]]:
        """Feature matrix, labels (training only), and (conv pos, i, t, emotion) meta.

        Padded positions never enter: candidates are built from true
        utterance positions only.
        """
        n_emotions = len(EMOTION_ONEHOT_INDEX)
        feats = []
        labels = []
        meta = []
        for b, conv in enumerate(convs):
            enc = speaker_encodings(conv, self.max_speakers)
            speakers = torch.from_numpy(np.stack(enc.vectors))
            gold = {(p.cause_index, p.target_index) for p in conv.gold_pairs}
            if emotions_per_conv is None:
                emotions = [u.gold_emotion for u in conv.utterances]
            else:
                emotions = emotions_per_conv[b]
            for t, emotion in enumerate(emotions, start=1):
                if emotion is None or emotion is EmotionLabel.NEUTRAL:
                    continue
                emo_vec = torch.zeros(n_emotions)
                emo_vec[EMOTION_ONEHOT_INDEX[emotion]] = 1.0
                target_part = torch.cat([contextual[b, t - 1], speakers[t - 1], emo_vec])
                for i in range(1, t + 1):
                    feats.append(torch.cat([contextual[b, i - 1], speakers[i - 1], target_part]))
                    meta.append((b, i, t, emotion))
                    if training:
                        labels.append(1 if (i, t) in gold else 0)
        if not feats:
            empty = torch.zeros(0)
            return empty, empty, meta
        return torch.stack(feats), torch.tensor(labels, dtype=torch.long), meta

    # -- public API ---------------------------------------------------------

    def fit(
        self,
        conversations: list[Conversation],
        dev: list[Conversation] | None = None,
        cache: EmbeddingCache | None = None,
    ):
        if self.embedder is None:
            raise ConfigError("an embedder is required for training")
        if not conversations:
            raise ConfigError("cannot train on an empty conversation list")
        n_positive = sum(
            1
            for conv in conversations
            for p in conv.gold_pairs
            if p.cause_index <= p.target_index
        )
        if n_positive == 0:
            raise DataError("training corpus contains zero reachable positive candidates")

        torch.manual_seed(self.seed)
        rng = np.random.default_rng(self.seed)
        self.net_ = _CauseNet(
            embed_dim=self.embedder.dim,
            hidden_size=self.hidden_size,
            num_layers=self.num_layers,
            ff_hidden=self.ff_hidden,
            dropout=self.dropout,
            max_speakers=self.max_speakers,
        )
        self.embedder_id_ = self.embedder.id
        optimizer = torch.optim.Adam(
            self.net_.parameters(), lr=self.lr, weight_decay=self.weight_decay
        )
        class_weight = torch.tensor([1.0, float(self.pos_weight)])
        loss_fn = nn.CrossEntropyLoss(weight=class_weight)

        embeddings = self._embed_all(conversations, cache)
        self.best_state_ = None
        self.best_dev_f1_ = -1.0
        self.history_ = []

        for epoch in range(self.epochs):
            order = rng.permutation(len(conversations))
            self.net_.train()
            epoch_loss = 0.0
            n_batches = 0
            for start in range(0, len(order), self.batch_size):
                idx = order[start : start + self.batch_size]
                convs = [conversations[i] for i in idx]
                embs = [embeddings[i] for i in idx]
                padded, lengths = self._batch_tensors(embs)
                contextual = self.net_.contextualize(padded, lengths)
                feats, labels, _ = self._gather_candidates(convs, contextual, training=True)
                if feats.shape[0] < 2:
                    continue  # BatchNorm needs >1 candidate
                logits = self.net_.head(feats)
                loss = loss_fn(logits, labels)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_loss += float(loss.detach())
                n_batches += 1
            record = {"epoch": epoch + 1, "train_loss": epoch_loss / max(n_batches, 1)}
            if dev:
                record.update(self._evaluate_dev(dev, cache))
                if record["dev_f1"] > self.best_dev_f1_:
                    self.best_dev_f1_ = record["dev_f1"]
                    self.best_state_ = copy.deepcopy(self.net_.state_dict())
            self.history_.append(record)
            logger.info(
                "epoch %d: train_loss=%.4f%s",
                record["epoch"],
                record["train_loss"],
                f" dev_loss={record['dev_loss']:.4f} dev_f1={record['dev_f1']:.4f}"
                if dev
                else "",
            )
        self.final_state_ = copy.deepcopy(self.net_.state_dict())
        if self.best_state_ is not None:
            self.net_.load_state_dict(self.best_state_)
        return self

    def _evaluate_dev(self, dev: list[Conversation], cache: EmbeddingCache | None) -> dict:
        from .metrics import score_pairs

        self.net_.eval()
        dev_loss = 0.0
        n = 0
        pred_map = {}
        gold_map = {conv.id: list(conv.gold_pairs) for conv in dev}
        loss_fn = nn.CrossEntropyLoss()
        with torch.no_grad():
            for conv in dev:
                emb = embed_conversation(conv, self.embedder, cache)
                padded, lengths = self._batch_tensors([emb])
                contextual = self.net_.contextualize(padded, lengths)
                feats, labels, meta = self._gather_candidates([conv], contextual, training=True)
                if feats.shape[0] == 0:
                    pred_map[conv.id] = []
                    continue
                logits = self.net_.head(feats)
                dev_loss += float(loss_fn(logits, labels)) * feats.shape[0]
                n += feats.shape[0]
                decisions = logits.argmax(dim=1)
                pred_map[conv.id] = [
                    EmotionCausePair(
                        cause_index=i,
                        target_index=t,
                        emotion=emotion,
                        cause_span=whole_utterance_span(conv, i),
                    )
                    for (_, i, t, emotion), dec in zip(meta, decisions)
                    if int(dec) == 1
                ]
        report = score_pairs(pred_map, gold_map, mode="proportional")
        return {"dev_loss": dev_loss / max(n, 1), "dev_f1": report.weighted_f1}

    def contextualize(self, embeddings: np.ndarray) -> np.ndarray:
        """Contextual vectors (n, 2*hidden_size) for one conversation, eval mode."""
        self._require_fitted()
        if embeddings.ndim != 2 or embeddings.shape[1] != self.embedder.dim:
            raise ConfigError(
                f"expected embeddings of dimension {self.embedder.dim}, "
                f"got shape {tuple(embeddings.shape)}"
            )
        self.net_.eval()
        with torch.no_grad():
            padded, lengths = self._batch_tensors([embeddings])
            out = self.net_.contextualize(padded, lengths)
        return out[0, : embeddings.shape[0]].numpy()

    def predict(
        self,
        conversations: list[Conversation],
        emotions: list[list[EmotionLabel]],
        cache: EmbeddingCache | None = None,
    ) -> list[list[EmotionCausePair]]:
        """Emotion-cause pairs per conversation, whole-utterance spans.

        ``emotions`` supplies one label per utterance per conversation
        (stage-1 predictions, or gold labels for ablation).
        """
        self._require_fitted()
        if len(emotions) != len(conversations):
            raise ConfigError("emotions must align one list per conversation")
        for conv, labels in zip(conversations, emotions):
            if len(labels) != len(conv):
                raise ConfigError(
                    f"conversation {conv.id}: {len(labels)} emotion labels "
                    f"for {len(conv)} utterances"
                )
        self.net_.eval()
        results = []
        with torch.no_grad():
            for conv, labels in zip(conversations, emotions):
                emb = embed_conversation(conv, self.embedder, cache)
                padded, lengths = self._batch_tensors([emb])
                contextual = self.net_.contextualize(padded, lengths)
                feats, _, meta = self._gather_candidates(
                    [conv], contextual, training=False, emotions_per_conv=[labels]
                )
                pairs = []
                if feats.shape[0] > 0:
                    decisions = self.net_.head(feats).argmax(dim=1)
                    for (_, i, t, emotion), dec in zip(meta, decisions):
                        if int(dec) == 1:
                            pairs.append(
                                EmotionCausePair(
                                    cause_index=i,
                                    target_index=t,
                                    emotion=emotion,
                                    cause_span=whole_utterance_span(conv, i),
                                )
                            )
                results.append(pairs)
        return results

    def _require_fitted(self) -> None:
        if not hasattr(self, "net_"):
            raise CheckpointError("cause model is not fitted")

    # -- persistence --------------------------------------------------------

    def save(self, path: str | Path, which: str = "current") -> None:
        """Single-file checkpoint: weights, config, seed, embedder identifier.

        ``which`` selects 'current' (loaded weights), 'final', or 'best'.
        """
        self._require_fitted()
        states = {
            "current": self.net_.state_dict(),
            "final": getattr(self, "final_state_", None),
            "best": getattr(self, "best_state_", None),
        }
        state = states.get(which)
        if state is None:
            raise CheckpointError(f"no {which!r} weights available")
        torch.save(
            {
                "state_dict": state,
                "params": {
                    k: v for k, v in self.get_params().items() if k != "embedder"
                },
                "embedder_id": self.embedder_id_,
                "best_dev_f1": getattr(self, "best_dev_f1_", None),
            },
            path,
        )

    @classmethod
    def load(cls, path: str | Path, embedder: Embedder) -> "CauseExtractor":
        try:
            payload = torch.load(path, map_location="cpu", weights_only=False)
        except Exception as exc:
            raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
        if payload["embedder_id"] != embedder.id:
            raise CheckpointError(
                f"checkpoint was trained with embedder {payload['embedder_id']!r}, "
                f"got {embedder.id!r}"
            )
        model = cls(embedder=embedder, **payload["params"])
        model.net_ = _CauseNet(
            embed_dim=embedder.dim,
            hidden_size=model.hidden_size,
            num_layers=model.num_layers,
            ff_hidden=model.ff_hidden,
            dropout=model.dropout,
            max_speakers=model.max_speakers,
        )
        model.net_.load_state_dict(payload["state_dict"])
        model.net_.eval()
        model.embedder_id_ = payload["embedder_id"]
        model.best_dev_f1_ = payload.get("best_dev_f1")
        return model

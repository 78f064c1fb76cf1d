"""Locally trainable fallback emotion classifier.

Stands in for the remote fine-tuned model so the two-stage pipeline runs
end to end without the proprietary service.  Features are the
concatenated sentence embeddings of the preceding and target utterances
(the same embedding provider the cause stage uses); the head is
multinomial logistic regression, deterministic under a fixed seed.
"""

from __future__ import annotations

import pickle
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.linear_model import LogisticRegression

from .backends import ClassificationResult
from .corpus import Conversation
from .embeddings import Embedder, EmbeddingCache, embed_texts
from .errors import CheckpointError, ConfigError, DataError
from .labels import ALL_LABELS, EmotionLabel
from .prompts import START_SENTINEL


class LocalEmotionClassifier(BaseEstimator, ClassifierMixin):
    def __init__(self, embedder: Embedder | None = None, seed: int = 0, max_iter: int = 1000,
                 C: float = 1.0):
        self.embedder = embedder
        self.seed = seed
        self.max_iter = max_iter
        self.C = C

    def _features(
        self, conversations: list[Conversation], cache: EmbeddingCache | None
    ) -> np.ndarray:
        texts: list[str] = []
        for conv in conversations:
            for u in conv.utterances:
                texts.append(conv.utterance(u.index - 1).text if u.index > 1 else START_SENTINEL)
                texts.append(u.text)
        vectors = embed_texts(texts, self.embedder, cache)
        return np.concatenate([vectors[0::2], vectors[1::2]], axis=1)

    def fit(self, conversations: list[Conversation], cache: EmbeddingCache | None = None):
        if not conversations:
            raise ConfigError("cannot train on an empty conversation list")
        if self.embedder is None:
            raise ConfigError("an embedder is required for training")
        labels: list[str] = []
        for conv in conversations:
            for u in conv.utterances:
                if u.gold_emotion is None:
                    raise DataError(
                        f"conversation {conv.id}, utterance {u.index}: missing gold emotion"
                    )
                labels.append(u.gold_emotion.value)
        features = self._features(conversations, cache)
        self.model_ = LogisticRegression(
            max_iter=self.max_iter, C=self.C, random_state=self.seed
        )
        self.model_.fit(features, labels)
        self.embedder_id_ = self.embedder.id
        return self

    def predict(self, conversations: list[Conversation], cache: EmbeddingCache | None = None
                ) -> list[list[EmotionLabel]]:
        if not hasattr(self, "model_"):
            raise CheckpointError("classifier is not fitted")
        features = self._features(conversations, cache)
        raw = self.model_.predict(features)
        out: list[list[EmotionLabel]] = []
        pos = 0
        for conv in conversations:
            out.append([EmotionLabel(v) for v in raw[pos : pos + len(conv)]])
            pos += len(conv)
        return out

    def classify(self, conv: Conversation, cache: EmbeddingCache | None = None
                 ) -> list[ClassificationResult]:
        """classify_conversation-compatible results for one dialog."""
        labels = self.predict([conv], cache)[0]
        return [
            ClassificationResult(index=i + 1, label=lbl, raw_output=lbl.value,
                                 backend_kind="local")
            for i, lbl in enumerate(labels)
        ]

    # -- persistence ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        if not hasattr(self, "model_"):
            raise CheckpointError("classifier is not fitted")
        payload = {
            "model": self.model_,
            "embedder_id": self.embedder_id_,
            "params": {"seed": self.seed, "max_iter": self.max_iter, "C": self.C},
            "labels": [lbl.value for lbl in ALL_LABELS],
        }
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            pickle.dump(payload, fh)
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path, embedder: Embedder) -> "LocalEmotionClassifier":
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
        if payload["embedder_id"] != embedder.id:
            raise CheckpointError(
                f"checkpoint was trained with embedder {payload['embedder_id']!r}, "
                f"got {embedder.id!r}"
            )
        clf = cls(embedder=embedder, **payload["params"])
        clf.model_ = payload["model"]
        clf.embedder_id_ = payload["embedder_id"]
        return clf

"""Utterance embedding providers and the on-disk embedding cache.

Two providers share one interface:

* ``TransformerEmbedder`` — mean pooling over the penultimate hidden layer
  of a pre-trained bidirectional encoder (default ``bert-base-uncased``).
  Requires the ``transformers`` extra and local model weights.
* ``HashingEmbedder`` — a deterministic bag-of-words feature-hashing
  encoder.  No downloads, stable across platforms; the offline default
  for tests and environments without model weights.

Both are deterministic for fixed identifier and text, so vectors can be
cached on disk keyed by (embedder id, text hash).
"""

from __future__ import annotations

import hashlib
import re
from pathlib import Path
from typing import Protocol

import numpy as np

from .corpus import Conversation
from .errors import DataError

_TOKEN_RE = re.compile(r"[a-z0-9']+")


class Embedder(Protocol):
    id: str
    dim: int

    def encode(self, texts: list[str]) -> np.ndarray: ...


class HashingEmbedder:
    """Deterministic feature-hashing sentence encoder.

    Each lowercase token is hashed (blake2b) to a fixed pseudo-random
    unit vector; a sentence embedding is the normalized token sum.
    Sentences sharing tokens therefore have high cosine similarity.
    """

    def __init__(self, dim: int = 768):
        self.dim = dim
        self.id = f"hashing-v1-d{dim}"
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            seed = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")
            rng = np.random.default_rng(seed)
            vec = rng.standard_normal(self.dim).astype(np.float32)
            vec /= np.linalg.norm(vec)
            self._token_cache[token] = vec
        return vec

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            tokens = _TOKEN_RE.findall(text.lower())
            if not tokens:
                continue
            acc = np.sum([self._token_vector(t) for t in tokens], axis=0)
            norm = np.linalg.norm(acc)
            if norm > 0:
                acc = acc / norm
            out[i] = acc
        return out


class TransformerEmbedder:
    """Mean pooling from the penultimate hidden layer of a pre-trained encoder."""

    def __init__(self, model_name: str = "bert-base-uncased", device: str = "cpu"):
        import torch  # noqa: F401
        from transformers import AutoModel, AutoTokenizer

        self.id = f"transformer-{model_name}-penultimate-mean"
        self._tokenizer = AutoTokenizer.from_pretrained(model_name)
        self._model = AutoModel.from_pretrained(model_name, output_hidden_states=True)
        self._model.eval().to(device)
        self._device = device
        self.dim = self._model.config.hidden_size

    def encode(self, texts: list[str]) -> np.ndarray:
        import torch

        batch = self._tokenizer(
            texts, padding=True, truncation=True, max_length=128, return_tensors="pt"
        ).to(self._device)
        with torch.no_grad():
            hidden = self._model(**batch).hidden_states[-2]
        mask = batch["attention_mask"].unsqueeze(-1).float()
        pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)
        return pooled.cpu().numpy().astype(np.float32)


class EmbeddingCache:
    """Directory of .npy files keyed by (embedder id, text hash)."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, embedder_id: str, text: str) -> Path:
        digest = hashlib.sha256(
            embedder_id.encode("utf-8") + b"\x00" + text.encode("utf-8")
        ).hexdigest()
        return self.directory / f"{digest}.npy"

    def get(self, embedder_id: str, text: str) -> np.ndarray | None:
        path = self._path(embedder_id, text)
        if path.exists():
            return np.load(path)
        return None

    def put(self, embedder_id: str, text: str, vector: np.ndarray) -> None:
        path = self._path(embedder_id, text)
        tmp = path.with_suffix(".tmp.npy")
        np.save(tmp, vector)
        tmp.replace(path)


def embed_texts(
    texts: list[str], embedder: Embedder, cache: EmbeddingCache | None = None
) -> np.ndarray:
    """Encode texts, consulting and filling the cache when given."""
    if cache is None:
        return embedder.encode(texts)
    vectors: list[np.ndarray | None] = [cache.get(embedder.id, t) for t in texts]
    missing = [i for i, v in enumerate(vectors) if v is None]
    if missing:
        try:
            fresh = embedder.encode([texts[i] for i in missing])
        except Exception as exc:
            raise DataError(f"embedding failed for {len(missing)} utterances: {exc}") from exc
        for j, i in enumerate(missing):
            vectors[i] = fresh[j]
            cache.put(embedder.id, texts[i], fresh[j])
    return np.stack(vectors)  # type: ignore[arg-type]


def embed_conversation(
    conv: Conversation, embedder: Embedder, cache: EmbeddingCache | None = None
) -> np.ndarray:
    """One vector per utterance, shape (n, embedder.dim)."""
    return embed_texts([u.text for u in conv.utterances], embedder, cache)

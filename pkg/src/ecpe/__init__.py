"""Two-stage emotion-cause pair extraction for multi-party dialogs."""

__version__ = "0.1.0"

from .labels import EmotionLabel, normalize_label  # noqa: F401
from .corpus import (  # noqa: F401
    Conversation,
    EmotionCausePair,
    Utterance,
    corpus_stats,
    load_corpus,
    speaker_encodings,
    split_corpus,
)
from .metrics import classification_f1, score_pairs, weighted_average  # noqa: F401

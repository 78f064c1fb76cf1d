"""The closed 7-way emotion label set and output normalization."""

from __future__ import annotations

import enum
import string

from .errors import NormalizationError


class EmotionLabel(str, enum.Enum):
    ANGER = "anger"
    DISGUST = "disgust"
    FEAR = "fear"
    JOY = "joy"
    SADNESS = "sadness"
    SURPRISE = "surprise"
    NEUTRAL = "neutral"

    def __str__(self) -> str:  # noqa: D105
        return self.value


#: All seven labels in canonical order.
ALL_LABELS: tuple[EmotionLabel, ...] = tuple(EmotionLabel)

#: The six labels an emotion-cause pair may carry (everything but neutral).
EMOTIONAL_LABELS: tuple[EmotionLabel, ...] = tuple(
    lbl for lbl in EmotionLabel if lbl is not EmotionLabel.NEUTRAL
)

_LABEL_BY_NAME = {lbl.value: lbl for lbl in EmotionLabel}

#: Index of each non-neutral label in the 6-dim one-hot used by the cause stage.
EMOTION_ONEHOT_INDEX = {lbl: i for i, lbl in enumerate(EMOTIONAL_LABELS)}


def parse_label(value: str) -> EmotionLabel:
    """Strict parse of a label string; raises SchemaError-compatible KeyError.

    Used by corpus loading, where anything outside the closed set is a
    schema violation rather than a model-output quirk.
    """
    try:
        return _LABEL_BY_NAME[value]
    except KeyError:
        raise KeyError(value) from None


def normalize_label(raw: str) -> EmotionLabel:
    """Map raw model output to a label: lowercase, strip whitespace/punctuation.

    Only exact label names survive normalization; synonyms ("happiness")
    fail so the caller's fallback policy stays explicit.
    """
    cleaned = raw.strip().strip(string.punctuation + string.whitespace).lower()
    label = _LABEL_BY_NAME.get(cleaned)
    if label is None:
        raise NormalizationError(raw)
    return label

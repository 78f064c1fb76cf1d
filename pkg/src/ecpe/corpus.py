"""Loading, validation, splitting, and summaries of annotated dialog corpora.

Two on-disk formats are supported:

* ``task-json``: the shared-task release format — an array of conversation
  objects whose gold pairs are encoded as ``["<targetID>_<emotion>",
  "<causeID>_<span text>"]`` string tuples.  Span text is matched against
  the cause utterance to recover character offsets.
* ``canonical-json``: this package's normalized schema with explicit
  integer indices and half-open ``[start, end)`` character spans.  The
  JSON-Schema lives at ``ecpe/schemas/canonical.schema.json``.

All corpus values are immutable after load and safe to share across threads.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapacityError, ConfigError, CorpusParseError, SchemaError
from .labels import ALL_LABELS, EmotionLabel, parse_label

#: Fixed default seed for the reproducible 9:1 dialog split.  The organizers
#: published only split sizes, not membership, so the split here is ours.
DEFAULT_SPLIT_SEED = 13


@dataclass(frozen=True)
class EmotionCausePair:
    """A (cause utterance, target utterance, emotion) prediction/annotation.

    ``cause_span`` is a half-open character interval into the cause
    utterance's text.  System predictions always span the whole cause
    utterance; gold annotations may cover a sub-utterance span.
    """

    cause_index: int
    target_index: int
    emotion: EmotionLabel
    cause_span: tuple[int, int]

    def __post_init__(self):
        if self.emotion is EmotionLabel.NEUTRAL:
            raise SchemaError("emotion-cause pair cannot carry the neutral label")
        start, end = self.cause_span
        if not (0 <= start < end):
            raise SchemaError(
                f"invalid cause span [{start}, {end}) for pair "
                f"({self.cause_index}, {self.target_index})"
            )


@dataclass(frozen=True)
class Utterance:
    index: int  # 1-based position within the conversation
    speaker: str
    text: str
    gold_emotion: EmotionLabel | None = None


@dataclass(frozen=True)
class Conversation:
    id: str
    utterances: tuple[Utterance, ...]
    gold_pairs: tuple[EmotionCausePair, ...] = ()

    def __len__(self) -> int:
        return len(self.utterances)

    def utterance(self, index: int) -> Utterance:
        """1-based lookup."""
        return self.utterances[index - 1]


@dataclass(frozen=True)
class SpeakerEncoding:
    """Per-conversation one-hot speaker vectors, first-appearance order."""

    speaker_index: dict[str, int]
    vectors: tuple[np.ndarray, ...]  # one per utterance, dim = max_speakers
    max_speakers: int


@dataclass
class StatsReport:
    n_conversations: int
    n_utterances: int
    n_pairs: int
    per_emotion_utterances: dict[EmotionLabel, int]
    n_unlabeled_utterances: int
    #: Among non-neutral gold utterances, the fraction appearing as the
    #: target of at least one gold pair.  None when there are none.
    emotional_with_cause_fraction: float | None
    #: Among utterances appearing as a cause, the fraction causing more
    #: than one distinct emotion.  None when there are no causes.
    multi_emotion_cause_fraction: float | None

    def to_dict(self) -> dict:
        return {
            "n_conversations": self.n_conversations,
            "n_utterances": self.n_utterances,
            "n_pairs": self.n_pairs,
            "per_emotion_utterances": {
                str(k): v for k, v in self.per_emotion_utterances.items()
            },
            "n_unlabeled_utterances": self.n_unlabeled_utterances,
            "emotional_with_cause_fraction": self.emotional_with_cause_fraction,
            "multi_emotion_cause_fraction": self.multi_emotion_cause_fraction,
        }


@dataclass
class ValidationFinding:
    conversation_id: str
    kind: str  # empty-text | emotion-mismatch | future-cause | ambiguous-span | span-not-found
    detail: str


@dataclass
class ValidationReport:
    findings: list[ValidationFinding] = field(default_factory=list)

    def add(self, conv_id: str, kind: str, detail: str) -> None:
        self.findings.append(ValidationFinding(conv_id, kind, detail))

    def by_kind(self, kind: str) -> list[ValidationFinding]:
        return [f for f in self.findings if f.kind == kind]


# ---------------------------------------------------------------------------
# Loading

def load_corpus(path: str | Path, format: str = "task-json") -> list[Conversation]:
    """Load a corpus file in the declared schema.

    Indices are normalized to contiguous 1..n (non-contiguous source
    indices are a schema error), gold pairs are attached, and unknown
    emotion strings are rejected.
    """
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorpusParseError(f"{path}:{exc.lineno}: malformed JSON: {exc.msg}") from exc

    if format == "task-json":
        return _load_task_json(data, path)
    if format == "canonical-json":
        return _load_canonical_json(data, path)
    raise ConfigError(f"unknown corpus format: {format!r}")


def _parse_emotion(value: str, where: str) -> EmotionLabel:
    try:
        return parse_label(value)
    except KeyError:
        raise SchemaError(f"{where}: unknown emotion label {value!r}") from None


def _check_contiguous(indices: list[int], conv_id: str) -> None:
    if indices != list(range(1, len(indices) + 1)):
        raise SchemaError(
            f"conversation {conv_id}: utterance indices are not contiguous 1..n: {indices}"
        )


def _load_task_json(data, path: Path) -> list[Conversation]:
    if not isinstance(data, list):
        raise SchemaError(f"{path}: task-json root must be an array of conversations")
    conversations = []
    for entry in data:
        conv_id = str(entry.get("conversation_ID", ""))
        if not conv_id:
            raise SchemaError(f"{path}: conversation without conversation_ID")
        raw_utts = entry.get("conversation", [])
        indices = [int(u["utterance_ID"]) for u in raw_utts]
        _check_contiguous(indices, conv_id)
        utterances = []
        for u in raw_utts:
            emotion = None
            if "emotion" in u and u["emotion"] is not None:
                emotion = _parse_emotion(
                    u["emotion"], f"conversation {conv_id}, utterance {u['utterance_ID']}"
                )
            utterances.append(
                Utterance(
                    index=int(u["utterance_ID"]),
                    speaker=str(u.get("speaker", "")),
                    text=u.get("text", ""),
                    gold_emotion=emotion,
                )
            )
        pairs = []
        for raw_pair in entry.get("emotion-cause_pairs", []):
            pairs.append(_parse_task_pair(raw_pair, utterances, conv_id))
        conversations.append(
            Conversation(id=conv_id, utterances=tuple(utterances), gold_pairs=tuple(pairs))
        )
    return conversations


def _parse_task_pair(
    raw_pair, utterances: list[Utterance], conv_id: str
) -> EmotionCausePair:
    if not (isinstance(raw_pair, list) and len(raw_pair) == 2):
        raise SchemaError(f"conversation {conv_id}: pair entry must be a 2-element array")
    target_part, cause_part = raw_pair
    try:
        target_id, emotion_str = target_part.split("_", 1)
        target_index = int(target_id)
    except ValueError:
        raise SchemaError(
            f"conversation {conv_id}: malformed pair target {target_part!r}"
        ) from None
    emotion = _parse_emotion(emotion_str, f"conversation {conv_id}, pair target {target_part!r}")
    if "_" in cause_part:
        cause_id, span_text = cause_part.split("_", 1)
    else:
        cause_id, span_text = cause_part, ""
    try:
        cause_index = int(cause_id)
    except ValueError:
        raise SchemaError(
            f"conversation {conv_id}: malformed pair cause {cause_part!r}"
        ) from None
    n = len(utterances)
    if not (1 <= target_index <= n and 1 <= cause_index <= n):
        raise SchemaError(
            f"conversation {conv_id}: pair ({cause_index}, {target_index}) "
            f"references an utterance outside 1..{n}"
        )
    cause_text = utterances[cause_index - 1].text
    span = _recover_span(span_text, cause_text)
    return EmotionCausePair(
        cause_index=cause_index, target_index=target_index, emotion=emotion, cause_span=span
    )


def _recover_span(span_text: str, cause_text: str) -> tuple[int, int]:
    """Locate the annotated span text inside the cause utterance.

    First occurrence wins when the text appears more than once (the task
    format does not disambiguate; validation flags these).  When the span
    text cannot be located the whole utterance is used and validation
    flags the conversation.
    """
    if span_text:
        pos = cause_text.find(span_text)
        if pos < 0:
            stripped = span_text.strip()
            pos = cause_text.find(stripped) if stripped else -1
            if pos >= 0:
                return (pos, pos + len(stripped))
        else:
            return (pos, pos + len(span_text))
    return (0, max(len(cause_text), 1))


def _load_canonical_json(data, path: Path) -> list[Conversation]:
    if not isinstance(data, dict) or "conversations" not in data:
        raise SchemaError(f"{path}: canonical-json root must be an object with 'conversations'")
    conversations = []
    for entry in data["conversations"]:
        conv_id = str(entry["id"])
        indices = [int(u["index"]) for u in entry["utterances"]]
        _check_contiguous(indices, conv_id)
        utterances = tuple(
            Utterance(
                index=int(u["index"]),
                speaker=str(u["speaker"]),
                text=u["text"],
                gold_emotion=(
                    _parse_emotion(u["emotion"], f"conversation {conv_id}")
                    if u.get("emotion") is not None
                    else None
                ),
            )
            for u in entry["utterances"]
        )
        pairs = []
        for p in entry.get("pairs", []):
            cause_index = int(p["cause_index"])
            target_index = int(p["target_index"])
            n = len(utterances)
            if not (1 <= target_index <= n and 1 <= cause_index <= n):
                raise SchemaError(
                    f"conversation {conv_id}: pair ({cause_index}, {target_index}) "
                    f"references an utterance outside 1..{n}"
                )
            start, end = p["span"]
            if end > max(len(utterances[cause_index - 1].text), 1):
                raise SchemaError(
                    f"conversation {conv_id}: span [{start}, {end}) exceeds cause "
                    f"utterance length {len(utterances[cause_index - 1].text)}"
                )
            pairs.append(
                EmotionCausePair(
                    cause_index=cause_index,
                    target_index=target_index,
                    emotion=_parse_emotion(p["emotion"], f"conversation {conv_id}"),
                    cause_span=(int(start), int(end)),
                )
            )
        conversations.append(
            Conversation(id=conv_id, utterances=utterances, gold_pairs=tuple(pairs))
        )
    return conversations


def corpus_to_canonical(conversations: list[Conversation]) -> dict:
    """Serialize to the canonical-json structure (round-trips with load)."""
    return {
        "conversations": [
            {
                "id": conv.id,
                "utterances": [
                    {
                        "index": u.index,
                        "speaker": u.speaker,
                        "text": u.text,
                        "emotion": u.gold_emotion.value if u.gold_emotion else None,
                    }
                    for u in conv.utterances
                ],
                "pairs": [
                    {
                        "cause_index": p.cause_index,
                        "target_index": p.target_index,
                        "emotion": p.emotion.value,
                        "span": list(p.cause_span),
                    }
                    for p in conv.gold_pairs
                ],
            }
            for conv in conversations
        ]
    }


def save_canonical(conversations: list[Conversation], path: str | Path) -> None:
    payload = corpus_to_canonical(conversations)
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True), encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# Validation

def validate_corpus(conversations: list[Conversation]) -> ValidationReport:
    """Report (never repair) annotation issues the loader tolerates.

    Flags empty utterance texts, gold pairs whose emotion disagrees with
    the target's gold emotion, future causes (cause after target), and
    span texts occurring more than once in their cause utterance.
    """
    report = ValidationReport()
    for conv in conversations:
        for u in conv.utterances:
            if not u.text:
                report.add(conv.id, "empty-text", f"utterance {u.index} has empty text")
        for p in conv.gold_pairs:
            target = conv.utterance(p.target_index)
            if target.gold_emotion is not None and target.gold_emotion != p.emotion:
                report.add(
                    conv.id,
                    "emotion-mismatch",
                    f"pair ({p.cause_index}, {p.target_index}) labelled {p.emotion} "
                    f"but target utterance is {target.gold_emotion}",
                )
            if p.cause_index > p.target_index:
                report.add(
                    conv.id,
                    "future-cause",
                    f"pair ({p.cause_index}, {p.target_index}): cause follows target",
                )
            cause_text = conv.utterance(p.cause_index).text
            span_text = cause_text[p.cause_span[0] : p.cause_span[1]]
            if span_text and cause_text.count(span_text) > 1:
                report.add(
                    conv.id,
                    "ambiguous-span",
                    f"pair ({p.cause_index}, {p.target_index}): span text occurs "
                    f"{cause_text.count(span_text)} times; first occurrence recorded",
                )
    return report


# ---------------------------------------------------------------------------
# Splitting and statistics

def split_corpus(
    corpus: list[Conversation], dev_fraction: float, seed: int = DEFAULT_SPLIT_SEED
) -> tuple[list[Conversation], list[Conversation]]:
    """Deterministic disjoint partition by whole conversations.

    The dev set gets ceil(dev_fraction * n) dialogs, which reproduces the
    published 1,236/138 split of 1,374 dialogs at dev_fraction 0.1.
    Original corpus order is preserved within each split.
    """
    if not 0 < dev_fraction < 1:
        raise ConfigError(f"dev_fraction must be in (0, 1), got {dev_fraction}")
    if not corpus:
        raise ConfigError("cannot split an empty corpus")
    n_dev = math.ceil(dev_fraction * len(corpus))
    order = list(range(len(corpus)))
    random.Random(seed).shuffle(order)
    dev_positions = set(order[:n_dev])
    train = [conv for i, conv in enumerate(corpus) if i not in dev_positions]
    dev = [conv for i, conv in enumerate(corpus) if i in dev_positions]
    return train, dev


def corpus_stats(corpus: list[Conversation]) -> StatsReport:
    per_emotion = {lbl: 0 for lbl in ALL_LABELS}
    unlabeled = 0
    n_utts = 0
    n_pairs = 0
    emotional = 0
    emotional_with_cause = 0
    cause_emotions: dict[tuple[str, int], set[EmotionLabel]] = {}
    for conv in corpus:
        n_utts += len(conv)
        n_pairs += len(conv.gold_pairs)
        targets_with_cause = {p.target_index for p in conv.gold_pairs}
        for u in conv.utterances:
            if u.gold_emotion is None:
                unlabeled += 1
                continue
            per_emotion[u.gold_emotion] += 1
            if u.gold_emotion is not EmotionLabel.NEUTRAL:
                emotional += 1
                if u.index in targets_with_cause:
                    emotional_with_cause += 1
        for p in conv.gold_pairs:
            cause_emotions.setdefault((conv.id, p.cause_index), set()).add(p.emotion)
    multi = sum(1 for emotions in cause_emotions.values() if len(emotions) > 1)
    return StatsReport(
        n_conversations=len(corpus),
        n_utterances=n_utts,
        n_pairs=n_pairs,
        per_emotion_utterances=per_emotion,
        n_unlabeled_utterances=unlabeled,
        emotional_with_cause_fraction=(emotional_with_cause / emotional if emotional else None),
        multi_emotion_cause_fraction=(multi / len(cause_emotions) if cause_emotions else None),
    )


# ---------------------------------------------------------------------------
# Speaker encodings

def speaker_encodings(conv: Conversation, max_speakers: int) -> SpeakerEncoding:
    """One-hot speaker vectors assigned in first-appearance order."""
    index: dict[str, int] = {}
    for u in conv.utterances:
        if u.speaker not in index:
            if len(index) == max_speakers:
                raise CapacityError(
                    f"conversation {conv.id}: more than {max_speakers} distinct speakers"
                )
            index[u.speaker] = len(index)
    vectors = []
    for u in conv.utterances:
        vec = np.zeros(max_speakers, dtype=np.float32)
        vec[index[u.speaker]] = 1.0
        vectors.append(vec)
    return SpeakerEncoding(speaker_index=index, vectors=tuple(vectors), max_speakers=max_speakers)


def max_observed_speakers(corpus: list[Conversation]) -> int:
    """Largest distinct-speaker count in any conversation (max_speakers default)."""
    return max((len({u.speaker for u in conv.utterances}) for conv in corpus), default=0)

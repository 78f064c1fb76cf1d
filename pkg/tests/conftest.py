import json
import random

import pytest

from ecpe.corpus import Conversation, EmotionCausePair, Utterance
from ecpe.labels import EmotionLabel

#: emotion-indicative vocabulary so text correlates with the label; the
#: hashing embedder turns word presence into separable features
EMOTION_WORDS = {
    EmotionLabel.ANGER: ["furious", "angry", "rage", "mad"],
    EmotionLabel.DISGUST: ["gross", "disgusting", "revolting"],
    EmotionLabel.FEAR: ["scared", "terrified", "afraid"],
    EmotionLabel.JOY: ["happy", "wonderful", "delighted"],
    EmotionLabel.SADNESS: ["sad", "miserable", "crying"],
    EmotionLabel.SURPRISE: ["wow", "unexpected", "astonished"],
    EmotionLabel.NEUTRAL: ["okay", "meeting", "schedule", "fine"],
}

FILLERS = ["well", "so", "today", "again", "maybe", "right", "now"]
SPEAKERS = ["Alice", "Bob", "Carol", "Dave"]


def make_synthetic_corpus(
    n_conversations: int,
    seed: int = 0,
    min_len: int = 2,
    max_len: int = 6,
    neutral_rate: float = 0.45,
) -> list[Conversation]:
    """Dialogs with learnable structure.

    Every non-neutral utterance is self-caused; additionally the previous
    utterance is a cause iff it contains the word "because".  This gives
    the cause model a text-detectable rule that the naive self+previous
    heuristic over-applies.
    """
    rng = random.Random(seed)
    conversations = []
    for c in range(n_conversations):
        n = rng.randint(min_len, max_len)
        utterances = []
        pairs = []
        prev_has_because = False
        for t in range(1, n + 1):
            if rng.random() < neutral_rate:
                emotion = EmotionLabel.NEUTRAL
            else:
                emotion = rng.choice(
                    [lbl for lbl in EmotionLabel if lbl is not EmotionLabel.NEUTRAL]
                )
            words = [rng.choice(FILLERS), rng.choice(EMOTION_WORDS[emotion])]
            because = rng.random() < 0.3
            if because:
                words.insert(1, "because")
            rng.shuffle(words)
            text = "I am " + " ".join(words) + "."
            utterances.append(
                Utterance(
                    index=t,
                    speaker=rng.choice(SPEAKERS),
                    text=text,
                    gold_emotion=emotion,
                )
            )
            if emotion is not EmotionLabel.NEUTRAL:
                pairs.append(
                    EmotionCausePair(
                        cause_index=t,
                        target_index=t,
                        emotion=emotion,
                        cause_span=(0, len(text)),
                    )
                )
                if t > 1 and prev_has_because:
                    prev_text = utterances[t - 2].text
                    pairs.append(
                        EmotionCausePair(
                            cause_index=t - 1,
                            target_index=t,
                            emotion=emotion,
                            cause_span=(0, len(prev_text)),
                        )
                    )
            prev_has_because = because
        conversations.append(
            Conversation(id=f"synth-{seed}-{c}", utterances=tuple(utterances),
                         gold_pairs=tuple(pairs))
        )
    return conversations


TASK_JSON_SAMPLE = [
    {
        "conversation_ID": 1,
        "conversation": [
            {"utterance_ID": 1, "speaker": "Chandler", "text": "Hey Mon!",
             "emotion": "neutral"},
            {"utterance_ID": 2, "speaker": "Monica", "text": "You broke my favorite mug!",
             "emotion": "anger"},
            {"utterance_ID": 3, "speaker": "Chandler", "text": "I am so sorry.",
             "emotion": "sadness"},
        ],
        "emotion-cause_pairs": [
            ["2_anger", "2_broke my favorite mug"],
            ["3_sadness", "2_You broke my favorite mug!"],
        ],
    },
    {
        "conversation_ID": 2,
        "conversation": [
            {"utterance_ID": 1, "speaker": "Joey", "text": "How you doing?",
             "emotion": "joy"},
        ],
        "emotion-cause_pairs": [["1_joy", "1_How you doing?"]],
    },
]


@pytest.fixture
def task_json_file(tmp_path):
    path = tmp_path / "sample_task.json"
    path.write_text(json.dumps(TASK_JSON_SAMPLE), encoding="utf-8")
    return path


@pytest.fixture
def small_corpus():
    return make_synthetic_corpus(10, seed=7)

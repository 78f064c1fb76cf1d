"""Prompt construction for utterance-level emotion classification.

A template is an instruction with two placeholders: ``<UTT_1>`` receives
the preceding utterance, ``<UTT_2>`` the target utterance.  The first
utterance of a dialog has no predecessor; its ``<UTT_1>`` slot is filled
with the fixed sentinel ``(start of conversation)``.

Message layout (golden-file tested):
  * each few-shot exemplar contributes a (system, assistant) message
    pair: the instruction filled with the exemplar's utterances, then
    the one-word gold label;
  * the query is a final system message, the instruction filled with the
    conversation's utterances.  The model's reply is expected to be a
    single emotion word.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import Conversation
from .errors import ConfigError
from .labels import EmotionLabel

PREV_PLACEHOLDER = "<UTT_1>"
TARGET_PLACEHOLDER = "<UTT_2>"
START_SENTINEL = "(start of conversation)"

DEFAULT_INSTRUCTION = (
    "You will see two consecutive utterances from a conversation. "
    "Decide which emotion the second utterance expresses, taking the first "
    "utterance into account as context. Answer with exactly one word out of: "
    "anger, disgust, fear, joy, sadness, surprise, neutral.\n"
    f"First utterance: {PREV_PLACEHOLDER}\n"
    f"Second utterance: {TARGET_PLACEHOLDER}"
)


@dataclass(frozen=True)
class PromptTemplate:
    instruction: str = DEFAULT_INSTRUCTION
    #: (previous text, target text, gold label) triples; empty for zero-shot.
    exemplars: tuple[tuple[str, str, EmotionLabel], ...] = field(default_factory=tuple)

    def __post_init__(self):
        for placeholder in (PREV_PLACEHOLDER, TARGET_PLACEHOLDER):
            count = self.instruction.count(placeholder)
            if count != 1:
                raise ConfigError(
                    f"instruction must contain {placeholder} exactly once, found {count}"
                )

    def fill(self, previous: str, target: str) -> str:
        # Target substituted first so placeholder-like content inside the
        # previous utterance cannot be re-substituted.
        return self.instruction.replace(TARGET_PLACEHOLDER, target).replace(
            PREV_PLACEHOLDER, previous
        )


def build_prompt(template: PromptTemplate, conv: Conversation, t: int) -> list[dict]:
    """Message sequence classifying utterance ``t`` (1-based) of ``conv``."""
    if not 1 <= t <= len(conv):
        raise ConfigError(f"utterance index {t} outside 1..{len(conv)}")
    previous = conv.utterance(t - 1).text if t > 1 else START_SENTINEL
    target = conv.utterance(t).text
    messages = []
    for ex_prev, ex_target, ex_label in template.exemplars:
        messages.append({"role": "system", "content": template.fill(ex_prev, ex_target)})
        messages.append({"role": "assistant", "content": ex_label.value})
    messages.append({"role": "system", "content": template.fill(previous, target)})
    return messages

"""Fine-tune dataset construction: one JSON-lines chat record per utterance.

Each record carries the same message sequence inference would use plus a
single-word assistant message equal to the gold label.  Submitting the
file to the remote fine-tuning service is a manual step outside this
package; temperature-0 inference then uses the returned model id with
the ``remote-finetuned`` backend kind.
"""

from __future__ import annotations

import json
from pathlib import Path

from .corpus import Conversation
from .errors import DataError
from .prompts import PromptTemplate, build_prompt


def finetune_records(corpus: list[Conversation], template: PromptTemplate) -> list[dict]:
    records = []
    for conv in corpus:
        for u in conv.utterances:
            if u.gold_emotion is None:
                raise DataError(
                    f"conversation {conv.id}, utterance {u.index}: "
                    "missing gold emotion; cannot build a fine-tune record"
                )
            messages = build_prompt(template, conv, u.index)
            messages.append({"role": "assistant", "content": u.gold_emotion.value})
            records.append({"messages": messages})
    return records


def build_finetune_dataset(
    corpus: list[Conversation], template: PromptTemplate, path: str | Path
) -> int:
    """Write the JSONL file; returns the record count (= utterance count)."""
    records = finetune_records(corpus, template)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    tmp.replace(path)
    return len(records)

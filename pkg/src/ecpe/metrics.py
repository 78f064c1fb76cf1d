"""Strict and proportional pair F1 with weighted averaging, plus label F1.

A predicted pair can only match a gold pair with the identical
(conversation, cause index, target index, emotion) key.  Strict credit
additionally requires the exact cause span; proportional credit is the
character-overlap ratio, taken per side: overlap/|pred span| toward
precision and overlap/|gold span| toward recall.

When several pairs share a key but differ in span (multi-span gold
annotations), matching is one-to-one and chosen to maximize total credit
(ties broken toward precision credit).  An exhaustive optimal matching is
used so results are reproducible and order-independent; key groups are
tiny in practice (predictions are whole-utterance, so they never collide).
"""

from __future__ import annotations

import itertools
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

from .errors import ConfigError, DataError
from .labels import ALL_LABELS, EMOTIONAL_LABELS, EmotionLabel
from .corpus import Conversation, EmotionCausePair

_EXHAUSTIVE_LIMIT = 7  # key-group side size above which we fall back to Hungarian


@dataclass
class PRF:
    precision: float
    recall: float
    f1: float


@dataclass
class MetricReport:
    mode: str  # "strict" or "proportional"
    per_emotion: dict[EmotionLabel, PRF]
    supports: dict[EmotionLabel, int]  # gold pair counts per emotion
    weighted_f1: float
    macro_f1: float
    micro: PRF

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "per_emotion": {
                str(e): {"precision": s.precision, "recall": s.recall, "f1": s.f1}
                for e, s in self.per_emotion.items()
            },
            "supports": {str(e): n for e, n in self.supports.items()},
            "weighted_f1": self.weighted_f1,
            "macro_f1": self.macro_f1,
            "micro": {
                "precision": self.micro.precision,
                "recall": self.micro.recall,
                "f1": self.micro.f1,
            },
        }


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _normalize(pairs) -> list[tuple[str, EmotionCausePair]]:
    """Accept a plain pair list (single conversation) or conv-id -> pairs map."""
    if isinstance(pairs, Mapping):
        tagged = [(str(cid), p) for cid, plist in pairs.items() for p in plist]
    else:
        tagged = [("", p) for p in pairs]
    # collapse exact duplicates, keeping first-seen order
    seen = set()
    out = []
    for cid, p in tagged:
        key = (cid, p.cause_index, p.target_index, p.emotion, p.cause_span)
        if key not in seen:
            seen.add(key)
            out.append((cid, p))
    return out


def _overlap(a: tuple[int, int], b: tuple[int, int]) -> int:
    return max(0, min(a[1], b[1]) - max(a[0], b[0]))


def _match_group(
    preds: list[EmotionCausePair], golds: list[EmotionCausePair]
) -> tuple[float, float]:
    """Optimal one-to-one matching inside one key group.

    Returns (precision credit sum, recall credit sum), maximizing first
    the total credit and then the precision credit.
    """
    if len(preds) == 1 and len(golds) == 1:
        ov = _overlap(preds[0].cause_span, golds[0].cause_span)
        return (
            ov / _span_len(preds[0]),
            ov / _span_len(golds[0]),
        )
    if min(len(preds), len(golds)) > _EXHAUSTIVE_LIMIT:
        return _match_group_hungarian(preds, golds)
    # exhaustive: assign the smaller side into the larger
    swap = len(preds) > len(golds)
    small, large = (golds, preds) if swap else (preds, golds)
    best = (-1.0, -1.0, 0.0, 0.0)
    for chosen in itertools.permutations(range(len(large)), len(small)):
        p_credit = r_credit = 0.0
        for si, li in enumerate(chosen):
            pred, gold = (large[li], small[si]) if swap else (small[si], large[li])
            ov = _overlap(pred.cause_span, gold.cause_span)
            p_credit += ov / _span_len(pred)
            r_credit += ov / _span_len(gold)
        key = (p_credit + r_credit, p_credit, p_credit, r_credit)
        if key[:2] > best[:2]:
            best = key
    return best[2], best[3]


def _match_group_hungarian(preds, golds) -> tuple[float, float]:
    import numpy as np
    from scipy.optimize import linear_sum_assignment

    cost = np.zeros((len(preds), len(golds)))
    for i, p in enumerate(preds):
        for j, g in enumerate(golds):
            ov = _overlap(p.cause_span, g.cause_span)
            cost[i, j] = -(ov / _span_len(p) + ov / _span_len(g))
    rows, cols = linear_sum_assignment(cost)
    p_credit = r_credit = 0.0
    for i, j in zip(rows, cols):
        ov = _overlap(preds[i].cause_span, golds[j].cause_span)
        p_credit += ov / _span_len(preds[i])
        r_credit += ov / _span_len(golds[j])
    return p_credit, r_credit


def _span_len(pair: EmotionCausePair) -> int:
    return pair.cause_span[1] - pair.cause_span[0]


def _validate_spans(tagged, conversations: Mapping[str, Conversation], what: str) -> None:
    for cid, p in tagged:
        conv = conversations.get(cid)
        if conv is None:
            continue
        limit = max(len(conv.utterance(p.cause_index).text), 1)
        if p.cause_span[1] > limit:
            raise DataError(
                f"{what} pair ({p.cause_index}, {p.target_index}) in conversation "
                f"{cid}: span {p.cause_span} exceeds utterance length {limit}"
            )


def score_pairs(
    pred,
    gold,
    mode: str = "proportional",
    conversations: Mapping[str, Conversation] | None = None,
) -> MetricReport:
    """Per-emotion P/R/F1 with support-weighted and macro averages.

    ``pred`` and ``gold`` are either flat pair lists (one conversation) or
    mappings from conversation id to pair lists.  Pass ``conversations``
    to validate spans against utterance bounds.
    """
    if mode not in ("strict", "proportional"):
        raise ConfigError(f"unknown scoring mode {mode!r}")
    pred_t = _normalize(pred)
    gold_t = _normalize(gold)
    if conversations is not None:
        _validate_spans(pred_t, conversations, "predicted")
        _validate_spans(gold_t, conversations, "gold")

    per_emotion: dict[EmotionLabel, PRF] = {}
    supports: dict[EmotionLabel, int] = {}
    micro_p_credit = micro_r_credit = 0.0
    micro_np = micro_ng = 0
    for emotion in EMOTIONAL_LABELS:
        preds_e = [(c, p) for c, p in pred_t if p.emotion == emotion]
        golds_e = [(c, p) for c, p in gold_t if p.emotion == emotion]
        supports[emotion] = len(golds_e)
        if not preds_e and not golds_e:
            per_emotion[emotion] = PRF(0.0, 0.0, 0.0)
            continue
        if mode == "strict":
            gold_keys = {(c, p.cause_index, p.target_index, p.cause_span) for c, p in golds_e}
            tp = sum(
                1
                for c, p in preds_e
                if (c, p.cause_index, p.target_index, p.cause_span) in gold_keys
            )
            p_credit, r_credit = float(tp), float(tp)
        else:
            groups: dict[tuple, tuple[list, list]] = {}
            for c, p in preds_e:
                groups.setdefault((c, p.cause_index, p.target_index), ([], []))[0].append(p)
            for c, p in golds_e:
                groups.setdefault((c, p.cause_index, p.target_index), ([], []))[1].append(p)
            p_credit = r_credit = 0.0
            for g_preds, g_golds in groups.values():
                if g_preds and g_golds:
                    pc, rc = _match_group(g_preds, g_golds)
                    p_credit += pc
                    r_credit += rc
        precision = p_credit / len(preds_e) if preds_e else 0.0
        recall = r_credit / len(golds_e) if golds_e else 0.0
        per_emotion[emotion] = PRF(precision, recall, _f1(precision, recall))
        micro_p_credit += p_credit
        micro_r_credit += r_credit
        micro_np += len(preds_e)
        micro_ng += len(golds_e)

    f1s = {e: prf.f1 for e, prf in per_emotion.items()}
    total_support = sum(supports.values())
    if total_support > 0:
        weighted, macro = weighted_average(f1s, supports)
    else:
        weighted = macro = 0.0
    micro_p = micro_p_credit / micro_np if micro_np else 0.0
    micro_r = micro_r_credit / micro_ng if micro_ng else 0.0
    return MetricReport(
        mode=mode,
        per_emotion=per_emotion,
        supports=supports,
        weighted_f1=weighted,
        macro_f1=macro,
        micro=PRF(micro_p, micro_r, _f1(micro_p, micro_r)),
    )


def weighted_average(
    per_class_f1: Mapping[EmotionLabel, float], supports: Mapping[EmotionLabel, int]
) -> tuple[float, float]:
    """Support-weighted mean F1 and unweighted macro mean.

    Classes absent from ``supports`` (or with zero support) contribute
    nothing to the weighted average; the macro mean runs over all classes
    present in ``per_class_f1``.
    """
    total = sum(supports.values())
    if total <= 0:
        raise ConfigError("weighted_average requires a positive total support")
    if any(v < 0 for v in supports.values()):
        raise ConfigError("supports must be non-negative")
    weighted = sum(per_class_f1[e] * supports.get(e, 0) for e in per_class_f1) / total
    macro = sum(per_class_f1.values()) / len(per_class_f1)
    return weighted, macro


def classification_f1(
    pred_labels: Sequence[EmotionLabel], gold_labels: Sequence[EmotionLabel]
) -> dict:
    """One-vs-rest P/R/F1 over the 7 labels, plus macro and weighted means."""
    if len(pred_labels) != len(gold_labels):
        raise ConfigError(
            f"length mismatch: {len(pred_labels)} predictions vs {len(gold_labels)} gold"
        )
    per_class: dict[EmotionLabel, PRF] = {}
    supports: dict[EmotionLabel, int] = {}
    for label in ALL_LABELS:
        tp = sum(1 for p, g in zip(pred_labels, gold_labels) if p == g == label)
        n_pred = sum(1 for p in pred_labels if p == label)
        n_gold = sum(1 for g in gold_labels if g == label)
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_gold if n_gold else 0.0
        per_class[label] = PRF(precision, recall, _f1(precision, recall))
        supports[label] = n_gold
    f1s = {e: prf.f1 for e, prf in per_class.items()}
    weighted, macro = weighted_average(f1s, supports)
    return {
        "per_class": per_class,
        "supports": supports,
        "macro_f1": macro,
        "weighted_f1": weighted,
    }

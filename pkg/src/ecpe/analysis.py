"""Diagnostics: emotion confusion matrix, per-emotion cause scores on
correctly classified targets, and emotion-to-cause distance breakdown.

Distances are kept exact in JSON output; plots collapse d >= 6 into a
single "6+" bucket.  A "correct" prediction in the distance profile means
exact (cause index, target index, emotion) identity; spans are ignored
because causes are whole utterances at this level.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .labels import ALL_LABELS, EmotionLabel
from .metrics import MetricReport, score_pairs


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # 7x7, rows gold, columns predicted
    labels: tuple[EmotionLabel, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_normalized(self) -> np.ndarray:
        sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            rates = np.where(sums > 0, self.counts / sums, 0.0)
        return rates

    def to_dict(self) -> dict:
        return {
            "labels": [str(lbl) for lbl in self.labels],
            "counts": self.counts.tolist(),
            "row_normalized": self.row_normalized().tolist(),
        }


def confusion(
    pred_labels: Sequence[EmotionLabel], gold_labels: Sequence[EmotionLabel]
) -> ConfusionMatrix:
    if len(pred_labels) != len(gold_labels):
        raise ConfigError(
            f"length mismatch: {len(pred_labels)} predictions vs {len(gold_labels)} gold"
        )
    index = {lbl: i for i, lbl in enumerate(ALL_LABELS)}
    counts = np.zeros((len(ALL_LABELS), len(ALL_LABELS)), dtype=np.int64)
    for p, g in zip(pred_labels, gold_labels):
        counts[index[g], index[p]] += 1
    return ConfusionMatrix(counts=counts, labels=ALL_LABELS)


def _as_map(pairs) -> dict[str, list]:
    if isinstance(pairs, Mapping):
        return {str(k): list(v) for k, v in pairs.items()}
    return {"": list(pairs)}


def cause_scores_by_emotion(
    pred_pairs,
    gold_pairs,
    pred_labels: Mapping[str, Sequence[EmotionLabel]],
    gold_labels: Mapping[str, Sequence[EmotionLabel]],
) -> MetricReport:
    """Proportional pair scores restricted to correctly classified targets.

    Both pair lists are filtered to targets whose predicted label equals
    the gold label and is non-neutral, then scored per emotion.
    """
    pred_map = _as_map(pred_pairs)
    gold_map = _as_map(gold_pairs)

    def qualifying(cid: str, target_index: int) -> bool:
        pl = pred_labels[cid][target_index - 1]
        gl = gold_labels[cid][target_index - 1]
        return pl == gl and pl is not EmotionLabel.NEUTRAL

    filtered_pred = {
        cid: [p for p in plist if qualifying(cid, p.target_index)]
        for cid, plist in pred_map.items()
    }
    filtered_gold = {
        cid: [p for p in plist if qualifying(cid, p.target_index)]
        for cid, plist in gold_map.items()
    }
    return score_pairs(filtered_pred, filtered_gold, mode="proportional")


@dataclass
class DistanceProfile:
    #: distance d = target_index - cause_index -> counts; d < 0 is a future cause.
    gold_counts: dict[int, int]
    correct_counts: dict[int, int]

    def to_dict(self) -> dict:
        distances = sorted(set(self.gold_counts) | set(self.correct_counts))
        return {
            str(d): {
                "gold": self.gold_counts.get(d, 0),
                "correct": self.correct_counts.get(d, 0),
            }
            for d in distances
        }


def distance_profile(pred_pairs, gold_pairs) -> DistanceProfile:
    pred_map = _as_map(pred_pairs)
    gold_counts: dict[int, int] = {}
    correct_counts: dict[int, int] = {}
    pred_keys = {
        (cid, p.cause_index, p.target_index, p.emotion)
        for cid, plist in pred_map.items()
        for p in plist
    }
    for cid, plist in _as_map(gold_pairs).items():
        for g in plist:
            d = g.target_index - g.cause_index
            gold_counts[d] = gold_counts.get(d, 0) + 1
            if (cid, g.cause_index, g.target_index, g.emotion) in pred_keys:
                correct_counts[d] = correct_counts.get(d, 0) + 1
    return DistanceProfile(gold_counts=gold_counts, correct_counts=correct_counts)


# ---------------------------------------------------------------------------
# Rendering

def _write_json(path: Path, payload) -> None:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False), encoding="utf-8"
    )


def render_report(
    output_dir: str | Path,
    confusion_matrix: ConfusionMatrix | None = None,
    cause_scores: MetricReport | None = None,
    distances: DistanceProfile | None = None,
) -> list[Path]:
    """Write JSON tables, static plots, and a markdown summary; returns paths."""
    if confusion_matrix is None and cause_scores is None and distances is None:
        raise ConfigError("render_report needs at least one report")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    summary = ["# Analysis report", ""]

    if confusion_matrix is not None:
        path = out / "confusion_matrix.json"
        _write_json(path, confusion_matrix.to_dict())
        written.append(path)
        fig, ax = plt.subplots(figsize=(6, 5))
        rates = confusion_matrix.row_normalized()
        im = ax.imshow(rates, cmap="Blues", vmin=0, vmax=1)
        names = [str(lbl) for lbl in confusion_matrix.labels]
        ax.set_xticks(range(len(names)), names, rotation=45, ha="right")
        ax.set_yticks(range(len(names)), names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("gold")
        for r in range(len(names)):
            for c in range(len(names)):
                ax.text(c, r, str(confusion_matrix.counts[r, c]),
                        ha="center", va="center", fontsize=7)
        fig.colorbar(im, label="row rate")
        fig.tight_layout()
        img = out / "confusion_matrix.png"
        fig.savefig(img, dpi=150)
        plt.close(fig)
        written.append(img)
        summary += [
            "## Emotion confusion",
            f"Scored {confusion_matrix.total} utterances; "
            f"see `confusion_matrix.json` / `.png`.",
            "",
        ]

    if cause_scores is not None:
        path = out / "cause_scores_by_emotion.json"
        _write_json(path, cause_scores.to_dict())
        written.append(path)
        emotions = [str(e) for e in cause_scores.per_emotion]
        width = 0.25
        x = np.arange(len(emotions))
        fig, ax = plt.subplots(figsize=(7, 4))
        for offset, metric in zip((-width, 0, width), ("precision", "recall", "f1")):
            values = [getattr(prf, metric) for prf in cause_scores.per_emotion.values()]
            ax.bar(x + offset, values, width, label=metric)
        ax.set_xticks(x, emotions, rotation=30, ha="right")
        ax.set_ylim(0, 1)
        ax.set_title("Cause detection on correctly classified targets (proportional)")
        ax.legend()
        fig.tight_layout()
        img = out / "cause_scores_by_emotion.png"
        fig.savefig(img, dpi=150)
        plt.close(fig)
        written.append(img)
        summary += [
            "## Cause scores by emotion",
            f"Weighted F1 {cause_scores.weighted_f1:.3f}, "
            f"macro F1 {cause_scores.macro_f1:.3f}; precision, recall, and F1 "
            "are all plotted explicitly.",
            "",
        ]

    if distances is not None:
        path = out / "distance_profile.json"
        _write_json(path, distances.to_dict())
        written.append(path)
        # plots cap distance at 6+; negative distances are future causes
        capped_gold: dict[str, int] = {}
        capped_correct: dict[str, int] = {}
        for d, n in sorted(distances.gold_counts.items()):
            key = "6+" if d >= 6 else str(d)
            capped_gold[key] = capped_gold.get(key, 0) + n
            capped_correct[key] = capped_correct.get(key, 0) + distances.correct_counts.get(d, 0)
        keys = sorted(capped_gold, key=lambda k: 6 if k == "6+" else int(k))
        x = np.arange(len(keys))
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.bar(x - 0.2, [capped_gold[k] for k in keys], 0.4, label="gold")
        ax.bar(x + 0.2, [capped_correct.get(k, 0) for k in keys], 0.4, label="correct")
        ax.set_xticks(x, keys)
        ax.set_xlabel("distance (target index - cause index)")
        ax.set_ylabel("pairs")
        ax.set_title("Emotion-to-cause distance breakdown (counts)")
        ax.legend()
        fig.tight_layout()
        img = out / "distance_profile.png"
        fig.savefig(img, dpi=150)
        plt.close(fig)
        written.append(img)
        total_gold = sum(distances.gold_counts.values())
        total_correct = sum(distances.correct_counts.values())
        recall = total_correct / total_gold if total_gold else 0.0
        summary += [
            "## Distance breakdown",
            f"{total_gold} gold pairs, {total_correct} correctly predicted "
            f"(index-level recall {recall:.3f}); exact per-distance counts in "
            "`distance_profile.json`.",
            "",
        ]

    summary_path = out / "summary.md"
    summary_path.write_text("\n".join(summary), encoding="utf-8")
    written.append(summary_path)
    return written

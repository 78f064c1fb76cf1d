"""End-to-end orchestration of the two-stage pipeline.

Stages write their artifacts into subdirectories of the configured output
directory, atomically (temp file + rename) and with a ``provenance.json``
embedding the exact config and version string.  A lock file serializes
stages per output directory.  On stage failure, files created by the
failing invocation are removed.

Stage inference consumes stage-1 predicted emotions by default; pass
``gold_emotions=True`` (CLI ``--gold-emotions``) to ablate stage 2 with
gold labels instead.
"""

from __future__ import annotations

import json
import logging
import os
import subprocess
from pathlib import Path

from . import __version__
from .backends import ClassifierBackend, ResponseCache, classify_conversation
from .cause import CauseExtractor, whole_utterance_span
from .config import PipelineConfig
from .corpus import (
    Conversation,
    load_corpus,
    corpus_stats,
    corpus_to_canonical,
    split_corpus,
    validate_corpus,
)
from .embeddings import EmbeddingCache, HashingEmbedder
from .errors import ConfigError, DataError, EcpeError
from .finetune import finetune_records
from .labels import EmotionLabel
from .local_emotion import LocalEmotionClassifier
from .metrics import classification_f1, score_pairs
from .prompts import PromptTemplate
from .analysis import (
    cause_scores_by_emotion,
    confusion,
    distance_profile,
    render_report,
)

logger = logging.getLogger(__name__)

STAGES = (
    "prepare",
    "finetune-data",
    "train-local-emotion",
    "train-cause",
    "predict",
    "score",
    "analyze",
    "all",
)


def version_string() -> str:
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).parent,
        )
        if described.returncode == 0:
            return f"ecpe-{__version__}+{described.stdout.strip()}"
    except OSError:
        pass
    return f"ecpe-{__version__}"


class _StageWriter:
    """Atomic writes with rollback of this invocation's files on failure."""

    def __init__(self, directory: Path):
        self.directory = directory
        self.created: list[Path] = []

    def json(self, name: str, payload) -> Path:
        return self.text(name, json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False))

    def text(self, name: str, content: str) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / name
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(content, encoding="utf-8")
        tmp.replace(path)
        self.created.append(path)
        return path

    def reserve(self, name: str) -> Path:
        """Register a path written by other code (must be atomic itself)."""
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / name
        self.created.append(path)
        return path

    def rollback(self) -> None:
        for path in self.created:
            path.unlink(missing_ok=True)


def _provenance(cfg: PipelineConfig, stage: str) -> dict:
    return {"stage": stage, "version": version_string(), "config": cfg.to_dict()}


def _embedder(cfg: PipelineConfig):
    if cfg.embedder.kind == "hashing":
        return HashingEmbedder(dim=cfg.embedder.dim)
    from .embeddings import TransformerEmbedder

    return TransformerEmbedder(model_name=cfg.embedder.model_name)


def _embedding_cache(cfg: PipelineConfig) -> EmbeddingCache:
    return EmbeddingCache(Path(cfg.cache_dir) / "embeddings")


def _template(cfg: PipelineConfig) -> PromptTemplate:
    exemplars = tuple(
        (prev, target, EmotionLabel(label)) for prev, target, label in cfg.emotion.exemplars
    )
    if cfg.emotion.instruction is not None:
        return PromptTemplate(instruction=cfg.emotion.instruction, exemplars=exemplars)
    return PromptTemplate(exemplars=exemplars)


def _require(path: Path, producing_stage: str) -> Path:
    if not path.exists():
        raise DataError(
            f"missing prerequisite artifact {path}; run `ecpe {producing_stage}` first"
        )
    return path


def _load_split(out: Path, which: str) -> list[Conversation]:
    path = _require(out / "prepare" / f"corpus_{which}.json", "prepare")
    return load_corpus(path, format="canonical-json")


# ---------------------------------------------------------------------------
# Stages

def stage_prepare(cfg: PipelineConfig, out: Path) -> None:
    if not cfg.data.path:
        raise ConfigError("data.path is required for the prepare stage")
    corpus = load_corpus(cfg.data.path, format=cfg.data.format)
    report = validate_corpus(corpus)
    train, dev = split_corpus(corpus, cfg.split.dev_fraction, cfg.split.seed)
    writer = _StageWriter(out / "prepare")
    try:
        writer.json("corpus_train.json", corpus_to_canonical(train))
        writer.json("corpus_dev.json", corpus_to_canonical(dev))
        writer.json(
            "validation.json",
            [
                {"conversation_id": f.conversation_id, "kind": f.kind, "detail": f.detail}
                for f in report.findings
            ],
        )
        writer.json(
            "stats.json",
            {
                "full": corpus_stats(corpus).to_dict(),
                "train": corpus_stats(train).to_dict(),
                "dev": corpus_stats(dev).to_dict(),
            },
        )
        writer.json("provenance.json", _provenance(cfg, "prepare"))
    except Exception:
        writer.rollback()
        raise
    logger.info("prepared %d train / %d dev dialogs", len(train), len(dev))


def stage_finetune_data(cfg: PipelineConfig, out: Path) -> None:
    train = _load_split(out, "train")
    records = finetune_records(train, _template(cfg))
    writer = _StageWriter(out / "finetune")
    try:
        writer.text(
            "finetune.jsonl",
            "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records),
        )
        writer.json("provenance.json", _provenance(cfg, "finetune-data"))
    except Exception:
        writer.rollback()
        raise
    logger.info("wrote %d fine-tune records", len(records))


def stage_train_local_emotion(cfg: PipelineConfig, out: Path) -> None:
    train = _load_split(out, "train")
    dev = _load_split(out, "dev")
    cache = _embedding_cache(cfg)
    clf = LocalEmotionClassifier(
        embedder=_embedder(cfg),
        seed=cfg.emotion.local_seed,
        max_iter=cfg.emotion.local_max_iter,
        C=cfg.emotion.local_C,
    ).fit(train, cache)
    writer = _StageWriter(out / "models")
    try:
        clf.save(writer.reserve("emotion_local.pkl"))
        pred = [lbl for labels in clf.predict(dev, cache) for lbl in labels]
        gold = [u.gold_emotion for conv in dev for u in conv.utterances]
        evaluation = classification_f1(pred, gold)
        majority = classification_f1([EmotionLabel.NEUTRAL] * len(gold), gold)
        writer.json(
            "emotion_local_eval.json",
            {
                "dev_weighted_f1": evaluation["weighted_f1"],
                "dev_macro_f1": evaluation["macro_f1"],
                "per_class_f1": {str(k): v.f1 for k, v in evaluation["per_class"].items()},
                "always_neutral_weighted_f1": majority["weighted_f1"],
            },
        )
        writer.json("emotion_provenance.json", _provenance(cfg, "train-local-emotion"))
    except Exception:
        writer.rollback()
        raise


def stage_train_cause(cfg: PipelineConfig, out: Path) -> None:
    train = _load_split(out, "train")
    dev = _load_split(out, "dev")
    cache = _embedding_cache(cfg)
    c = cfg.cause
    model = CauseExtractor(
        embedder=_embedder(cfg),
        hidden_size=c.hidden_size,
        num_layers=c.num_layers,
        ff_hidden=c.ff_hidden,
        dropout=c.dropout,
        max_speakers=c.max_speakers,
        lr=c.lr,
        weight_decay=c.weight_decay,
        epochs=c.epochs,
        batch_size=c.batch_size,
        pos_weight=c.pos_weight,
        seed=c.seed,
    ).fit(train, dev=dev, cache=cache)
    writer = _StageWriter(out / "models")
    try:
        model.save(writer.reserve("cause_final.pt"), which="final")
        best = "best" if model.best_state_ is not None else "final"
        model.save(writer.reserve("cause_best.pt"), which=best)
        writer.json("cause_history.json", model.history_)
        writer.json("cause_provenance.json", _provenance(cfg, "train-cause"))
    except Exception:
        writer.rollback()
        raise


def _predict_emotions(
    cfg: PipelineConfig, out: Path, dev: list[Conversation], gold_emotions: bool
) -> list[list[EmotionLabel]]:
    if gold_emotions or cfg.emotion.source == "gold":
        for conv in dev:
            for u in conv.utterances:
                if u.gold_emotion is None:
                    raise DataError(
                        f"conversation {conv.id}, utterance {u.index}: gold emotion "
                        "requested but absent"
                    )
        return [[u.gold_emotion for u in conv.utterances] for conv in dev]
    if cfg.emotion.source == "local":
        clf = LocalEmotionClassifier.load(
            _require(out / "models" / "emotion_local.pkl", "train-local-emotion"),
            embedder=_embedder(cfg),
        )
        return clf.predict(dev, _embedding_cache(cfg))
    backend_cfg = cfg.emotion.backend
    backend = ClassifierBackend(
        kind=backend_cfg.kind,
        model=backend_cfg.model,
        endpoint=backend_cfg.endpoint,
        api_key_env=backend_cfg.api_key_env,
        temperature=backend_cfg.temperature,
        max_output_tokens=backend_cfg.max_output_tokens,
        max_concurrency=backend_cfg.max_concurrency,
        requests_per_second=backend_cfg.requests_per_second,
    )
    template = _template(cfg)
    cache = ResponseCache(Path(cfg.cache_dir) / "responses")
    return [
        [r.label for r in classify_conversation(conv, backend, template, cache)]
        for conv in dev
    ]


def stage_predict(cfg: PipelineConfig, out: Path, gold_emotions: bool = False) -> None:
    dev = _load_split(out, "dev")
    emotions = _predict_emotions(cfg, out, dev, gold_emotions)
    checkpoint = _require(out / "models" / f"cause_{cfg.cause.checkpoint}.pt", "train-cause")
    model = CauseExtractor.load(checkpoint, embedder=_embedder(cfg))
    pairs_per_conv = model.predict(dev, emotions, _embedding_cache(cfg))
    submission = []
    for conv, labels, pairs in zip(dev, emotions, pairs_per_conv):
        submission.append(
            {
                "conversation_ID": conv.id,
                "conversation": [
                    {
                        "utterance_ID": u.index,
                        "speaker": u.speaker,
                        "text": u.text,
                        "emotion": labels[u.index - 1].value,
                    }
                    for u in conv.utterances
                ],
                "emotion-cause_pairs": [
                    [
                        f"{p.target_index}_{p.emotion.value}",
                        f"{p.cause_index}_{conv.utterance(p.cause_index).text}",
                    ]
                    for p in pairs
                ],
            }
        )
    writer = _StageWriter(out / "predict")
    try:
        writer.text(
            "submission.json", json.dumps(submission, indent=2, ensure_ascii=False)
        )
        writer.json("provenance.json", _provenance(cfg, "predict"))
    except Exception:
        writer.rollback()
        raise
    logger.info(
        "predicted %d pairs over %d dialogs",
        sum(len(p) for p in pairs_per_conv),
        len(dev),
    )


def _load_submission(out: Path) -> list[Conversation]:
    return load_corpus(_require(out / "predict" / "submission.json", "predict"),
                       format="task-json")


def stage_score(cfg: PipelineConfig, out: Path) -> None:
    dev = _load_split(out, "dev")
    predicted = _load_submission(out)
    conv_map = {conv.id: conv for conv in dev}
    pred_map = {conv.id: list(conv.gold_pairs) for conv in predicted}
    gold_map = {conv.id: list(conv.gold_pairs) for conv in dev}
    writer = _StageWriter(out / "score")
    try:
        lines = []
        for mode in ("strict", "proportional"):
            report = score_pairs(pred_map, gold_map, mode=mode, conversations=conv_map)
            writer.json(f"metrics_{mode}.json", report.to_dict())
            lines.append(f"[{mode}]")
            lines.append(f"{'emotion':<10} {'P':>7} {'R':>7} {'F1':>7} {'support':>8}")
            for emotion, prf in report.per_emotion.items():
                lines.append(
                    f"{str(emotion):<10} {prf.precision:>7.4f} {prf.recall:>7.4f} "
                    f"{prf.f1:>7.4f} {report.supports[emotion]:>8}"
                )
            lines.append(f"weighted F1 = {report.weighted_f1:.4f}  macro F1 = {report.macro_f1:.4f}")
            lines.append("")
        writer.text("metrics.txt", "\n".join(lines))
        writer.json("provenance.json", _provenance(cfg, "score"))
    except Exception:
        writer.rollback()
        raise


def stage_analyze(cfg: PipelineConfig, out: Path) -> None:
    dev = _load_split(out, "dev")
    predicted = _load_submission(out)
    pred_by_id = {conv.id: conv for conv in predicted}
    missing = [conv.id for conv in dev if conv.id not in pred_by_id]
    if missing:
        raise DataError(f"submission lacks conversations {missing[:5]}; rerun predict")
    gold_labels = {conv.id: [u.gold_emotion for u in conv.utterances] for conv in dev}
    pred_labels = {
        conv.id: [u.gold_emotion for u in pred_by_id[conv.id].utterances] for conv in dev
    }
    flat_gold = [lbl for conv in dev for lbl in gold_labels[conv.id]]
    flat_pred = [lbl for conv in dev for lbl in pred_labels[conv.id]]
    pred_map = {conv.id: list(pred_by_id[conv.id].gold_pairs) for conv in dev}
    gold_map = {conv.id: list(conv.gold_pairs) for conv in dev}
    cm = confusion(flat_pred, flat_gold)
    scores = cause_scores_by_emotion(pred_map, gold_map, pred_labels, gold_labels)
    profile = distance_profile(pred_map, gold_map)
    render_report(
        out / "analysis",
        confusion_matrix=cm,
        cause_scores=scores,
        distances=profile,
    )
    writer = _StageWriter(out / "analysis")
    writer.json("provenance.json", _provenance(cfg, "analyze"))


# ---------------------------------------------------------------------------
# Driver

_STAGE_FUNCS = {
    "prepare": stage_prepare,
    "finetune-data": stage_finetune_data,
    "train-local-emotion": stage_train_local_emotion,
    "train-cause": stage_train_cause,
    "score": stage_score,
    "analyze": stage_analyze,
}

_ALL_ORDER = (
    "prepare",
    "finetune-data",
    "train-local-emotion",
    "train-cause",
    "predict",
    "score",
    "analyze",
)


def run(
    stage: str,
    cfg: PipelineConfig,
    gold_emotions: bool = False,
    seed: int | None = None,
    out: str | Path | None = None,
) -> None:
    """Run one stage (or ``all``).  Raises EcpeError subclasses on failure."""
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    cfg.validate()
    if seed is not None:
        cfg.split.seed = seed
        cfg.cause.seed = seed
        cfg.emotion.local_seed = seed
    out_dir = Path(out) if out is not None else Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise EcpeError(
            f"output directory {out_dir} is locked by another run "
            f"(remove {lock} if stale)"
        ) from None
    os.close(fd)
    try:
        stages = _ALL_ORDER if stage == "all" else (stage,)
        for name in stages:
            logger.info("running stage %s", name)
            if name == "predict":
                stage_predict(cfg, out_dir, gold_emotions=gold_emotions)
            else:
                _STAGE_FUNCS[name](cfg, out_dir)
    finally:
        lock.unlink(missing_ok=True)

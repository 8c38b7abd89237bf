"""Deterministic training loop (SGD with momentum), evaluation over both
resampling strategies, and the confusion-matrix metric suite.

Training consumes per-subject cue sequences resampled head-first to the
model's sequence length and z-scored with statistics fitted on the
training split only.  The loop shuffles with a seeded generator, logs one
CSV row per epoch and writes a checkpoint whenever the validation F1
improves; given identical seed, config and data, two runs produce
bit-identical logs and checkpoints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import (
    DataError,
    FeatureSequence,
    NormalizationStats,
    Subject,
    apply_normalization,
    fit_normalization,
    resample_head_first,
    split_average_pieces,
)
from .model import Model, save_checkpoint
from .tensor import Tensor, log, register_op, select_class, smul, tensor_sum, zero_grads

__all__ = [
    "TrainConfig",
    "ConfusionCounts",
    "Metrics",
    "MomentumState",
    "cross_entropy",
    "sgd_step",
    "train",
    "evaluate",
    "compute_metrics",
    "confusion_from_predictions",
    "fit_cue_stats",
    "prepare_subject",
    "score_subjects",
    "combine_piece_scores",
    "stats_to_arrays",
    "stats_from_arrays",
    "write_metrics_report",
    "DECISION_THRESHOLD",
]

DECISION_THRESHOLD = 0.5
HEAD_FIRST = "head-first"
AVERAGE = "average"


@dataclass
class TrainConfig:
    learning_rate: float = 2e-5
    momentum: float = 0.9
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        # zero is allowed as the documented null update
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class Metrics:
    accuracy: float
    recall: float
    precision: float
    f1: float


def compute_metrics(c: ConfusionCounts) -> Metrics:
    """Accuracy, recall, precision and F1 from raw counts.

    Recall and precision are defined as 0 when their denominator is 0, and
    F1 as 0 when precision + recall is 0.
    """
    if c.total == 0:
        raise ValueError("cannot compute metrics on empty counts")
    accuracy = (c.tp + c.tn) / c.total
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn > 0 else 0.0
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return Metrics(accuracy=accuracy, recall=recall, precision=precision, f1=f1)


def confusion_from_predictions(labels: Sequence[int], preds: Sequence[int]) -> ConfusionCounts:
    c = ConfusionCounts()
    for label, pred in zip(labels, preds):
        if label == 1:
            if pred == 1:
                c.tp += 1
            else:
                c.fn += 1
        else:
            if pred == 1:
                c.fp += 1
            else:
                c.tn += 1
    return c


# ---------------------------------------------------------------------------
# loss


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Negative log-likelihood of the true class: -ln(probs[label]).

    Accepts a single probability pair (2,) with an integer label or a
    batch (B, 2) with a label vector, returning the batch mean.  When
    ``probs`` is the direct output of the softmax layer, the loss is
    computed from the pre-softmax logits in log-sum-exp form, so extreme
    logits cannot produce log(0); the gradient reaching the logits is then
    exactly probs - one_hot(label), scaled by 1/B.
    """
    if probs._op == "softmax":
        logits = probs._parents[0]
        z = logits.data
        batched = z.ndim == 2
        z2 = z if batched else z[None]
        lab = np.atleast_1d(np.asarray(labels, dtype=np.intp))
        if lab.shape[0] != z2.shape[0]:
            raise ValueError(f"labels shape {lab.shape} does not match batch of {z2.shape[0]}")
        m = z2.max(axis=-1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(z2 - m).sum(axis=-1))
        losses = lse - z2[np.arange(lab.shape[0]), lab]
        p = probs.data if batched else probs.data[None]

        def backward(g: np.ndarray):
            d = p.copy()
            d[np.arange(lab.shape[0]), lab] -= 1.0
            d *= float(g) / lab.shape[0]
            return (d if batched else d[0],)

        return register_op(np.asarray(losses.mean()), (logits,), backward, "softmax_ce")

    picked = select_class(probs, labels)
    if probs.data.ndim == 1:
        return smul(log(picked), -1.0)
    return smul(tensor_sum(log(picked)), -1.0 / probs.data.shape[0])


# ---------------------------------------------------------------------------
# optimizer


class MomentumState:
    """Per-parameter velocity tensors mirroring the parameter shapes."""

    def __init__(self, params: Sequence[tuple[str, Tensor]]):
        self.velocities = {name: np.zeros_like(t.data) for name, t in params}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.velocities[name]


def sgd_step(params: Sequence[tuple[str, Tensor]], state: MomentumState, cfg: TrainConfig) -> None:
    """v <- momentum * v + g;  w <- w - lr * v, per parameter."""
    for name, t in params:
        if t.grad is None:
            raise ValueError(f"parameter '{name}' has no gradient; run backward first")
        v = state.velocities[name]
        v *= cfg.momentum
        v += t.grad
        t.data -= cfg.learning_rate * v


# ---------------------------------------------------------------------------
# input preparation


def fit_cue_stats(
    subjects: Sequence[Subject], cues: Sequence[str], target_length: int
) -> dict[str, NormalizationStats]:
    """Per-cue z-score statistics from the (resampled) training split."""
    stats = {}
    for cue in cues:
        seqs = [resample_head_first(s.sequences[cue], target_length) for s in subjects]
        stats[cue] = fit_normalization(seqs)
    return stats


def prepare_subject(
    subject: Subject,
    cues: Sequence[str],
    stats: Optional[dict[str, NormalizationStats]],
    target_length: int,
) -> dict[str, np.ndarray]:
    out = {}
    for cue in cues:
        if cue not in subject.sequences:
            raise DataError(f"subject '{subject.subject_id}' has no sequence for cue '{cue}'")
        seq = resample_head_first(subject.sequences[cue], target_length)
        if stats is not None:
            seq = apply_normalization(seq, stats[cue])
        out[cue] = seq.frames
    return out


def _normalize_pieces(
    seq: FeatureSequence, stats: Optional[dict[str, NormalizationStats]], piece_length: int
) -> list[np.ndarray]:
    pieces = split_average_pieces(seq, piece_length)
    if stats is not None:
        pieces = [apply_normalization(p, stats[seq.cue]) for p in pieces]
    return [p.frames for p in pieces]


def stats_to_arrays(stats: dict[str, NormalizationStats]) -> dict[str, np.ndarray]:
    out = {}
    for cue, s in stats.items():
        out[f"norm.{cue}.mean"] = s.mean
        out[f"norm.{cue}.std"] = s.std
    return out


def stats_from_arrays(arrays: dict[str, np.ndarray]) -> dict[str, NormalizationStats]:
    cues = {name.split(".")[1] for name in arrays if name.startswith("norm.")}
    return {
        cue: NormalizationStats(mean=arrays[f"norm.{cue}.mean"], std=arrays[f"norm.{cue}.std"])
        for cue in cues
    }


# ---------------------------------------------------------------------------
# scoring and evaluation


def combine_piece_scores(scores: Sequence[float]) -> float:
    """Average strategy: mean of the per-piece positive-class probabilities."""
    return float(np.mean(scores))


def predict(score: float) -> int:
    return 1 if score >= DECISION_THRESHOLD else 0


def score_subjects(
    model: Model,
    subjects: Sequence[Subject],
    strategy: str = HEAD_FIRST,
    stats: Optional[dict[str, NormalizationStats]] = None,
    batch_size: int = 16,
) -> np.ndarray:
    """Positive-class probability per subject under the given strategy."""
    cues = model.config.cues
    target = model.config.sequence_length
    scores = np.zeros(len(subjects))
    if strategy == HEAD_FIRST:
        for start in range(0, len(subjects), batch_size):
            chunk = subjects[start : start + batch_size]
            inputs = {
                cue: np.stack([prepare_subject(s, [cue], stats, target)[cue] for s in chunk])
                for cue in cues
            }
            probs = model.forward(inputs, training=False)
            scores[start : start + len(chunk)] = probs.data[:, 1]
    elif strategy == AVERAGE:
        for i, subject in enumerate(subjects):
            per_cue = {
                cue: _normalize_pieces(subject.sequences[cue], stats, target) for cue in cues
            }
            counts = {len(v) for v in per_cue.values()}
            if len(counts) != 1:
                raise DataError(
                    f"subject '{subject.subject_id}': cue lengths disagree, piece counts {counts}"
                )
            inputs = {cue: np.stack(pieces) for cue, pieces in per_cue.items()}
            probs = model.forward(inputs, training=False)
            scores[i] = combine_piece_scores(probs.data[:, 1])
    else:
        raise ValueError(f"unknown strategy '{strategy}'; use '{HEAD_FIRST}' or '{AVERAGE}'")
    return scores


def evaluate(
    model: Model,
    subjects: Sequence[Subject],
    strategy: str = HEAD_FIRST,
    stats: Optional[dict[str, NormalizationStats]] = None,
) -> tuple[ConfusionCounts, Metrics]:
    """Score every subject, threshold at 0.5 and summarize the confusion counts."""
    if not subjects:
        raise DataError("cannot evaluate an empty subject list")
    scores = score_subjects(model, subjects, strategy, stats)
    labels = [s.label for s in subjects]
    preds = [predict(x) for x in scores]
    counts = confusion_from_predictions(labels, preds)
    return counts, compute_metrics(counts)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    train_acc: float
    val_acc: float
    val_f1: float


def train(
    model: Model,
    splits: dict[str, list[Subject]],
    cfg: TrainConfig,
    out_dir=None,
    eval_strategy: str = HEAD_FIRST,
) -> tuple[list[EpochLog], dict[str, NormalizationStats]]:
    """Seeded mini-batch SGD; returns the per-epoch log and the fitted stats.

    When ``out_dir`` is given, writes ``training_log.csv`` and
    ``checkpoint.bin`` (at the best validation F1; at the final epoch when
    there is no validation split).
    """
    train_subjects = splits.get("train", [])
    val_subjects = splits.get("validation", [])
    if not train_subjects:
        raise DataError("training split is empty")
    cues = model.config.cues
    target = model.config.sequence_length
    stats = fit_cue_stats(train_subjects, cues, target)
    prepared = []
    for subject in train_subjects:
        try:
            prepared.append(prepare_subject(subject, cues, stats, target))
        except (ValueError, DataError) as exc:
            raise DataError(f"subject '{subject.subject_id}': {exc}") from exc
    labels = np.array([s.label for s in train_subjects], dtype=np.intp)

    params = model.parameters()
    tensors = [t for _, t in params]
    state = MomentumState(params)
    rng = np.random.default_rng(cfg.seed)
    n = len(train_subjects)

    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt_path = out_dir / "checkpoint.bin" if out_dir else None
    best_f1 = -1.0
    wrote_checkpoint = False
    logs: list[EpochLog] = []

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            inputs = {cue: np.stack([prepared[i][cue] for i in batch]) for cue in cues}
            batch_labels = labels[batch]
            zero_grads(tensors)
            try:
                probs = model.forward(inputs, training=True)
            except ValueError as exc:
                ids = [train_subjects[i].subject_id for i in batch]
                raise DataError(f"forward failed for subjects {ids}: {exc}") from exc
            loss = cross_entropy(probs, batch_labels)
            loss.backward()
            sgd_step(params, state, cfg)
            loss_sum += loss.item() * len(batch)
            preds = (probs.data[:, 1] >= DECISION_THRESHOLD).astype(np.intp)
            correct += int((preds == batch_labels).sum())

        val_acc = 0.0
        val_f1 = 0.0
        if val_subjects:
            _, metrics = evaluate(model, val_subjects, eval_strategy, stats)
            val_acc, val_f1 = metrics.accuracy, metrics.f1
        entry = EpochLog(
            epoch=epoch,
            mean_loss=loss_sum / n,
            train_acc=correct / n,
            val_acc=val_acc,
            val_f1=val_f1,
        )
        logs.append(entry)
        if ckpt_path is not None and val_subjects and val_f1 > best_f1:
            best_f1 = val_f1
            save_checkpoint(ckpt_path, model, extra_arrays=stats_to_arrays(stats))
            wrote_checkpoint = True

    if ckpt_path is not None and not wrote_checkpoint:
        save_checkpoint(ckpt_path, model, extra_arrays=stats_to_arrays(stats))
    if out_dir is not None:
        write_training_log(out_dir / "training_log.csv", logs)
    return logs, stats


def write_training_log(path, logs: Sequence[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "train_acc", "val_acc", "val_f1"])
        for entry in logs:
            writer.writerow(
                [
                    entry.epoch,
                    repr(entry.mean_loss),
                    repr(entry.train_acc),
                    repr(entry.val_acc),
                    repr(entry.val_f1),
                ]
            )


def write_metrics_report(path, rows: Sequence[dict]) -> None:
    """CSV with one row per (strategy, split): the four metrics plus raw counts."""
    fields = ["strategy", "split", "accuracy", "recall", "precision", "f1", "tp", "tn", "fp", "fn"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})

"""Data pipeline: visual-cue CSV ingestion, resampling, normalization and
synthetic dataset generation.

On-disk layout of a dataset::

    <root>/manifest.csv           subject_id,label,split rows
    <root>/dataset_meta.json      free-form metadata (generator settings etc.)
    <root>/cue_schema.json        feature-column names per cue
    <root>/<subject_id>/<cue>.csv one file per subject and cue

Cue CSVs carry the metadata columns ``frame, timestamp, confidence,
success`` followed by the cue's feature columns as declared in the
schema.  Column names vary across feature-extractor versions, so the
mapping lives in the schema file rather than in code; the packaged
default follows the common extractor layout (136 landmark coordinates,
6 pose dimensions, 12 gaze entries, 20 action units).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "CUE_NAMES",
    "METADATA_COLUMNS",
    "DataError",
    "FeatureSequence",
    "Subject",
    "NormalizationStats",
    "SyntheticSpec",
    "default_schema",
    "load_schema",
    "cue_dim",
    "parse_cue_csv",
    "write_cue_csv",
    "resample_head_first",
    "split_average_pieces",
    "fit_normalization",
    "apply_normalization",
    "generate_synthetic_dataset",
    "assign_splits",
    "write_dataset",
    "load_dataset",
    "read_manifest",
]

CUE_NAMES = ("aus", "gaze", "landmarks2d", "pose")
METADATA_COLUMNS = ("frame", "timestamp", "confidence", "success")
DEFAULT_TARGET_LENGTH = 5000


class DataError(ValueError):
    """Raised for malformed input files or inconsistent dataset contents."""


def default_schema() -> dict[str, list[str]]:
    """The packaged cue -> feature-column mapping."""
    with resources.files("tdcn").joinpath("cue_schema.json").open("r") as fh:
        return json.load(fh)


def load_schema(path) -> dict[str, list[str]]:
    with open(path) as fh:
        schema = json.load(fh)
    for cue, cols in schema.items():
        if not isinstance(cols, list) or not cols:
            raise DataError(f"schema entry for cue '{cue}' must be a non-empty column list")
    return schema


def cue_dim(cue: str, schema: Optional[dict[str, list[str]]] = None) -> int:
    schema = schema or default_schema()
    if cue not in schema:
        raise DataError(f"unknown cue '{cue}'; schema defines {sorted(schema)}")
    return len(schema[cue])


@dataclass
class FeatureSequence:
    """One subject's time series for one visual cue: frames (T, D)."""

    subject_id: str
    cue: str
    frames: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise DataError(f"frames must be 2-D (time, features), got shape {self.frames.shape}")
        if self.label is not None and self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label}")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class Subject:
    """All cue sequences of one subject, sharing id and label."""

    subject_id: str
    label: int
    sequences: dict[str, FeatureSequence] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# CSV parsing and writing


def parse_cue_csv(path, cue: str, schema: Optional[dict[str, list[str]]] = None) -> FeatureSequence:
    """Read one cue CSV; metadata columns are skipped, feature columns kept in
    schema order.  The subject id is taken from the parent directory name."""
    schema = schema or default_schema()
    columns = schema.get(cue)
    if columns is None:
        raise DataError(f"unknown cue '{cue}'; schema defines {sorted(schema)}")
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        positions = {name.strip(): i for i, name in enumerate(header)}
        missing = [c for c in columns if c not in positions]
        if missing:
            raise DataError(
                f"{path}: missing feature columns {missing}; expected columns {columns}"
            )
        take = [positions[c] for c in columns]
        rows: list[list[float]] = []
        for row_index, row in enumerate(reader):
            if not row:
                continue
            try:
                rows.append([float(row[i]) for i in take])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}: malformed number in data row {row_index}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no frames")
    return FeatureSequence(subject_id=path.parent.name, cue=cue, frames=np.array(rows))


def write_cue_csv(path, seq: FeatureSequence, schema: Optional[dict[str, list[str]]] = None) -> None:
    """Write a cue CSV; float values use repr so a re-parse is lossless."""
    schema = schema or default_schema()
    columns = schema.get(seq.cue)
    if columns is None or len(columns) != seq.dim:
        raise DataError(
            f"schema for cue '{seq.cue}' has {None if columns is None else len(columns)} columns, "
            f"sequence has {seq.dim}"
        )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(METADATA_COLUMNS) + list(columns))
        for t in range(seq.length):
            meta = [t, repr(t / 30.0), 1, 1]
            writer.writerow(meta + [repr(float(v)) for v in seq.frames[t]])


# ---------------------------------------------------------------------------
# resampling


def resample_head_first(seq: FeatureSequence, target_length: int = DEFAULT_TARGET_LENGTH) -> FeatureSequence:
    """Keep the first ``target_length`` frames; zero-pad short sequences at the tail."""
    frames = seq.frames
    if frames.shape[0] >= target_length:
        frames = frames[:target_length].copy()
    else:
        pad = np.zeros((target_length - frames.shape[0], frames.shape[1]))
        frames = np.concatenate([frames, pad], axis=0)
    return replace(seq, frames=frames)


def split_average_pieces(seq: FeatureSequence, piece_length: int = DEFAULT_TARGET_LENGTH) -> list[FeatureSequence]:
    """Cut into consecutive fixed-length pieces; the final partial piece is
    zero-padded.  Every piece inherits the subject id and label."""
    pieces = []
    for start in range(0, seq.length, piece_length):
        chunk = seq.frames[start : start + piece_length]
        if chunk.shape[0] < piece_length:
            pad = np.zeros((piece_length - chunk.shape[0], seq.dim))
            chunk = np.concatenate([chunk, pad], axis=0)
        else:
            chunk = chunk.copy()
        pieces.append(replace(seq, frames=chunk))
    return pieces


# ---------------------------------------------------------------------------
# normalization


@dataclass
class NormalizationStats:
    """Per-feature mean and standard deviation, fitted on the training split.

    Zero-variance features get std 1 so they normalize to 0.  When the
    fitted sequences contain padding rows, those rows are part of the
    statistics; that is the documented behavior, not an accident.
    """

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if np.any(self.std <= 0):
            raise DataError("normalization std entries must be positive")


def fit_normalization(train_seqs: Sequence[FeatureSequence]) -> NormalizationStats:
    if not train_seqs:
        raise DataError("cannot fit normalization on an empty training set")
    stacked = np.concatenate([s.frames for s in train_seqs], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std == 0] = 1.0
    return NormalizationStats(mean=mean, std=std)


def apply_normalization(seq: FeatureSequence, stats: NormalizationStats) -> FeatureSequence:
    if stats.mean.shape[0] != seq.dim:
        raise DataError(
            f"stats have {stats.mean.shape[0]} features, sequence '{seq.cue}' has {seq.dim}"
        )
    return replace(seq, frames=(seq.frames - stats.mean) / stats.std)


# ---------------------------------------------------------------------------
# synthetic data

SPLIT_SIGNAL_MODE = "split-signal"
STANDARD_MODE = "standard"


@dataclass
class SyntheticSpec:
    """Settings for the class-conditional synthetic generator.

    Class 1 carries a slow sinusoidal modulation (random phase per subject,
    period much longer than a convolution kernel span) on a leading block
    of channels in each cue, on top of white noise; class 0 is noise only.

    In split-signal mode each class-1 subject carries the marker in exactly
    one of the first two cues, alternating, while class-0 subjects carry
    none.  No single cue sees the evidence for all class-1 subjects (half
    of them look clean in that cue), so only a fused model can reach full
    recall.

    ``signal_span`` restricts the modulated frames to [start, end); frames
    outside the span are identical in distribution for both classes.
    """

    subjects_per_class: int
    sequence_length: int
    cue_dims: dict[str, int]
    seed: int = 0
    amplitude: float = 1.5
    period: float = 500.0
    noise_std: float = 1.0
    informative_fraction: float = 0.5
    mode: str = STANDARD_MODE
    signal_span: Optional[tuple[int, int]] = None

    def __post_init__(self):
        if self.subjects_per_class < 1:
            raise DataError("subjects_per_class must be >= 1")
        if self.sequence_length < 1:
            raise DataError("sequence_length must be >= 1")
        if self.mode not in (STANDARD_MODE, SPLIT_SIGNAL_MODE):
            raise DataError(f"mode must be '{STANDARD_MODE}' or '{SPLIT_SIGNAL_MODE}'")
        if self.mode == SPLIT_SIGNAL_MODE and len(self.cue_dims) < 2:
            raise DataError("split-signal mode needs at least two cues")
        if not self.cue_dims:
            raise DataError("cue_dims must name at least one cue")


def _informative_channels(dim: int, fraction: float) -> np.ndarray:
    count = max(1, int(round(dim * fraction)))
    return np.arange(min(count, dim))


def generate_synthetic_dataset(spec: SyntheticSpec) -> list[Subject]:
    """Deterministic labeled subjects, one FeatureSequence per cue each."""
    rng = np.random.default_rng(spec.seed)
    cues = sorted(spec.cue_dims)
    span = spec.signal_span or (0, spec.sequence_length)
    t = np.arange(spec.sequence_length, dtype=np.float64)
    window = (t >= span[0]) & (t < span[1])

    subjects: list[Subject] = []
    total = 2 * spec.subjects_per_class
    labels = [i % 2 for i in range(total)]
    positives = 0
    for index, label in enumerate(labels):
        sid = f"s{index:04d}"
        if spec.mode == SPLIT_SIGNAL_MODE:
            # class-1 evidence alternates between the two leading cues
            if label == 1:
                marked = {cues[positives % 2]}
                positives += 1
            else:
                marked = set()
        else:
            marked = set(cues) if label == 1 else set()
        subject = Subject(subject_id=sid, label=label)
        for cue in cues:
            dim = spec.cue_dims[cue]
            frames = rng.normal(0.0, spec.noise_std, size=(spec.sequence_length, dim))
            if cue in marked and spec.amplitude != 0.0:
                phase = rng.uniform(0.0, 2.0 * np.pi)
                wave = spec.amplitude * np.sin(2.0 * np.pi * t / spec.period + phase) * window
                channels = _informative_channels(dim, spec.informative_fraction)
                frames[:, channels] += wave[:, None]
            subject.sequences[cue] = FeatureSequence(
                subject_id=sid, cue=cue, frames=frames, label=label
            )
        subjects.append(subject)
    return subjects


def assign_splits(
    subjects: Sequence[Subject],
    seed: int = 0,
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
) -> dict[str, str]:
    """Class-stratified train/validation/test assignment."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions {fractions} must sum to 1")
    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}
    for label in (0, 1):
        ids = [s.subject_id for s in subjects if s.label == label]
        rng.shuffle(ids)
        n = len(ids)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        for i, sid in enumerate(ids):
            if i < n_train:
                assignment[sid] = "train"
            elif i < n_train + n_val:
                assignment[sid] = "validation"
            else:
                assignment[sid] = "test"
    return assignment


# ---------------------------------------------------------------------------
# dataset directories


def _synthetic_schema(cue_dims: dict[str, int]) -> dict[str, list[str]]:
    """Column names for generated cues; reuses the default schema when the
    dimension matches, otherwise emits generic positional names."""
    base = default_schema()
    schema = {}
    for cue, dim in sorted(cue_dims.items()):
        if cue in base and len(base[cue]) == dim:
            schema[cue] = base[cue]
        else:
            schema[cue] = [f"{cue}_{i:03d}" for i in range(dim)]
    return schema


def write_dataset(
    root,
    subjects: Sequence[Subject],
    splits: dict[str, str],
    schema: Optional[dict[str, list[str]]] = None,
    meta: Optional[dict] = None,
) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if schema is None:
        dims = {cue: seq.dim for s in subjects for cue, seq in s.sequences.items()}
        schema = _synthetic_schema(dims)
    with open(root / "cue_schema.json", "w") as fh:
        json.dump(schema, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(root / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "label", "split"])
        for subject in subjects:
            writer.writerow([subject.subject_id, subject.label, splits[subject.subject_id]])
    with open(root / "dataset_meta.json", "w") as fh:
        json.dump(meta or {}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for subject in subjects:
        for cue, seq in subject.sequences.items():
            write_cue_csv(root / subject.subject_id / f"{cue}.csv", seq, schema)


def read_manifest(path) -> list[tuple[str, int, str]]:
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"subject_id", "label", "split"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise DataError(f"{path}: manifest must have columns {sorted(required)}")
        for row in reader:
            label = int(row["label"])
            if label not in (0, 1):
                raise DataError(f"{path}: label must be 0 or 1, got {row['label']}")
            split = row["split"]
            if split not in ("train", "validation", "test"):
                raise DataError(f"{path}: unknown split '{split}'")
            entries.append((row["subject_id"], label, split))
    return entries


def load_dataset(
    root,
    cues: Sequence[str],
    schema: Optional[dict[str, list[str]]] = None,
) -> dict[str, list[Subject]]:
    """Read manifest plus the selected cue CSVs into per-split subject lists."""
    root = Path(root)
    if schema is None:
        schema_path = root / "cue_schema.json"
        schema = load_schema(schema_path) if schema_path.exists() else default_schema()
    splits: dict[str, list[Subject]] = {"train": [], "validation": [], "test": []}
    for sid, label, split in read_manifest(root / "manifest.csv"):
        subject = Subject(subject_id=sid, label=label)
        for cue in cues:
            seq = parse_cue_csv(root / sid / f"{cue}.csv", cue, schema)
            seq.label = label
            subject.sequences[cue] = seq
        splits[split].append(subject)
    return splits

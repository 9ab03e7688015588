"""Corpus data model and the on-disk interchange formats.

Everything the pipeline stages exchange goes through line-oriented text
files: recording manifests are CSV with a small JSON sidecar, embeddings
are JSON Lines, trial lists and scored trial lists are CSV. All files are
UTF-8 with LF line endings, and floats are written with full round-trip
precision so that write/read cycles are lossless.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

SAME_ORIGIN = "same-origin"
DIFFERENT_ORIGIN = "different-origin"
TRIAL_LABELS = (SAME_ORIGIN, DIFFERENT_ORIGIN)

MANIFEST_ROLES = ("embed-train", "calibration", "evaluation")
MANIFEST_FIELDS = ("recording_id", "speaker_id", "session", "task",
                   "path", "sample_rate_hz")
TRIAL_FIELDS = ("known_ref", "unknown_ref", "label")
SCORE_FIELDS = ("known_ref", "unknown_ref", "label", "score")

VALID_SESSIONS = (1, 2, 3)
VALID_TASKS = (1, 2, 3)

# Enrollment rows in embeddings.jsonl use this sample_id prefix and task 0
# ("not a single task"); the unprefixed speaker id is accepted as a trial
# reference too.
ENROLL_PREFIX = "enroll:"
ENROLL_TASK = 0


@dataclass(frozen=True)
class RecordingMeta:
    """One row of a recording manifest.

    ``duration_s`` is only present in chunk-level manifests written by the
    preparation stage; raw-recording manifests leave it as None.
    """

    recording_id: str
    speaker_id: str
    session: int
    task: int
    path: str
    sample_rate_hz: int
    duration_s: float | None = None


@dataclass
class Manifest:
    dataset_name: str
    role: str
    recordings: list[RecordingMeta] = field(default_factory=list)

    def speakers(self) -> set[str]:
        return {r.speaker_id for r in self.recordings}

    def by_id(self) -> dict[str, RecordingMeta]:
        return {r.recording_id: r for r in self.recordings}


@dataclass
class EmbeddingRecord:
    sample_id: str
    speaker_id: str
    session: int
    task: int
    duration_s: float
    vector: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


@dataclass(frozen=True)
class Trial:
    known_ref: str
    unknown_ref: str
    label: str


@dataclass(frozen=True)
class ScoredTrial:
    known_ref: str
    unknown_ref: str
    label: str
    score: float


def label_trial(known_speaker: str, unknown_speaker: str) -> str:
    """Return the trial label for a pair of speaker identities.

    Identity comparison is exact and case-sensitive.
    """
    if not known_speaker or not unknown_speaker:
        raise ValueError("speaker ids must be non-empty")
    return SAME_ORIGIN if known_speaker == unknown_speaker else DIFFERENT_ORIGIN


def is_enroll_ref(ref: str) -> bool:
    return ref.startswith(ENROLL_PREFIX)


def enroll_ref(speaker_id: str) -> str:
    return ENROLL_PREFIX + speaker_id


# ---------------------------------------------------------------------------
# manifest.csv + manifest.meta.json


def _meta_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(".meta.json")


def write_manifest(manifest: Manifest, csv_path: str | Path) -> None:
    csv_path = Path(csv_path)
    has_duration = any(r.duration_s is not None for r in manifest.recordings)
    fields = MANIFEST_FIELDS + ("duration_s",) if has_duration else MANIFEST_FIELDS
    with open(csv_path, "w", encoding="utf-8", newline="\n") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(fields)
        for r in manifest.recordings:
            row = [r.recording_id, r.speaker_id, r.session, r.task,
                   r.path, r.sample_rate_hz]
            if has_duration:
                row.append("" if r.duration_s is None else repr(float(r.duration_s)))
            w.writerow(row)
    with open(_meta_path(csv_path), "w", encoding="utf-8", newline="\n") as f:
        json.dump({"dataset_name": manifest.dataset_name, "role": manifest.role},
                  f, indent=2)
        f.write("\n")


def read_manifest(csv_path: str | Path) -> Manifest:
    """Read manifest.csv plus its .meta.json sidecar.

    Raises FormatError for structural problems (bad header, unparseable
    fields, missing sidecar). Invariant breaches such as an out-of-range
    task are left to validate_manifest so that they can be reported all at
    once.
    """
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise FileNotFoundError(f"{csv_path}: no such file")
    meta_path = _meta_path(csv_path)
    if not meta_path.exists():
        raise FormatError(f"{csv_path}: sidecar {meta_path.name} is missing")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{meta_path}: invalid JSON ({e})") from e
    for key in ("dataset_name", "role"):
        if key not in meta:
            raise FormatError(f"{meta_path}: missing key {key!r}")
    if meta["role"] not in MANIFEST_ROLES:
        raise FormatError(f"{meta_path}: role {meta['role']!r} not one of "
                          f"{MANIFEST_ROLES}")

    recordings = []
    with open(csv_path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{csv_path}: empty file") from None
        base = tuple(header[:len(MANIFEST_FIELDS)])
        if base != MANIFEST_FIELDS:
            raise FormatError(f"{csv_path}: header {base} does not start with "
                              f"{MANIFEST_FIELDS}")
        extra = header[len(MANIFEST_FIELDS):]
        if extra not in ([], ["duration_s"]):
            raise FormatError(f"{csv_path}: unexpected extra columns {extra}")
        has_duration = bool(extra)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            want = len(header)
            if len(row) != want:
                raise FormatError(f"{csv_path}:{lineno}: expected {want} "
                                  f"fields, got {len(row)}")
            try:
                session = int(row[2])
                task = int(row[3])
                rate = int(row[5])
            except ValueError as e:
                raise FormatError(f"{csv_path}:{lineno}: {e}") from e
            duration = None
            if has_duration and row[6] != "":
                try:
                    duration = float(row[6])
                except ValueError as e:
                    raise FormatError(f"{csv_path}:{lineno}: {e}") from e
            recordings.append(RecordingMeta(row[0], row[1], session, task,
                                            row[4], rate, duration))
    return Manifest(meta["dataset_name"], meta["role"], recordings)


def validate_manifest(manifest: Manifest) -> list[str]:
    """Check manifest invariants; return one violation string per breach."""
    violations = []
    seen: set[str] = set()
    for r in manifest.recordings:
        if not r.recording_id:
            violations.append("(blank): recording_id is empty")
            continue
        if r.recording_id in seen:
            violations.append(f"{r.recording_id}: duplicate recording_id")
        seen.add(r.recording_id)
        if not r.speaker_id:
            violations.append(f"{r.recording_id}: speaker_id is empty")
        if r.session not in VALID_SESSIONS:
            violations.append(f"{r.recording_id}: session out of range "
                              f"({r.session})")
        if r.task not in VALID_TASKS:
            violations.append(f"{r.recording_id}: task out of range ({r.task})")
        if r.sample_rate_hz <= 0:
            violations.append(f"{r.recording_id}: sample_rate_hz must be "
                              f"positive ({r.sample_rate_hz})")
        if r.duration_s is not None and not r.duration_s > 0:
            violations.append(f"{r.recording_id}: duration_s must be positive "
                              f"({r.duration_s})")
    return violations


def assert_disjoint_speakers(a: Manifest, b: Manifest) -> None:
    """Raise ValidationError if two splits share any speaker."""
    overlap = sorted(a.speakers() & b.speakers())
    if overlap:
        raise ValidationError(
            f"speaker overlap between {a.role!r} and {b.role!r} splits: "
            f"{', '.join(overlap)}")


# ---------------------------------------------------------------------------
# embeddings.jsonl

_EMBED_KEYS = ("sample_id", "speaker_id", "session", "task", "duration_s",
               "dim", "vector")


def write_embeddings_jsonl(records: list[EmbeddingRecord],
                           path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            obj = {
                "sample_id": r.sample_id,
                "speaker_id": r.speaker_id,
                "session": r.session,
                "task": r.task,
                "duration_s": float(r.duration_s),
                "dim": r.dim,
                "vector": [float(v) for v in r.vector],
            }
            f.write(json.dumps(obj) + "\n")


def parse_embedding_line(line: str, where: str) -> EmbeddingRecord:
    """Parse one embeddings.jsonl line; raise FormatError on any breach."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise FormatError(f"{where}: invalid JSON ({e})") from e
    if not isinstance(obj, dict):
        raise FormatError(f"{where}: expected a JSON object")
    for key in _EMBED_KEYS:
        if key not in obj:
            raise FormatError(f"{where}: missing key {key!r}")
    try:
        vec = np.asarray(obj["vector"], dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise FormatError(f"{where}: vector is not numeric ({e})") from e
    if vec.ndim != 1 or vec.shape[0] == 0:
        raise FormatError(f"{where}: vector must be a non-empty flat array")
    if not np.all(np.isfinite(vec)):
        raise FormatError(f"{where}: vector has non-finite entries")
    if not np.linalg.norm(vec) > 0:
        raise FormatError(f"{where}: vector norm must be positive")
    if int(obj["dim"]) != vec.shape[0]:
        raise FormatError(f"{where}: dim field is {obj['dim']} but vector has "
                          f"{vec.shape[0]} entries")
    session = int(obj["session"])
    task = int(obj["task"])
    duration = float(obj["duration_s"])
    if session not in VALID_SESSIONS:
        raise FormatError(f"{where}: session out of range ({session})")
    if task != ENROLL_TASK and task not in VALID_TASKS:
        raise FormatError(f"{where}: task out of range ({task})")
    if not duration > 0:
        raise FormatError(f"{where}: duration_s must be positive ({duration})")
    if not obj["sample_id"] or not obj["speaker_id"]:
        raise FormatError(f"{where}: sample_id and speaker_id must be non-empty")
    return EmbeddingRecord(str(obj["sample_id"]), str(obj["speaker_id"]),
                           session, task, duration, vec)


def read_embeddings_jsonl(path: str | Path) -> list[EmbeddingRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            records.append(parse_embedding_line(line, f"{path}:{lineno}"))
    return records


# ---------------------------------------------------------------------------
# trials.csv / scores.csv


def write_trials(trials: list[Trial], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRIAL_FIELDS)
        for t in trials:
            w.writerow([t.known_ref, t.unknown_ref, t.label])


def read_trials(path: str | Path) -> list[Trial]:
    trials = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != TRIAL_FIELDS:
            raise FormatError(f"{path}: expected header {TRIAL_FIELDS}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 fields")
            if row[2] not in TRIAL_LABELS:
                raise FormatError(f"{path}:{lineno}: label {row[2]!r} not one "
                                  f"of {TRIAL_LABELS}")
            trials.append(Trial(row[0], row[1], row[2]))
    return trials


def write_scores(scored: list[ScoredTrial], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SCORE_FIELDS)
        for t in scored:
            w.writerow([t.known_ref, t.unknown_ref, t.label,
                        repr(float(t.score))])


def read_scores(path: str | Path) -> list[ScoredTrial]:
    scored = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != SCORE_FIELDS:
            raise FormatError(f"{path}: expected header {SCORE_FIELDS}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 fields")
            if row[2] not in TRIAL_LABELS:
                raise FormatError(f"{path}:{lineno}: label {row[2]!r} not one "
                                  f"of {TRIAL_LABELS}")
            try:
                score = float(row[3])
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from e
            scored.append(ScoredTrial(row[0], row[1], row[2], score))
    return scored


def scores_and_labels(scored: list[ScoredTrial]) -> tuple[np.ndarray, np.ndarray]:
    """Split scored trials into a score array and a 0/1 label array."""
    scores = np.array([t.score for t in scored], dtype=np.float64)
    labels = np.array([1 if t.label == SAME_ORIGIN else 0 for t in scored],
                      dtype=np.int64)
    return scores, labels

"""Manifest-driven extraction into the evaluator's JSONL interchange.

The bridge talks to the evaluator only through its documented files: it
reads the chunk manifest CSV and writes embeddings.jsonl lines with the
keys sample_id, speaker_id, session, task, duration_s, dim, vector.
Output line order follows manifest order, and a .meta.json sidecar
records the source tag (model kind, dimension, backend and checkpoint
version) so downstream reports are attributable.
"""

from __future__ import annotations

import csv
import json
import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps


class BridgeError(Exception):
    """Base class for extraction failures."""


class InputError(BridgeError):
    """Manifest or audio input is missing or malformed."""


class DimMismatchError(BridgeError):
    """A backend emitted vectors of the wrong dimension."""


@dataclass(frozen=True)
class ExtractorSpec:
    model_kind: str
    expected_dim: int
    model_source: str

    def __post_init__(self):
        if self.expected_dim <= 0:
            raise ValueError(f"expected_dim must be positive "
                             f"({self.expected_dim})")


SPECS = {
    "xvector": ExtractorSpec("xvector", 512,
                             "speechbrain/spkrec-xvect-voxceleb"),
    "ecapa": ExtractorSpec("ecapa", 192,
                           "speechbrain/spkrec-ecapa-voxceleb"),
}

REQUIRED_COLUMNS = ("recording_id", "speaker_id", "session", "task",
                    "path", "sample_rate_hz")


@dataclass
class ChunkRow:
    sample_id: str
    speaker_id: str
    session: int
    task: int
    duration_s: float | None  # filled from the WAV when absent
    path: Path


def read_chunk_manifest(csv_path) -> list[ChunkRow]:
    """Read the evaluator's chunk manifest CSV, keeping row order.

    WAV paths are taken as written, matching how the evaluator itself
    resolves them (relative paths are relative to the working directory).
    """
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise InputError(f"{csv_path}: no such file")
    rows: list[ChunkRow] = []
    with open(csv_path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        have = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in have]
        if missing:
            raise InputError(f"{csv_path}: missing columns "
                             f"{', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{csv_path}:{lineno}"
            try:
                session = int(row["session"])
                task = int(row["task"])
            except ValueError as e:
                raise InputError(f"{where}: {e}") from e
            duration = None
            if row.get("duration_s"):
                try:
                    duration = float(row["duration_s"])
                except ValueError as e:
                    raise InputError(f"{where}: {e}") from e
            if not row["recording_id"] or not row["speaker_id"]:
                raise InputError(f"{where}: recording_id and speaker_id "
                                 f"must be non-empty")
            rows.append(ChunkRow(row["recording_id"], row["speaker_id"],
                                 session, task, duration, Path(row["path"])))
    if not rows:
        raise InputError(f"{csv_path}: no chunk rows")
    return rows


def load_wav(path) -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM WAV as mono float64 in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            n_channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except (wave.Error, EOFError) as e:
        raise InputError(f"{path}: {e}") from e
    if width != 2:
        raise InputError(f"{path}: only 16-bit PCM is supported "
                         f"(got {8 * width}-bit)")
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_channels > 1:
        x = x.reshape(-1, n_channels).mean(axis=1)
    if x.shape[0] == 0:
        raise InputError(f"{path}: no samples")
    return x, rate


def to_model_rate(x: np.ndarray, rate_hz: int,
                  model_rate_hz: int) -> tuple[np.ndarray, bool]:
    """Polyphase-resample to the model's rate; report whether it happened."""
    if rate_hz == model_rate_hz:
        return x, False
    g = math.gcd(rate_hz, model_rate_hz)
    return sps.resample_poly(x, model_rate_hz // g, rate_hz // g), True


@dataclass
class ExtractResult:
    n_records: int
    dim: int
    source_tag: str


def _batches(rows: list, size: int):
    for i in range(0, len(rows), size):
        yield rows[i:i + size]


def extract(chunk_manifest, spec: ExtractorSpec, out_path,
            backend=None, batch_size: int = 16) -> ExtractResult:
    """Embed every manifest chunk and write embeddings.jsonl plus sidecar.

    Vectors are checked against spec.expected_dim; a mismatch aborts the
    run before anything is written. Given fixed backend weights the
    output is byte-identical across runs.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive ({batch_size})")
    rows = read_chunk_manifest(chunk_manifest)
    if backend is None:
        from .backends import SpeechBrainBackend
        backend = SpeechBrainBackend(spec)

    lines: list[str] = []
    resampled = False
    for batch in _batches(rows, batch_size):
        signals = []
        durations = []
        for r in batch:
            x, rate = load_wav(r.path)
            d = r.duration_s if r.duration_s is not None else x.shape[0] / rate
            x, did = to_model_rate(x, rate, backend.rate_hz)
            resampled = resampled or did
            signals.append(x)
            durations.append(d)
        vecs = np.asarray(backend.embed_batch(signals), dtype=np.float64)
        if vecs.shape != (len(batch), spec.expected_dim):
            raise DimMismatchError(
                f"{spec.model_kind}: backend emitted shape {vecs.shape}, "
                f"expected ({len(batch)}, {spec.expected_dim})")
        if not np.all(np.isfinite(vecs)):
            raise DimMismatchError(f"{spec.model_kind}: backend emitted "
                                   f"non-finite values")
        for r, v, d in zip(batch, vecs, durations):
            lines.append(json.dumps({
                "sample_id": r.sample_id,
                "speaker_id": r.speaker_id,
                "session": r.session,
                "task": r.task,
                "duration_s": float(d),
                "dim": spec.expected_dim,
                "vector": [float(c) for c in v],
            }))

    tag = (f"{spec.model_kind}-{spec.expected_dim}@{backend.describe()}"
           + ("+resampled" if resampled else ""))
    out_path = Path(out_path)
    with open(out_path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")
    with open(out_path.with_suffix(".meta.json"), "w", encoding="utf-8",
              newline="\n") as f:
        json.dump({"source_tag": tag, "model_kind": spec.model_kind,
                   "dim": spec.expected_dim, "n_records": len(lines)},
                  f, indent=2)
        f.write("\n")
    return ExtractResult(len(lines), spec.expected_dim, tag)

"""Embedding ingestion, the built-in spectral-statistics embedder, and
speaker enrollment.

The built-in embedder is deliberately lightweight: 24 mel-band log
energies summarised by their per-band mean and standard deviation over
frames, giving a 48-dimensional L2-normalized vector. It exists so the
whole pipeline can run hermetically; externally computed embeddings of any
dimensionality enter through `ingest` instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .audio import AudioSignal, is_augmented_id
from .core import (ENROLL_TASK, EmbeddingRecord, enroll_ref,
                   parse_embedding_line)
from .errors import FormatError, MissingSpeakerError

MEL_BANDS = 24
BASELINE_DIM = 2 * MEL_BANDS
BASELINE_TAG = "melstat-48"
FRAME_MS = 25.0
HOP_MS = 10.0
MIN_CHUNK_S = 0.5
_LOG_FLOOR = 1e-10


@dataclass
class EmbeddingSet:
    """A validated collection of embedding records with unique sample ids."""

    dim: int
    records: list[EmbeddingRecord]
    source_tag: str

    def __post_init__(self):
        self.index: dict[str, EmbeddingRecord] = {}
        for r in self.records:
            if r.sample_id in self.index:
                raise FormatError(f"duplicate sample_id {r.sample_id!r}")
            if r.dim != self.dim:
                raise FormatError(f"{r.sample_id}: dim {r.dim} != set dim "
                                  f"{self.dim}")
            self.index[r.sample_id] = r

    def __len__(self) -> int:
        return len(self.records)


def ingest(paths, source_tag: str | None = None) -> EmbeddingSet:
    """Load one or more embeddings.jsonl files into a validated set.

    Per-record validation (finite entries, positive norm, dim field
    consistency) happens line by line; set-level validation enforces a
    single dimensionality and unique sample ids across all files, with
    errors naming the offending file and line.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    records: list[EmbeddingRecord] = []
    seen: set[str] = set()
    dim = None
    for p in paths:
        with open(p, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                where = f"{p}:{lineno}"
                r = parse_embedding_line(line, where)
                if dim is None:
                    dim = r.dim
                elif r.dim != dim:
                    raise FormatError(f"{where}: dim mismatch (expected "
                                      f"{dim}, got {r.dim})")
                if r.sample_id in seen:
                    raise FormatError(f"{where}: duplicate sample_id "
                                      f"{r.sample_id!r}")
                seen.add(r.sample_id)
                records.append(r)
    if not records:
        raise FormatError(f"no embedding records in "
                          f"{', '.join(map(str, paths))}")
    tag = source_tag if source_tag is not None else f"ingested-{dim}d"
    return EmbeddingSet(dim, records, tag)


# ---------------------------------------------------------------------------
# built-in embedder


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(sample_rate_hz: int, n_fft: int,
                   n_bands: int = MEL_BANDS) -> np.ndarray:
    """Triangular mel filters spanning 0 Hz to Nyquist.

    Returns an (n_bands, n_fft//2 + 1) weight matrix. Band edges are
    equally spaced on the mel scale; each filter rises linearly from its
    left edge to its centre and falls to its right edge.
    """
    edges_mel = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate_hz / 2.0),
                            n_bands + 2)
    edges_hz = _mel_to_hz(edges_mel)
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate_hz / n_fft
    fb = np.zeros((n_bands, bin_hz.shape[0]))
    for i in range(n_bands):
        left, centre, right = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        up = (bin_hz - left) / (centre - left)
        down = (right - bin_hz) / (right - centre)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def baseline_embed(signal: AudioSignal) -> np.ndarray:
    """48-dim spectral-statistics embedding of a chunk.

    25 ms Hann-windowed frames with a 10 ms hop, power spectrum, 24-band
    mel log energies floored at 1e-10, then per-band mean and standard
    deviation over frames, concatenated and L2-normalized. Deterministic:
    same samples in, bit-identical vector out.
    """
    x = signal.samples
    sr = signal.sample_rate_hz
    if signal.duration_s < MIN_CHUNK_S:
        raise ValueError(f"chunk of {signal.duration_s:.3f} s is shorter than "
                         f"the {MIN_CHUNK_S} s minimum")
    frame = int(round(FRAME_MS * sr / 1000.0))
    hop = int(round(HOP_MS * sr / 1000.0))
    n_frames = 1 + (x.shape[0] - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hanning(frame)[None, :]

    n_fft = 1 << (frame - 1).bit_length()
    spectrum = np.fft.rfft(frames, n=n_fft, axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    bands = power @ mel_filterbank(sr, n_fft).T
    log_e = np.log(np.maximum(bands, _LOG_FLOOR))

    vec = np.concatenate([log_e.mean(axis=0), log_e.std(axis=0)])
    return vec / np.linalg.norm(vec)


def embed_record(signal: AudioSignal, sample_id: str, speaker_id: str,
                 session: int, task: int) -> EmbeddingRecord:
    return EmbeddingRecord(sample_id, speaker_id, session, task,
                           signal.duration_s, baseline_embed(signal))


# ---------------------------------------------------------------------------
# enrollment


@dataclass
class EnrollmentVector:
    speaker_id: str
    vector: np.ndarray
    n_samples: int
    duration_s: float  # summed duration of the contributing samples


def default_enroll_filter(record: EmbeddingRecord) -> bool:
    """Session-1, non-augmented samples form the enrollment by default."""
    return record.session == 1 and not is_augmented_id(record.sample_id)


def enroll(embeddings: EmbeddingSet, speaker_id: str,
           keep: Callable[[EmbeddingRecord], bool] = default_enroll_filter,
           ) -> EnrollmentVector:
    """Arithmetic mean of the speaker's selected embedding vectors.

    The mean is deliberately not re-normalized: cosine scoring divides by
    its norm anyway, and the raw mean preserves the relative confidence of
    the contributing sessions.
    """
    picked = [r for r in embeddings.records
              if r.speaker_id == speaker_id and keep(r)]
    if not picked:
        raise MissingSpeakerError(f"no embeddings matched speaker "
                                  f"{speaker_id!r} under the enrollment filter")
    vec = np.mean([r.vector for r in picked], axis=0)
    if not np.linalg.norm(vec) > 0:
        raise ValueError(f"enrollment mean for {speaker_id!r} has zero norm")
    return EnrollmentVector(speaker_id, vec, len(picked),
                            float(sum(r.duration_s for r in picked)))


def enroll_all(embeddings: EmbeddingSet,
               keep: Callable[[EmbeddingRecord], bool] = default_enroll_filter,
               ) -> dict[str, EnrollmentVector]:
    """Enrollment vectors for every speaker with at least one kept sample."""
    out: dict[str, EnrollmentVector] = {}
    for speaker in sorted({r.speaker_id for r in embeddings.records}):
        try:
            out[speaker] = enroll(embeddings, speaker, keep)
        except MissingSpeakerError:
            continue
    return out


def enrollment_records(enrollments: dict[str, EnrollmentVector],
                       ) -> list[EmbeddingRecord]:
    """Enrollment vectors as embedding records for the JSONL interchange.

    sample_id is 'enroll:<speaker>', session is pinned to 1 and task to 0,
    duration_s is the summed contributor duration.
    """
    return [EmbeddingRecord(enroll_ref(e.speaker_id), e.speaker_id, 1,
                            ENROLL_TASK, e.duration_s, e.vector)
            for e in enrollments.values()]

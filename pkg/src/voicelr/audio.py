"""WAV I/O, energy-based voice activity detection, protocol chunking, and
signal-level augmentation.

All audio is mono float64 in [-1, 1]. Only 16-bit PCM WAV is read; stereo
input is downmixed by averaging channels.
"""

from __future__ import annotations

import math
import re
import struct
import wave
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import EmptyVoicedError, FormatError, TooShortError

PROTOCOL_DURATIONS = tuple(range(2, 11))  # seconds, cycled ascending
OVERLAP_FRACTION = 0.1

# sample-id suffixes appended by the augmentation ops
_TS_SUFFIX = "_ts{:03d}"
_NOISE_SUFFIX = "_ns{:g}"
AUGMENT_SUFFIX_RE = re.compile(r"_(ts\d{3}|ns[0-9.]+)$")


def is_augmented_id(sample_id: str) -> bool:
    return AUGMENT_SUFFIX_RE.search(sample_id) is not None


def time_scale_suffix(factor: float) -> str:
    return _TS_SUFFIX.format(int(round(factor * 100)))


def noise_suffix(snr_db: float) -> str:
    return _NOISE_SUFFIX.format(snr_db)


@dataclass
class AudioSignal:
    samples: np.ndarray  # mono float64
    sample_rate_hz: int

    @property
    def duration_s(self) -> float:
        return self.samples.shape[0] / self.sample_rate_hz


@dataclass(frozen=True)
class VadParams:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    threshold_db: float = -35.0  # relative to the peak frame energy

    def __post_init__(self):
        if not (self.hop_ms > 0 and self.frame_ms >= self.hop_ms):
            raise ValueError(f"need frame_ms >= hop_ms > 0 "
                             f"({self.frame_ms}, {self.hop_ms})")
        if self.threshold_db >= 0:
            raise ValueError(f"threshold_db must be negative "
                             f"({self.threshold_db})")


@dataclass
class Chunk:
    source_recording_id: str
    start_s: float
    duration_s: float
    samples: AudioSignal

    @property
    def chunk_id(self) -> str:
        start_ms = int(round(self.start_s * 1000))
        dur_ms = int(round(self.duration_s * 1000))
        return f"{self.source_recording_id}_{start_ms}_{dur_ms}"


# ---------------------------------------------------------------------------
# WAV I/O


def load_wav(path) -> AudioSignal:
    """Read a 16-bit PCM WAV file, downmixing to mono.

    Raises FormatError naming the offending header field for anything that
    is not plain 16-bit PCM.
    """
    with open(path, "rb") as f:
        header = f.read(12)
        if len(header) < 12 or header[:4] != b"RIFF":
            raise FormatError(f"{path}: missing RIFF magic")
        if header[8:12] != b"WAVE":
            raise FormatError(f"{path}: RIFF form type is {header[8:12]!r}, "
                              f"expected b'WAVE'")
        fmt = None
        while True:
            chunk_header = f.read(8)
            if len(chunk_header) < 8:
                raise FormatError(f"{path}: no data chunk found")
            chunk_id, size = struct.unpack("<4sI", chunk_header)
            if chunk_id == b"fmt ":
                body = f.read(size)
                if len(body) < 16:
                    raise FormatError(f"{path}: fmt chunk truncated")
                fmt = struct.unpack("<HHIIHH", body[:16])
            elif chunk_id == b"data":
                if fmt is None:
                    raise FormatError(f"{path}: data chunk precedes fmt chunk")
                raw = f.read(size)
                if len(raw) < size:
                    raise FormatError(f"{path}: data chunk truncated (header "
                                      f"says {size} bytes, got {len(raw)})")
                break
            else:
                f.seek(size + (size & 1), 1)
                continue
            if size & 1:
                f.seek(1, 1)

    audio_format, n_channels, sample_rate, _, _, bits = fmt
    if audio_format != 1:
        raise FormatError(f"{path}: fmt.audio_format={audio_format} "
                          f"(only PCM=1 is supported)")
    if bits != 16:
        raise FormatError(f"{path}: fmt.bits_per_sample={bits} "
                          f"(only 16 is supported)")
    if n_channels < 1:
        raise FormatError(f"{path}: fmt.num_channels={n_channels}")
    data = np.frombuffer(raw[:len(raw) - len(raw) % (2 * n_channels)],
                         dtype="<i2")
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    samples = np.asarray(data, dtype=np.float64) / 32768.0
    return AudioSignal(samples, int(sample_rate))


def save_wav(signal: AudioSignal, path) -> None:
    """Write mono 16-bit PCM; samples are clipped to [-1, 1] first."""
    x = np.clip(signal.samples, -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(signal.sample_rate_hz)
        w.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# voice activity detection


def remove_silence(signal: AudioSignal,
                   params: VadParams = VadParams()) -> AudioSignal:
    """Drop low-energy stretches, keeping the voiced remainder in order.

    The signal is tiled into hop-length blocks; block k is kept iff the mean
    energy of the analysis window starting at block k exceeds the peak
    window energy scaled by 10**(threshold_db/10). Comparing in the energy
    domain sidesteps log(0) for all-zero windows. Windows are truncated at
    the end of the signal, so a fully voiced signal passes through intact.
    """
    x = signal.samples
    sr = signal.sample_rate_hz
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty signal")
    frame = int(round(params.frame_ms * sr / 1000.0))
    hop = int(round(params.hop_ms * sr / 1000.0))
    if hop < 1 or frame < hop:
        raise ValueError(f"degenerate frame/hop at {sr} Hz")

    n_blocks = -(-n // hop)  # ceil
    starts = np.arange(n_blocks) * hop
    ends = np.minimum(starts + frame, n)
    csum = np.concatenate(([0.0], np.cumsum(x * x)))
    energy = (csum[ends] - csum[starts]) / (ends - starts)

    keep = energy > energy.max() * 10.0 ** (params.threshold_db / 10.0)
    if not np.any(keep):
        raise EmptyVoicedError("no frame exceeded the energy threshold")
    block_ends = np.minimum(starts + hop, n)
    voiced = np.concatenate([x[a:b] for a, b, k
                             in zip(starts, block_ends, keep) if k])
    return AudioSignal(voiced, sr)


# ---------------------------------------------------------------------------
# protocol chunking


def plan_durations(total_voiced_s: float) -> list[int]:
    """Chunk durations for a voiced signal, cycling 2..10 s ascending.

    Consecutive chunks overlap by 10% of the earlier chunk's duration, so
    chunk k starts at start_{k-1} + 0.9 * d_{k-1}. Planning stops at the
    first chunk that would run past the voiced length.
    """
    if total_voiced_s < PROTOCOL_DURATIONS[0]:
        raise TooShortError(f"voiced length {total_voiced_s:.3f} s is shorter "
                            f"than the smallest chunk "
                            f"({PROTOCOL_DURATIONS[0]} s)")
    plan: list[int] = []
    start = 0.0
    i = 0
    # 1e-9 absorbs float accumulation in the 0.9*d start increments
    while True:
        d = PROTOCOL_DURATIONS[i % len(PROTOCOL_DURATIONS)]
        if start + d > total_voiced_s + 1e-9:
            break
        plan.append(d)
        start += (1.0 - OVERLAP_FRACTION) * d
        i += 1
    return plan


def split_chunks(signal: AudioSignal, plan: list[int],
                 recording_id: str = "") -> list[Chunk]:
    """Cut the planned chunks out of a voiced signal.

    Boundaries are rounded to whole samples independently per chunk, so the
    10% overlap holds to within one sample. A trailing chunk that would
    overrun the signal is discarded.
    """
    if not plan:
        raise ValueError("empty chunk plan")
    x = signal.samples
    sr = signal.sample_rate_hz
    n = x.shape[0]
    chunks: list[Chunk] = []
    start_s = 0.0
    for d in plan:
        a = int(round(start_s * sr))
        b = a + int(round(d * sr))
        if b > n:
            break
        piece = AudioSignal(x[a:b].copy(), sr)
        chunks.append(Chunk(recording_id, a / sr, float(d), piece))
        start_s += (1.0 - OVERLAP_FRACTION) * d
    return chunks


# ---------------------------------------------------------------------------
# augmentation


def augment_time_scale(signal: AudioSignal, factor: float) -> AudioSignal:
    """Resample to floor(factor * N) samples by linear interpolation.

    factor 1.0 returns a copy of the input; the pitch shift that comes with
    plain resampling is intentional (it is the variation being simulated).
    """
    if not factor > 0:
        raise ValueError(f"factor must be positive ({factor})")
    x = signal.samples
    n = x.shape[0]
    m = int(math.floor(factor * n + 1e-9))
    if m < 1:
        raise ValueError(f"factor {factor} collapses {n} samples to none")
    if m == n:
        return AudioSignal(x.copy(), signal.sample_rate_hz)
    pos = np.linspace(0.0, n - 1.0, m)
    return AudioSignal(np.interp(pos, np.arange(n), x), signal.sample_rate_hz)


def augment_add_noise(signal: AudioSignal, snr_db: float,
                      seed: int) -> AudioSignal:
    """Add uniform white noise at the requested SNR, then clip to [-1, 1].

    The drawn noise is rescaled so that the pre-clip residual power is
    exactly signal_power * 10**(-snr_db/10); the draw is fully determined
    by the seed.
    """
    x = signal.samples
    p_sig = float(np.mean(x * x))
    if p_sig == 0.0:
        raise ValueError("zero-power signal: SNR is undefined")
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, x.shape[0])
    p_u = float(np.mean(u * u))
    noise = u * math.sqrt(p_sig * 10.0 ** (-snr_db / 10.0) / p_u)
    return AudioSignal(np.clip(x + noise, -1.0, 1.0), signal.sample_rate_hz)


def chunk_noise_seed(base_seed: int, sample_id: str) -> int:
    """Per-chunk noise seed: stable across runs and chunk orderings."""
    return (int(base_seed) & 0xFFFFFFFF) ^ zlib.crc32(sample_id.encode("utf-8"))

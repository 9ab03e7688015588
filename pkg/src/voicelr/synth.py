"""Seeded synthetic speech-like corpus for hermetic end-to-end runs.

Each synthetic speaker is a random spectral envelope (a handful of
formant-like Gaussian bumps over a broadband floor); a recording is white
noise shaped by that envelope, with per-recording jitter of the bump
centres, gains, and spectral tilt standing in for session and channel
variation. Tasks 1 and 2 carry more additive white noise than task 3, and
two stretches of digital silence are inserted so the activity detector has
something to remove. Everything is derived from one seed, so the corpus
is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioSignal, save_wav
from .core import Manifest, RecordingMeta, write_manifest

SAMPLE_RATE = 16000
VOICED_S = 58.0       # long enough for every protocol duration to appear
SILENCE_S = 0.8
TASK_SNR_DB = {1: 24.0, 2: 24.0, 3: 36.0}
RMS = 0.1

N_BUMPS = 7
BUMP_LO_HZ = 200.0
BUMP_HI_HZ = 3600.0
SPEAKER_TILT = 0.5    # per-speaker spectral-tilt sigma
FREQ_JITTER = 0.008   # relative bump-centre shift per recording
GAIN_JITTER = 0.12    # log-gain sigma per recording
TILT_JITTER = 0.05    # spectral-tilt sigma per recording


@dataclass
class SpeakerVoice:
    centres_hz: np.ndarray
    widths_hz: np.ndarray
    log_gains: np.ndarray
    tilt: float


def _draw_voice(rng: np.random.Generator) -> SpeakerVoice:
    centres = np.exp(rng.uniform(np.log(BUMP_LO_HZ), np.log(BUMP_HI_HZ),
                                 N_BUMPS))
    widths = rng.uniform(80.0, 280.0, N_BUMPS)
    log_gains = rng.normal(0.0, 1.0, N_BUMPS)
    return SpeakerVoice(centres, widths, log_gains,
                        float(rng.normal(0.0, SPEAKER_TILT)))


def _envelope(voice: SpeakerVoice, freqs_hz: np.ndarray,
              rng: np.random.Generator) -> np.ndarray:
    centres = voice.centres_hz * (1.0 + rng.normal(0.0, FREQ_JITTER, N_BUMPS))
    gains = np.exp(voice.log_gains + rng.normal(0.0, GAIN_JITTER, N_BUMPS))
    tilt = voice.tilt + rng.normal(0.0, TILT_JITTER)
    env = np.full_like(freqs_hz, 0.03)  # broadband floor
    for c, w, g in zip(centres, voice.widths_hz, gains):
        env += g * np.exp(-0.5 * ((freqs_hz - c) / w) ** 2)
    return env * (np.maximum(freqs_hz, 50.0) / 1000.0) ** tilt


def _render_recording(voice: SpeakerVoice, task: int,
                      rng: np.random.Generator) -> AudioSignal:
    n = int(VOICED_S * SAMPLE_RATE)
    freqs = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
    spectrum = np.fft.rfft(rng.standard_normal(n))
    voiced = np.fft.irfft(spectrum * _envelope(voice, freqs, rng), n=n)
    voiced *= RMS / np.sqrt(np.mean(voiced ** 2))

    snr = TASK_SNR_DB[task]
    noise = rng.standard_normal(n)
    noise *= np.sqrt(np.mean(voiced ** 2) * 10.0 ** (-snr / 10.0)
                     / np.mean(noise ** 2))
    voiced = voiced + noise

    gap = np.zeros(int(SILENCE_S * SAMPLE_RATE))
    a, b = n // 3, 2 * n // 3
    samples = np.concatenate([voiced[:a], gap, voiced[a:b], gap, voiced[b:]])
    return AudioSignal(samples, SAMPLE_RATE)


def generate_corpus(out_dir, n_eval_speakers: int = 20,
                    n_cal_speakers: int = 6, seed: int = 20240921,
                    ) -> tuple[Path, Path]:
    """Write WAVs plus calibration/evaluation manifests; return their paths.

    Every speaker gets 2 sessions x 3 tasks. Speaker sets of the two splits
    are disjoint by construction.
    """
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    splits = [("calibration", [f"cal_s{i + 1:02d}"
                               for i in range(n_cal_speakers)]),
              ("evaluation", [f"eval_s{i + 1:02d}"
                              for i in range(n_eval_speakers)])]
    paths = {}
    for role, speakers in splits:
        recordings = []
        for spk in speakers:
            voice = _draw_voice(rng)
            for session in (1, 2):
                for task in (1, 2, 3):
                    rid = f"{spk}_r{session}{task}"
                    wav_path = wav_dir / f"{rid}.wav"
                    save_wav(_render_recording(voice, task, rng), wav_path)
                    recordings.append(RecordingMeta(
                        rid, spk, session, task, str(wav_path), SAMPLE_RATE))
        manifest = Manifest(f"synth-{role}", role, recordings)
        csv_path = out_dir / f"{role}.csv"
        write_manifest(manifest, csv_path)
        paths[role] = csv_path
    return paths["calibration"], paths["evaluation"]

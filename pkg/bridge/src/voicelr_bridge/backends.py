"""Embedding backends: pretrained speechbrain models, plus a
deterministic offline stand-in for tests and smoke runs.

A backend exposes rate_hz (the sample rate it expects), describe()
(version string for the source tag), and embed_batch(signals) returning
one vector per input signal.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .extract import BridgeError, ExtractorSpec


class ModelLoadError(BridgeError):
    """A pretrained model could not be loaded; names the source."""


class SpectralBackend:
    """Banded log-spectrum statistics through a fixed random projection.

    Carries enough spectral-envelope information for pipeline tests and
    direction checks, with no pretrained weights to download. The
    projection is seeded from the model kind, so xvector and ecapa
    stand-ins give independent vectors at their respective dimensions.
    Not a substitute for a real extractor in actual comparisons.
    """

    name = "spectral"
    version = "1"
    rate_hz = 16000
    N_BANDS = 64
    FRAME = 400  # 25 ms at 16 kHz
    HOP = 160

    def __init__(self, spec: ExtractorSpec):
        self._dim = spec.expected_dim
        seed = int.from_bytes(
            hashlib.sha256(spec.model_kind.encode("utf-8")).digest()[:8],
            "big")
        rng = np.random.default_rng(seed)
        self._proj = (rng.standard_normal((spec.expected_dim,
                                           2 * self.N_BANDS))
                      / math.sqrt(2 * self.N_BANDS))
        self._window = np.hanning(self.FRAME)
        n_bins = self.FRAME // 2 + 1
        self._band_starts = np.linspace(0, n_bins,
                                        self.N_BANDS + 1).astype(int)[:-1]

    def describe(self) -> str:
        return f"{self.name}-v{self.version}"

    def embed_batch(self, signals) -> np.ndarray:
        return np.stack([self._embed(np.asarray(x, dtype=np.float64))
                         for x in signals])

    def _embed(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] < self.FRAME:
            x = np.pad(x, (0, self.FRAME - x.shape[0]))
        frames = np.lib.stride_tricks.sliding_window_view(
            x, self.FRAME)[::self.HOP]
        power = np.abs(np.fft.rfft(frames * self._window, axis=1)) ** 2
        bands = np.log(np.add.reduceat(power, self._band_starts, axis=1)
                       + 1e-12)
        feats = np.concatenate([bands.mean(axis=0), bands.std(axis=0)])
        v = self._proj @ feats
        norm = np.linalg.norm(v)
        if not norm > 0:
            raise ValueError("degenerate all-zero embedding")
        return v / norm


class SpeechBrainBackend:
    """Pretrained x-vector / ECAPA-TDNN inference.

    torch and speechbrain are imported lazily so the bridge installs and
    runs its offline backend without them; asking for this backend
    without the models extra raises ModelLoadError naming the checkpoint.
    """

    name = "speechbrain"
    rate_hz = 16000

    def __init__(self, spec: ExtractorSpec, device: str = "cpu",
                 cache_dir=None):
        self._source = spec.model_source
        try:
            import speechbrain
            import torch
            try:
                from speechbrain.inference.speaker import EncoderClassifier
            except ImportError:  # speechbrain < 1.0 layout
                from speechbrain.pretrained import EncoderClassifier
        except ImportError as e:
            raise ModelLoadError(
                f"{spec.model_source}: speechbrain/torch not installed "
                f"(pip install 'voicelr-bridge[models]'): {e}") from e
        self.version = getattr(speechbrain, "__version__", "unknown")
        self._torch = torch
        try:
            self._model = EncoderClassifier.from_hparams(
                source=spec.model_source, savedir=cache_dir,
                run_opts={"device": device})
        except Exception as e:
            raise ModelLoadError(f"{spec.model_source}: {e}") from e

    def describe(self) -> str:
        return f"{self.name}-{self.version}:{self._source}"

    def embed_batch(self, signals) -> np.ndarray:
        torch = self._torch
        max_len = max(x.shape[0] for x in signals)
        batch = torch.zeros(len(signals), max_len)
        lens = torch.empty(len(signals))
        for i, x in enumerate(signals):
            batch[i, :x.shape[0]] = torch.as_tensor(x, dtype=torch.float32)
            lens[i] = x.shape[0] / max_len
        with torch.no_grad():
            emb = self._model.encode_batch(batch, lens)
        return emb.squeeze(1).cpu().numpy().astype(np.float64)


def make_backend(name: str, spec: ExtractorSpec, device: str = "cpu",
                 cache_dir=None):
    if name == "spectral":
        return SpectralBackend(spec)
    if name == "speechbrain":
        return SpeechBrainBackend(spec, device=device, cache_dir=cache_dir)
    raise ValueError(f"backend {name!r} not one of ('speechbrain', "
                     f"'spectral')")

"""Speaker-embedding extraction bridge.

Runs a pretrained speaker embedder (x-vector or ECAPA-TDNN via
speechbrain) over a chunk manifest and writes the evaluator's
embeddings.jsonl interchange format, so real extractors can stand in
for the built-in baseline embedder. A deterministic offline backend is
included for pipeline tests and smoke runs.
"""

from .backends import (ModelLoadError, SpectralBackend, SpeechBrainBackend,
                       make_backend)
from .extract import (SPECS, BridgeError, DimMismatchError, ExtractorSpec,
                      ExtractResult, InputError, extract, read_chunk_manifest)

__all__ = [
    "BridgeError",
    "DimMismatchError",
    "ExtractResult",
    "ExtractorSpec",
    "InputError",
    "ModelLoadError",
    "SPECS",
    "SpectralBackend",
    "SpeechBrainBackend",
    "extract",
    "make_backend",
    "read_chunk_manifest",
]

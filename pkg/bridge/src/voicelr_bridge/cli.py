"""extract: embed a chunk manifest with a pretrained speaker model.

Exit codes follow the evaluator's convention: 0 success, 1 I/O or
model-loading problems, 2 argument or validation problems.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .backends import ModelLoadError, make_backend
from .extract import SPECS, DimMismatchError, InputError, extract


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="voicelr-extract",
        description="Run a pretrained speaker embedder over a chunk "
                    "manifest and write embeddings.jsonl interchange.")
    p.add_argument("--manifest", required=True, help="chunk manifest CSV")
    p.add_argument("--model", required=True, choices=sorted(SPECS),
                   help="which pretrained embedding model to run")
    p.add_argument("--out", required=True, help="embeddings JSONL to write")
    p.add_argument("--backend", choices=("speechbrain", "spectral"),
                   default="speechbrain",
                   help="spectral is a deterministic offline stand-in")
    p.add_argument("--model-source",
                   help="override the pretrained checkpoint identifier")
    p.add_argument("--device", default="cpu")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--cache-dir",
                   help="where downloaded checkpoints are unpacked")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    spec = SPECS[args.model]
    if args.model_source:
        spec = replace(spec, model_source=args.model_source)
    for key in ("manifest", "model", "out", "backend", "batch_size"):
        print(f"[extract] {key.replace('_', '-')} = {getattr(args, key)}")
    try:
        backend = make_backend(args.backend, spec, device=args.device,
                               cache_dir=args.cache_dir)
        result = extract(args.manifest, spec, args.out, backend=backend,
                         batch_size=args.batch_size)
    except (InputError, ModelLoadError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DimMismatchError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"extract: {result.n_records} vectors (dim {result.dim}, "
          f"tag {result.source_tag}) -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line pipeline: prep, embed, enroll, trials, score, calibrate,
evaluate, report.

Every command prints its effective configuration before doing work. An INI
file passed via --config supplies per-command defaults (section name =
command name); explicit flags always win. Exit codes: 0 success, 1 I/O or
file-format problems, 2 validation or argument problems, 3 numeric or
degenerate-data problems.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import shutil
import sys
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import metrics
from .audio import (VadParams, augment_add_noise, augment_time_scale,
                    chunk_noise_seed, load_wav, noise_suffix, plan_durations,
                    remove_silence, save_wav, split_chunks, time_scale_suffix)
from .calibration import (fit_calibration, load_calibration, log10_lrs,
                          save_calibration, score_trials)
from .core import (Manifest, RecordingMeta, read_embeddings_jsonl,
                   read_manifest, read_scores, read_trials, scores_and_labels,
                   validate_manifest, write_embeddings_jsonl, write_manifest,
                   write_scores, write_trials)
from .embeddings import (BASELINE_TAG, EnrollmentVector, embed_record,
                         enroll_all, enrollment_records, ingest)
from .errors import (ConvergenceError, DegenerateDataError, EmptyVoicedError,
                     FormatError, MissingSpeakerError, TooShortError,
                     ValidationError)
from .evaluation import (BREAKDOWN_AXES, MODES, ScenarioConfig, breakdown,
                         generate_trials, run_pipeline, write_matrix_csv)

log = logging.getLogger("voicelr")

LOCK_NAME = ".voicelr.lock"

_REQUIRED = {
    "prep": ("manifest", "out_dir"),
    "embed": ("manifest", "out"),
    "enroll": ("embeddings", "out"),
    "trials": ("manifest", "mode", "out"),
    "score": ("trials", "embeddings", "out"),
    "calibrate": ("scores", "out"),
    "evaluate": ("mode", "calibration_manifest", "evaluation_manifest",
                 "embeddings", "out_dir"),
    "report": ("scores", "model", "out_dir"),
}


@contextmanager
def output_lock(out_dir: Path):
    """Advisory lock: concurrent writers to one output dir are unsupported."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise FileExistsError(
            f"{lock}: output directory is in use by another invocation "
            f"(delete the lock file if that run is gone)") from None
    with os.fdopen(fd, "w") as f:
        f.write(str(os.getpid()))
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _float_list(text: str) -> tuple:
    return tuple(float(v) for v in text.split(","))


def _str_list(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _build_parser() -> tuple[argparse.ArgumentParser, dict]:
    p = argparse.ArgumentParser(
        prog="voicelr",
        description="Forensic voice-comparison evaluation pipeline")
    p.add_argument("--config", help="INI file with per-command sections; "
                                    "explicit flags override it")
    p.add_argument("--verbose", action="store_true",
                   help="log at INFO level instead of WARNING")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    q = sub.add_parser("prep", help="remove silence, cut protocol chunks, "
                                    "optionally augment")
    q.add_argument("--manifest", help="recording manifest CSV")
    q.add_argument("--out-dir", help="directory for chunk WAVs and manifest")
    q.add_argument("--frame-ms", type=float, default=25.0)
    q.add_argument("--hop-ms", type=float, default=10.0)
    q.add_argument("--threshold-db", type=float, default=-35.0,
                   help="energy threshold relative to the peak frame")
    q.add_argument("--augment", action="store_true",
                   help="also write time-scaled and noisy variants")
    q.add_argument("--time-scales", type=_float_list, default=(0.95, 1.05))
    q.add_argument("--snr-db", type=float, default=15.0)
    q.add_argument("--seed", type=int, default=0,
                   help="base seed for the noise augmentation")
    q.add_argument("--strict", action="store_true",
                   help="abort on the first bad recording instead of skipping")
    q.set_defaults(func=cmd_prep)

    q = sub.add_parser("embed", help="embed chunk WAVs with the built-in "
                                     "spectral-statistics embedder")
    q.add_argument("--manifest", help="chunk manifest CSV")
    q.add_argument("--out", help="embeddings JSONL to write")
    q.add_argument("--strict", action="store_true")
    q.set_defaults(func=cmd_embed)

    q = sub.add_parser("enroll", help="average session-1 embeddings per "
                                      "speaker")
    q.add_argument("--embeddings", type=_str_list,
                   help="embeddings JSONL (comma-separated for several)")
    q.add_argument("--out", help="enrollment JSONL to write")
    q.add_argument("--include-augmented", action="store_true")
    q.set_defaults(func=cmd_enroll)

    q = sub.add_parser("trials", help="generate labeled trial pairs")
    q.add_argument("--manifest", help="chunk manifest CSV")
    q.add_argument("--mode", choices=MODES)
    q.add_argument("--all-sessions", action="store_true",
                   help="pairwise only: pair within sessions too")
    q.add_argument("--embeddings", type=_str_list, default=(),
                   help="optional: verify every chunk has an embedding")
    q.add_argument("--out", help="trials CSV to write")
    q.set_defaults(func=cmd_trials)

    q = sub.add_parser("score", help="cosine-score a trial list")
    q.add_argument("--trials")
    q.add_argument("--embeddings", type=_str_list)
    q.add_argument("--enrollments", help="enrollment JSONL for "
                                         "enrollment-mode trials")
    q.add_argument("--out", help="scores CSV to write")
    q.set_defaults(func=cmd_score)

    q = sub.add_parser("calibrate", help="fit the logistic "
                                         "score-to-LR calibration")
    q.add_argument("--scores")
    q.add_argument("--out", help="calibration model JSON to write")
    q.add_argument("--weighting", choices=("equal-prior", "unweighted"),
                   default="equal-prior")
    q.add_argument("--l2", type=float, default=0.0)
    q.set_defaults(func=cmd_calibrate)

    q = sub.add_parser("evaluate", help="run the full calibrate-and-evaluate "
                                        "pipeline")
    q.add_argument("--mode", choices=MODES)
    q.add_argument("--calibration-manifest")
    q.add_argument("--evaluation-manifest")
    q.add_argument("--embeddings", type=_str_list)
    q.add_argument("--out-dir")
    q.add_argument("--breakdowns", type=_str_list,
                   default=("duration", "task"))
    q.add_argument("--min-cell-so", type=int, default=5)
    q.add_argument("--min-cell-do", type=int, default=20)
    q.add_argument("--calibration-cross-session-only", action="store_true",
                   help="restrict calibration pairs to session 1 vs 2")
    q.add_argument("--weighting", choices=("equal-prior", "unweighted"),
                   default="equal-prior")
    q.add_argument("--l2", type=float, default=0.0)
    q.add_argument("--clip", type=float, default=1e-15)
    q.add_argument("--tippet-step", type=float, default=0.01)
    q.set_defaults(func=cmd_evaluate)

    q = sub.add_parser("report", help="recompute metrics from scored trials "
                                      "and a calibration model")
    q.add_argument("--scores")
    q.add_argument("--model", help="calibration model JSON")
    q.add_argument("--out-dir")
    q.add_argument("--mode", choices=MODES,
                   help="needed (with --embeddings) for breakdown matrices")
    q.add_argument("--embeddings", type=_str_list, default=())
    q.add_argument("--breakdowns", type=_str_list,
                   default=("duration", "task"))
    q.add_argument("--min-cell-so", type=int, default=5)
    q.add_argument("--min-cell-do", type=int, default=20)
    q.add_argument("--clip", type=float, default=1e-15)
    q.add_argument("--tippet-step", type=float, default=0.01)
    q.set_defaults(func=cmd_report)

    return p, sub.choices


def _apply_config(args, subparsers, argv) -> None:
    """Fill unset options from the INI section named after the command."""
    cp = configparser.ConfigParser()
    if not cp.read(args.config):
        raise FileNotFoundError(f"config file {args.config!r} not found")
    if args.command not in cp:
        return
    section = cp[args.command]
    explicit = {tok[2:].split("=")[0].replace("-", "_")
                for tok in argv if tok.startswith("--")}
    for action in subparsers[args.command]._actions:
        dest = action.dest
        key = dest.replace("_", "-")
        if dest == "help" or dest in explicit or key not in section:
            continue
        if isinstance(action, (argparse._StoreTrueAction,
                               argparse._StoreFalseAction)):
            setattr(args, dest, section.getboolean(key))
        elif action.type is not None:
            setattr(args, dest, action.type(section[key]))
        else:
            setattr(args, dest, section[key])


def _echo_config(args) -> list[tuple[str, str]]:
    skip = {"func", "command", "config", "verbose"}
    pairs = [(k.replace("_", "-"), str(v))
             for k, v in sorted(vars(args).items()) if k not in skip]
    for k, v in pairs:
        print(f"[{args.command}] {k} = {v}")
    return pairs


def _require(args, parser) -> None:
    missing = [d.replace("_", "-") for d in _REQUIRED[args.command]
               if getattr(args, d) in (None, (), [])]
    if missing:
        parser.error(f"{args.command}: missing required option(s): "
                     + ", ".join("--" + m for m in missing))


# ---------------------------------------------------------------------------
# commands


def _valid_rows(manifest: Manifest, strict: bool) -> list[RecordingMeta]:
    violations = validate_manifest(manifest)
    if violations and strict:
        raise ValidationError("; ".join(violations))
    bad_ids = {v.split(":", 1)[0] for v in violations}
    for v in violations:
        log.warning("skipping invalid manifest row: %s", v)
    return [r for r in manifest.recordings if r.recording_id not in bad_ids]


def cmd_prep(args) -> int:
    manifest = read_manifest(args.manifest)
    vad = VadParams(args.frame_ms, args.hop_ms, args.threshold_db)
    out = Path(args.out_dir)
    rows = _valid_rows(manifest, args.strict)
    n_skipped = 0
    chunk_rows: list[RecordingMeta] = []
    with output_lock(out):
        # stage everything, then move into place: an aborted run (--strict)
        # must not leave partial outputs behind
        staging = out / ".staging"
        if staging.exists():
            shutil.rmtree(staging)
        (staging / "wav").mkdir(parents=True)
        try:
            for r in rows:
                try:
                    sig = load_wav(r.path)
                    if sig.sample_rate_hz != r.sample_rate_hz:
                        raise ValidationError(
                            f"{r.recording_id}: manifest says "
                            f"{r.sample_rate_hz} Hz but the file is "
                            f"{sig.sample_rate_hz} Hz")
                    voiced = remove_silence(sig, vad)
                    chunks = split_chunks(voiced,
                                          plan_durations(voiced.duration_s),
                                          r.recording_id)
                except (OSError, FormatError, ValidationError,
                        EmptyVoicedError, TooShortError) as e:
                    if args.strict:
                        raise
                    log.warning("skipping %s: %s", r.recording_id, e)
                    n_skipped += 1
                    continue
                for c in chunks:
                    variants = [(c.chunk_id, c.samples)]
                    if args.augment:
                        for factor in args.time_scales:
                            variants.append(
                                (c.chunk_id + time_scale_suffix(factor),
                                 augment_time_scale(c.samples, factor)))
                        variants.append(
                            (c.chunk_id + noise_suffix(args.snr_db),
                             augment_add_noise(c.samples, args.snr_db,
                                               chunk_noise_seed(args.seed,
                                                                c.chunk_id))))
                    for sid, variant in variants:
                        save_wav(variant, staging / "wav" / f"{sid}.wav")
                        chunk_rows.append(RecordingMeta(
                            sid, r.speaker_id, r.session, r.task,
                            str(out / "wav" / f"{sid}.wav"),
                            variant.sample_rate_hz, variant.duration_s))
            write_manifest(Manifest(manifest.dataset_name + "-chunks",
                                    manifest.role, chunk_rows),
                           staging / "chunks.csv")
        except BaseException:
            shutil.rmtree(staging, ignore_errors=True)
            raise
        for name in ("wav", "chunks.csv", "chunks.meta.json"):
            dest = out / name
            if dest.is_dir():
                shutil.rmtree(dest)
            elif dest.exists():
                dest.unlink()
            (staging / name).replace(dest)
        staging.rmdir()
    print(f"prep: {len(rows) - n_skipped}/{len(rows)} recordings -> "
          f"{len(chunk_rows)} chunks ({out / 'chunks.csv'})")
    return 0


def cmd_embed(args) -> int:
    manifest = read_manifest(args.manifest)
    rows = _valid_rows(manifest, args.strict)
    records = []
    n_skipped = 0
    for r in rows:
        try:
            sig = load_wav(r.path)
            records.append(embed_record(sig, r.recording_id, r.speaker_id,
                                        r.session, r.task))
        except (OSError, FormatError, ValueError) as e:
            if args.strict:
                raise
            log.warning("skipping %s: %s", r.recording_id, e)
            n_skipped += 1
    if not records:
        raise ValidationError("no chunks could be embedded")
    write_embeddings_jsonl(records, args.out)
    print(f"embed: {len(records)} vectors (dim {records[0].dim}, "
          f"tag {BASELINE_TAG}) -> {args.out}, {n_skipped} skipped")
    return 0


def cmd_enroll(args) -> int:
    emb = ingest(list(args.embeddings))
    if args.include_augmented:
        enrollments = enroll_all(emb, keep=lambda r: r.session == 1)
    else:
        enrollments = enroll_all(emb)
    if not enrollments:
        raise MissingSpeakerError("no speaker has session-1 embeddings")
    write_embeddings_jsonl(enrollment_records(enrollments), args.out)
    print(f"enroll: {len(enrollments)} speakers -> {args.out}")
    return 0


def cmd_trials(args) -> int:
    manifest = read_manifest(args.manifest)
    emb = ingest(list(args.embeddings)) if args.embeddings else None
    trial_set = generate_trials(manifest, emb, args.mode,
                                all_sessions=args.all_sessions)
    write_trials(trial_set.trials, args.out)
    n_same = sum(1 for t in trial_set.trials if t.label == "same-origin")
    print(f"trials: {len(trial_set.trials)} ({n_same} same-origin, "
          f"{len(trial_set.trials) - n_same} different-origin), "
          f"{len(trial_set.exclusions)} exclusions -> {args.out}")
    return 0


def cmd_score(args) -> int:
    trials = read_trials(args.trials)
    if not trials:
        raise ValidationError("empty trial set")
    emb = ingest(list(args.embeddings))
    enrollments = None
    if args.enrollments:
        enrollments = {r.speaker_id: EnrollmentVector(r.speaker_id, r.vector,
                                                      0, r.duration_s)
                       for r in read_embeddings_jsonl(args.enrollments)}
    scored = score_trials(trials, emb, enrollments)
    write_scores(scored, args.out)
    print(f"score: {len(scored)} trials -> {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    scored = read_scores(args.scores)
    if not scored:
        raise ValidationError("empty trial set")
    model = fit_calibration(scored, weighting=args.weighting, l2=args.l2)
    save_calibration(model, args.out)
    print(f"calibrate: weight={model.weight!r} bias={model.bias!r} "
          f"(n_same={model.n_same}, n_diff={model.n_diff}) -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    config = ScenarioConfig(
        mode=args.mode,
        calibration_manifest=Path(args.calibration_manifest),
        evaluation_manifest=Path(args.evaluation_manifest),
        embeddings=tuple(args.embeddings),
        out_dir=Path(args.out_dir),
        breakdowns=tuple(args.breakdowns),
        min_cell_so=args.min_cell_so,
        min_cell_do=args.min_cell_do,
        calibration_all_sessions=not args.calibration_cross_session_only,
        weighting=args.weighting,
        l2=args.l2,
        clip=args.clip,
        tippet_step=args.tippet_step)
    with output_lock(Path(args.out_dir)):
        report = run_pipeline(config)
        _write_effective_config(args, Path(args.out_dir))
    print(f"n_trials = {report.n_trials} "
          f"({report.n_same} same, {report.n_diff} diff)")
    for name in ("eer", "cllr", "cllr_min", "cllr_cal"):
        print(f"{name:8s} = {getattr(report, name):.6f}")
    print(f"report: {Path(args.out_dir) / 'report.json'}")
    return 0


def _write_effective_config(args, out_dir: Path) -> None:
    cp = configparser.ConfigParser()
    skip = {"func", "command", "config", "verbose"}
    cp[args.command] = {k.replace("_", "-"): str(v)
                        for k, v in sorted(vars(args).items())
                        if k not in skip}
    with open(out_dir / "effective_config.ini", "w", encoding="utf-8",
              newline="\n") as f:
        cp.write(f)


def cmd_report(args) -> int:
    scored = read_scores(args.scores)
    if not scored:
        raise ValidationError("empty trial set")
    model = load_calibration(args.model)
    scores, labels = scores_and_labels(scored)
    if not (np.any(labels == 1) and np.any(labels == 0)):
        raise ValidationError("scored trials must include both labels")
    llr = log10_lrs(model, scores, args.clip)
    labeled = metrics.LabeledLogLRs(llr[labels == 1], llr[labels == 0])
    summary = {
        "n_trials": len(scored),
        "n_same": int(np.sum(labels == 1)),
        "n_diff": int(np.sum(labels == 0)),
        "eer": metrics.eer(scores, labels),
        "cllr": metrics.cllr(labeled),
        "cllr_min": metrics.cllr_min(scores, labels),
    }
    summary["cllr_cal"] = summary["cllr"] - summary["cllr_min"]
    curve = metrics.tippet(labeled, step=args.tippet_step)

    matrices = {}
    if args.embeddings and args.mode:
        emb = ingest(list(args.embeddings))
        matrices = {axis: breakdown(scored, emb, axis, args.mode,
                                    args.min_cell_so, args.min_cell_do)
                    for axis in args.breakdowns}

    out = Path(args.out_dir)
    with output_lock(out):
        metrics.write_tippet_csv(curve, out / "tippet.csv")
        for axis, m in matrices.items():
            for metric_name in ("eer", "cllr_min"):
                write_matrix_csv(m, metric_name,
                                 out / f"matrix_{axis}_{metric_name}.csv")
        payload = {
            "mode": args.mode,
            "global": summary,
            "calibration": {"weight": model.weight, "bias": model.bias,
                            "n_same": model.n_same, "n_diff": model.n_diff,
                            "weighting": model.weighting, "l2": model.l2,
                            "clip": args.clip},
            "matrices": {axis: m.to_json_dict()
                         for axis, m in matrices.items()},
            "meta": {"timestamp": datetime.now(timezone.utc).isoformat()},
        }
        with open(out / "report.json", "w", encoding="utf-8",
                  newline="\n") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
    for name in ("eer", "cllr", "cllr_min", "cllr_cal"):
        print(f"{name:8s} = {summary[name]:.6f}")
    print(f"report: {out / 'report.json'}")
    return 0


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, subparsers = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            _apply_config(args, subparsers, argv)
        _require(args, parser)
        _echo_config(args)
        return args.func(args)
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValidationError, EmptyVoicedError, TooShortError,
            MissingSpeakerError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DegenerateDataError, ConvergenceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Trial generation, per-condition breakdowns, and the end-to-end
evaluation pipeline.

A scenario compares recordings of a *known* speaker against *unknown*
recordings. In pairwise mode every known chunk meets every unknown chunk;
in enrollment mode each speaker's session-1 chunks are averaged into one
enrollment vector that meets every unknown chunk. Evaluation trials always
pit session 1 against session 2 (same-session pairs share channel and
recording conditions, which would leak into the scores); calibration
trials may use all within-split pairs for sample efficiency. Session-3
material is accepted by validation but never enters trials.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import metrics
from .audio import is_augmented_id
from .calibration import (CalibrationModel, fit_calibration, log10_lrs,
                          save_calibration, score_trials)
from .core import (Manifest, ScoredTrial, Trial, assert_disjoint_speakers,
                   enroll_ref, label_trial, read_manifest, scores_and_labels,
                   validate_manifest, write_scores, write_trials)
from .embeddings import EmbeddingSet, EnrollmentVector, enroll, ingest
from .errors import ValidationError

log = logging.getLogger(__name__)

MODES = ("pairwise", "enrollment")
BREAKDOWN_AXES = ("duration", "task")
TRIAL_SESSIONS = (1, 2)
ENROLLED_KEY = "enrolled"

DURATION_KEYS = tuple(range(2, 11))
TASK_KEYS = (1, 2, 3)
# a chunk must sit this close to a whole-second protocol duration to get a
# duration key; time-scaled variants (x0.95 / x1.05) fall outside on purpose
DURATION_KEY_TOL = 0.05


@dataclass
class TrialSet:
    trials: list[Trial]
    exclusions: list[str] = field(default_factory=list)


def _protocol_rows(manifest: Manifest, include_augmented: bool):
    rows = [r for r in manifest.recordings if r.session in TRIAL_SESSIONS]
    if not include_augmented:
        rows = [r for r in rows if not is_augmented_id(r.recording_id)]
    return rows


def generate_trials(manifest: Manifest, embeddings: EmbeddingSet | None,
                    mode: str, all_sessions: bool = False,
                    include_augmented: bool = False) -> TrialSet:
    """Build the labeled trial list for one speaker split.

    pairwise: ordered (known chunk, unknown chunk) pairs; with all_sessions
    False the known side is session 1 and the unknown side session 2,
    otherwise every ordered pair of distinct chunks counts. enrollment:
    (speaker enrollment, session-2 chunk) pairs. Speakers that cannot
    appear on some side are reported in the exclusion list, and whatever
    side they can fill stays in. When an embedding set is given, every
    chunk reference is checked against it and all misses are reported in
    one error.
    """
    if mode not in MODES:
        raise ValueError(f"mode {mode!r} not one of {MODES}")
    rows = _protocol_rows(manifest, include_augmented)
    exclusions: list[str] = []
    speakers = sorted({r.speaker_id for r in manifest.recordings})
    by_session = {s: [r for r in rows if r.session == s]
                  for s in TRIAL_SESSIONS}

    for spk in speakers:
        has = {s: any(r.speaker_id == spk for r in by_session[s])
               for s in TRIAL_SESSIONS}
        if all_sessions and mode == "pairwise":
            if not any(has.values()):
                exclusions.append(f"{spk}: no session-1/2 samples")
        else:
            for s in TRIAL_SESSIONS:
                if not has[s]:
                    exclusions.append(f"{spk}: no session-{s} samples")
    for line in exclusions:
        log.warning("trial generation: %s", line)

    trials: list[Trial] = []
    if mode == "pairwise":
        if all_sessions:
            knowns = unknowns = rows
        else:
            knowns, unknowns = by_session[1], by_session[2]
        for k in knowns:
            for u in unknowns:
                if k.recording_id == u.recording_id:
                    continue
                trials.append(Trial(k.recording_id, u.recording_id,
                                    label_trial(k.speaker_id, u.speaker_id)))
    else:
        enrolled = sorted({r.speaker_id for r in by_session[1]})
        for spk in enrolled:
            for u in by_session[2]:
                trials.append(Trial(enroll_ref(spk), u.recording_id,
                                    label_trial(spk, u.speaker_id)))

    if embeddings is not None:
        missing = sorted({t.unknown_ref for t in trials
                          if t.unknown_ref not in embeddings.index}
                         | {t.known_ref for t in trials
                            if mode == "pairwise"
                            and t.known_ref not in embeddings.index})
        if missing:
            raise ValidationError(
                f"{len(missing)} manifest chunks have no embedding: "
                f"{', '.join(missing[:20])}"
                + (" ..." if len(missing) > 20 else ""))
    return TrialSet(trials, exclusions)


# ---------------------------------------------------------------------------
# per-condition breakdowns


@dataclass
class BreakdownMatrix:
    axis: str
    mode: str
    row_keys: list
    col_keys: list
    cells: dict  # (row_key, col_key) -> {n_so, n_do, eer, cllr_min} or None
    n_assigned: int  # trials with complete metadata on both sides
    n_skipped: int

    def to_json_dict(self) -> dict:
        grid = [[self.cells[(rk, ck)] for ck in self.col_keys]
                for rk in self.row_keys]
        return {"axis": self.axis, "mode": self.mode,
                "row_keys": list(self.row_keys),
                "col_keys": list(self.col_keys), "cells": grid,
                "n_assigned": self.n_assigned, "n_skipped": self.n_skipped}


def _duration_key(duration_s: float):
    k = int(round(duration_s))
    if k in DURATION_KEYS and abs(duration_s - k) <= DURATION_KEY_TOL:
        return k
    return None


def _sample_key(record, axis: str):
    if axis == "duration":
        return _duration_key(record.duration_s)
    return record.task if record.task in TASK_KEYS else None


def breakdown(scored: list[ScoredTrial], embeddings: EmbeddingSet, axis: str,
              mode: str, min_cell_so: int = 5, min_cell_do: int = 20,
              ) -> BreakdownMatrix:
    """Per-cell EER and Cllr_min over known-condition x unknown-condition.

    Cells with fewer than min_cell_so same-origin or min_cell_do
    different-origin trials are reported as absent (None) rather than as
    unstable numbers. Trials whose refs lack usable metadata (unknown
    duration class, missing record) are skipped and counted in n_skipped.
    Every trial with complete metadata lands in exactly one cell.
    """
    if axis not in BREAKDOWN_AXES:
        raise ValueError(f"axis {axis!r} not one of {BREAKDOWN_AXES}")
    if mode not in MODES:
        raise ValueError(f"mode {mode!r} not one of {MODES}")
    col_keys = list(DURATION_KEYS if axis == "duration" else TASK_KEYS)
    row_keys = [ENROLLED_KEY] if mode == "enrollment" else list(col_keys)

    def key_of(ref: str):
        r = embeddings.index.get(ref)
        return None if r is None else _sample_key(r, axis)

    groups: dict[tuple, list[ScoredTrial]] = {}
    n_skipped = 0
    for t in scored:
        rk = ENROLLED_KEY if mode == "enrollment" else key_of(t.known_ref)
        ck = key_of(t.unknown_ref)
        if rk is None or ck is None:
            n_skipped += 1
            continue
        groups.setdefault((rk, ck), []).append(t)

    cells: dict[tuple, dict | None] = {}
    n_assigned = 0
    for rk in row_keys:
        for ck in col_keys:
            cell_trials = groups.get((rk, ck), [])
            n_assigned += len(cell_trials)
            scores, labels = scores_and_labels(cell_trials)
            n_so = int(np.sum(labels == 1))
            n_do = int(np.sum(labels == 0))
            if n_so < max(1, min_cell_so) or n_do < max(1, min_cell_do):
                cells[(rk, ck)] = None
                continue
            cells[(rk, ck)] = {
                "n_so": n_so, "n_do": n_do,
                "eer": metrics.eer(scores, labels),
                "cllr_min": metrics.cllr_min(scores, labels),
            }
    return BreakdownMatrix(axis, mode, row_keys, col_keys, cells,
                           n_assigned, n_skipped)


def write_matrix_csv(matrix: BreakdownMatrix, metric: str, path) -> None:
    """One metric of a breakdown as CSV with row/column headers."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("known\\unknown," + ",".join(str(c) for c in matrix.col_keys)
                + "\n")
        for rk in matrix.row_keys:
            vals = []
            for ck in matrix.col_keys:
                cell = matrix.cells[(rk, ck)]
                vals.append("" if cell is None else repr(float(cell[metric])))
            f.write(f"{rk}," + ",".join(vals) + "\n")


# ---------------------------------------------------------------------------
# the end-to-end pipeline


@dataclass
class ScenarioConfig:
    mode: str
    calibration_manifest: Path
    evaluation_manifest: Path
    embeddings: tuple
    out_dir: Path
    breakdowns: tuple = ("duration", "task")
    min_cell_so: int = 5
    min_cell_do: int = 20
    calibration_all_sessions: bool = True
    weighting: str = "equal-prior"
    l2: float = 0.0
    clip: float = 1e-15
    tippet_step: float = 0.01

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode {self.mode!r} not one of {MODES}")
        for axis in self.breakdowns:
            if axis not in BREAKDOWN_AXES:
                raise ValueError(f"breakdown axis {axis!r} not one of "
                                 f"{BREAKDOWN_AXES}")


@dataclass
class EvaluationReport:
    mode: str
    n_trials: int
    n_same: int
    n_diff: int
    eer: float
    cllr: float
    cllr_min: float
    cllr_cal: float
    model: CalibrationModel
    clip: float
    tippet: metrics.TippetCurve
    matrices: dict
    exclusions: dict
    files: dict

    def to_json_dict(self, timestamp: str) -> dict:
        return {
            "mode": self.mode,
            "global": {"n_trials": self.n_trials, "n_same": self.n_same,
                       "n_diff": self.n_diff, "eer": self.eer,
                       "cllr": self.cllr, "cllr_min": self.cllr_min,
                       "cllr_cal": self.cllr_cal},
            "calibration": {"weight": self.model.weight,
                            "bias": self.model.bias,
                            "n_same": self.model.n_same,
                            "n_diff": self.model.n_diff,
                            "weighting": self.model.weighting,
                            "l2": self.model.l2, "clip": self.clip},
            "matrices": {axis: m.to_json_dict()
                         for axis, m in self.matrices.items()},
            "exclusions": self.exclusions,
            "files": self.files,
            # the timestamp is the single non-deterministic field, kept in
            # its own block so everything above can be byte-compared
            "meta": {"timestamp": timestamp},
        }


def _split_enrollments(manifest: Manifest, embeddings: EmbeddingSet,
                       ) -> dict[str, EnrollmentVector]:
    """Session-1 enrollments restricted to one manifest's own chunks."""
    s1_ids = {r.recording_id for r in manifest.recordings
              if r.session == 1 and not is_augmented_id(r.recording_id)}
    out: dict[str, EnrollmentVector] = {}
    for spk in sorted({r.speaker_id for r in manifest.recordings}):
        picked = [r for r in embeddings.records
                  if r.speaker_id == spk and r.sample_id in s1_ids]
        if not picked:
            continue
        vec = np.mean([r.vector for r in picked], axis=0)
        out[spk] = EnrollmentVector(spk, vec, len(picked),
                                    float(sum(r.duration_s for r in picked)))
    return out


def _scenario_scores(manifest: Manifest, embeddings: EmbeddingSet, mode: str,
                     all_sessions: bool) -> tuple[list[ScoredTrial], list[str]]:
    trial_set = generate_trials(manifest, embeddings, mode,
                                all_sessions=all_sessions)
    if not trial_set.trials:
        raise ValidationError(f"empty trial set for {manifest.role!r} split")
    enrollments = (_split_enrollments(manifest, embeddings)
                   if mode == "enrollment" else None)
    scored = score_trials(trial_set.trials, embeddings, enrollments)
    return scored, trial_set.exclusions


def run_pipeline(config: ScenarioConfig) -> EvaluationReport:
    """Calibrate on one split, evaluate on the other, write all artifacts.

    Outputs land in config.out_dir: scores.csv (evaluation trials),
    calibration_scores.csv, calibration.json, tippet.csv, one CSV per
    breakdown axis and metric, and report.json. The report content is a
    deterministic function of the inputs apart from meta.timestamp.
    """
    cal_manifest = read_manifest(config.calibration_manifest)
    eval_manifest = read_manifest(config.evaluation_manifest)
    for m, p in ((cal_manifest, config.calibration_manifest),
                 (eval_manifest, config.evaluation_manifest)):
        violations = validate_manifest(m)
        if violations:
            raise ValidationError(f"{p}: " + "; ".join(violations[:10]))
    if cal_manifest.role != "calibration":
        log.warning("calibration manifest has role %r", cal_manifest.role)
    if eval_manifest.role != "evaluation":
        log.warning("evaluation manifest has role %r", eval_manifest.role)
    assert_disjoint_speakers(cal_manifest, eval_manifest)

    embeddings = ingest(list(config.embeddings))

    cal_scored, cal_excl = _scenario_scores(
        cal_manifest, embeddings, config.mode,
        all_sessions=(config.mode == "pairwise"
                      and config.calibration_all_sessions))
    model = fit_calibration(cal_scored, weighting=config.weighting,
                            l2=config.l2)
    log.info("calibration: weight=%.6g bias=%.6g clip=%g",
             model.weight, model.bias, config.clip)

    eval_scored, eval_excl = _scenario_scores(eval_manifest, embeddings,
                                              config.mode, all_sessions=False)
    scores, labels = scores_and_labels(eval_scored)
    if not (np.any(labels == 1) and np.any(labels == 0)):
        raise ValidationError("evaluation trials must include both labels")

    llr = log10_lrs(model, scores, config.clip)
    labeled = metrics.LabeledLogLRs(llr[labels == 1], llr[labels == 0])
    cllr = metrics.cllr(labeled)
    cllr_min = metrics.cllr_min(scores, labels)
    eer = metrics.eer(scores, labels)
    curve = metrics.tippet(labeled, step=config.tippet_step)

    matrices = {axis: breakdown(eval_scored, embeddings, axis, config.mode,
                                config.min_cell_so, config.min_cell_do)
                for axis in config.breakdowns}

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"scores": "scores.csv",
             "calibration_scores": "calibration_scores.csv",
             "calibration_model": "calibration.json",
             "tippet": "tippet.csv",
             "matrices": {}}
    write_scores(eval_scored, out / files["scores"])
    write_scores(cal_scored, out / files["calibration_scores"])
    save_calibration(model, out / files["calibration_model"])
    metrics.write_tippet_csv(curve, out / files["tippet"])
    for axis, m in matrices.items():
        files["matrices"][axis] = {}
        for metric_name in ("eer", "cllr_min"):
            name = f"matrix_{axis}_{metric_name}.csv"
            write_matrix_csv(m, metric_name, out / name)
            files["matrices"][axis][metric_name] = name

    report = EvaluationReport(
        mode=config.mode, n_trials=len(eval_scored),
        n_same=int(np.sum(labels == 1)), n_diff=int(np.sum(labels == 0)),
        eer=eer, cllr=cllr, cllr_min=cllr_min, cllr_cal=cllr - cllr_min,
        model=model, clip=config.clip, tippet=curve, matrices=matrices,
        exclusions={"calibration": cal_excl, "evaluation": eval_excl},
        files=files)

    stamp = datetime.now(timezone.utc).isoformat()
    with open(out / "report.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(report.to_json_dict(stamp), f, indent=2)
        f.write("\n")
    return report

"""Cosine scoring and logistic likelihood-ratio calibration.

Calibration maps a raw comparison score s to a posterior probability of
same origin through a two-parameter logistic model sigma(w*s + b). With
equal-prior class weighting (the default) the posterior corresponds to
even prior odds, so the likelihood ratio is simply the posterior odds
p / (1 - p).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import (ENROLL_PREFIX, ScoredTrial, Trial, is_enroll_ref,
                   scores_and_labels)
from .embeddings import EmbeddingSet, EnrollmentVector
from .errors import (ConvergenceError, DegenerateDataError, FormatError,
                     ValidationError)

WEIGHTINGS = ("equal-prior", "unweighted")


def cosine_score(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; zero-norm input is an error."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for zero-norm vectors")
    return float(np.dot(a, b) / (na * nb))


def score_trials(trials: list[Trial], embeddings: EmbeddingSet,
                 enrollments: dict[str, EnrollmentVector] | None = None,
                 ) -> list[ScoredTrial]:
    """Cosine-score every trial, preserving order.

    known_ref resolves against the enrollment map first (bare speaker id or
    'enroll:<speaker>' form), then against sample ids; unknown_ref must be a
    sample id. All unresolvable refs are collected and reported in one
    ValidationError.
    """
    enrollments = enrollments or {}

    def known_vec(ref: str):
        if is_enroll_ref(ref):
            e = enrollments.get(ref[len(ENROLL_PREFIX):])
            return e.vector if e is not None else None
        if ref in enrollments:
            return enrollments[ref].vector
        r = embeddings.index.get(ref)
        return r.vector if r is not None else None

    missing: list[str] = []
    known_rows = []
    unknown_rows = []
    for t in trials:
        kv = known_vec(t.known_ref)
        if kv is None:
            missing.append(t.known_ref)
        ur = embeddings.index.get(t.unknown_ref)
        if ur is None:
            missing.append(t.unknown_ref)
        if kv is not None and ur is not None:
            known_rows.append(kv)
            unknown_rows.append(ur.vector)
    if missing:
        uniq = sorted(set(missing))
        raise ValidationError(f"{len(uniq)} unresolvable trial refs: "
                              f"{', '.join(uniq[:20])}"
                              + (" ..." if len(uniq) > 20 else ""))
    if not trials:
        return []

    known = np.asarray(known_rows)
    unknown = np.asarray(unknown_rows)
    nk = np.linalg.norm(known, axis=1)
    nu = np.linalg.norm(unknown, axis=1)
    if np.any(nk == 0.0) or np.any(nu == 0.0):
        raise ValueError("cosine similarity is undefined for zero-norm vectors")
    scores = np.sum(known * unknown, axis=1) / (nk * nu)
    return [ScoredTrial(t.known_ref, t.unknown_ref, t.label, float(s))
            for t, s in zip(trials, scores)]


# ---------------------------------------------------------------------------
# logistic calibration


@dataclass
class CalibrationModel:
    weight: float
    bias: float
    n_same: int
    n_diff: int
    weighting: str
    l2: float


def save_calibration(model: CalibrationModel, path) -> None:
    obj = {"weight": model.weight, "bias": model.bias,
           "n_same": model.n_same, "n_diff": model.n_diff,
           "weighting": model.weighting, "l2": model.l2}
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def load_calibration(path) -> CalibrationModel:
    with open(path, encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON ({e})") from e
    try:
        return CalibrationModel(float(obj["weight"]), float(obj["bias"]),
                                int(obj["n_same"]), int(obj["n_diff"]),
                                str(obj["weighting"]), float(obj["l2"]))
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: bad calibration model ({e})") from e


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # exp(-logaddexp(0, -z)) is sigma(z) without overflow at either tail
    return np.exp(-np.logaddexp(0.0, -z))


def fit_calibration(scored: list[ScoredTrial] | tuple,
                    weighting: str = "equal-prior", l2: float = 0.0,
                    max_iter: int = 200, tol: float = 1e-8,
                    ) -> CalibrationModel:
    """Fit sigma(w*s + b) by damped Newton on the weighted cross-entropy.

    weighting 'equal-prior' gives each class a total weight of 1/2, so the
    fitted posterior sits at even prior odds regardless of the class mix in
    the trial list; 'unweighted' sums plain per-trial losses. The l2
    penalty 0.5*l2*w**2 applies to the weight only, never the bias
    ('unweighted' with l2=1.0 reproduces the common library default for
    regularized logistic regression). The objective is strictly convex for
    l2 > 0 and convex otherwise, and the fit is deterministic: the same
    trials yield bit-identical parameters.
    """
    if isinstance(scored, tuple):
        scores, labels = scored
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
    else:
        scores, labels = scores_and_labels(scored)
    if weighting not in WEIGHTINGS:
        raise ValueError(f"weighting {weighting!r} not one of {WEIGHTINGS}")
    if l2 < 0:
        raise ValueError(f"l2 must be non-negative ({l2})")
    if max_iter < 1:
        raise ValueError(f"max_iter must be at least 1 ({max_iter})")
    n_so = int(np.sum(labels == 1))
    n_do = int(np.sum(labels == 0))
    if n_so == 0 or n_do == 0:
        raise DegenerateDataError(f"need both classes to calibrate "
                                  f"(same={n_so}, diff={n_do})")
    if np.all(scores == scores[0]):
        raise DegenerateDataError("all scores identical: weight is "
                                  "unidentifiable")

    y = labels.astype(np.float64)
    if weighting == "equal-prior":
        w_obs = np.where(y == 1.0, 0.5 / n_so, 0.5 / n_do)
    else:
        w_obs = np.ones_like(y)

    def objective(w, b):
        z = w * scores + b
        ce = np.logaddexp(0.0, z) - y * z
        return float(np.sum(w_obs * ce)) + 0.5 * l2 * w * w

    w, b = 0.0, 0.0
    j = objective(w, b)
    for _ in range(max_iter):
        z = w * scores + b
        p = _sigmoid(z)
        r = w_obs * (p - y)
        g_w = float(np.sum(r * scores)) + l2 * w
        g_b = float(np.sum(r))
        if max(abs(g_w), abs(g_b)) <= tol:
            return CalibrationModel(float(w), float(b), n_so, n_do,
                                    weighting, float(l2))
        d = w_obs * p * (1.0 - p)
        h_ww = float(np.sum(d * scores * scores)) + l2
        h_wb = float(np.sum(d * scores))
        h_bb = float(np.sum(d))
        hess = np.array([[h_ww, h_wb], [h_wb, h_bb]])
        grad = np.array([g_w, g_b])
        bump = 0.0
        while True:
            try:
                step = np.linalg.solve(hess + bump * np.eye(2), -grad)
                if np.all(np.isfinite(step)):
                    break
            except np.linalg.LinAlgError:
                pass
            bump = max(bump * 10.0, 1e-12 * max(h_ww + h_bb, 1.0))
        # backtracking line search (Armijo)
        slope = float(grad @ step)
        alpha = 1.0
        while alpha >= 1e-12:
            j_new = objective(w + alpha * step[0], b + alpha * step[1])
            if j_new <= j + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
        else:
            raise ConvergenceError(f"line search stalled at |grad|="
                                   f"{max(abs(g_w), abs(g_b)):.3e}")
        w += alpha * step[0]
        b += alpha * step[1]
        j = j_new
    raise ConvergenceError(f"no convergence in {max_iter} iterations "
                           f"(|grad|={max(abs(g_w), abs(g_b)):.3e})")


def posterior(model: CalibrationModel, scores, clip: float = 1e-15):
    """Calibrated same-origin posterior, clipped into [clip, 1 - clip].

    The clip keeps downstream likelihood ratios finite; it bounds |log10 LR|
    by roughly -log10(clip). Accepts a scalar or an array.
    """
    if not 0.0 < clip < 0.5:
        raise ValueError(f"clip must be in (0, 0.5) ({clip})")
    z = model.weight * np.asarray(scores, dtype=np.float64) + model.bias
    p = np.clip(_sigmoid(z), clip, 1.0 - clip)
    return float(p) if p.ndim == 0 else p


@dataclass(frozen=True)
class LikelihoodRatio:
    lr: float
    log10_lr: float


def to_lr(p: float) -> LikelihoodRatio:
    """Posterior odds p/(1-p) as a likelihood ratio at even prior odds."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"posterior must lie strictly inside (0, 1) ({p})")
    lr = p / (1.0 - p)
    return LikelihoodRatio(lr, math.log10(lr))


def log10_lrs(model: CalibrationModel, scores, clip: float = 1e-15) -> np.ndarray:
    """Vectorized log10 LR of calibrated scores."""
    p = np.atleast_1d(posterior(model, scores, clip))
    return (np.log(p) - np.log1p(-p)) / math.log(10.0)

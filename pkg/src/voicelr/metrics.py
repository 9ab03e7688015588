"""Discrimination and calibration metrics for likelihood-ratio systems.

Cllr is the proper-scoring-rule cost of a set of LRs at even prior odds,

    Cllr = 0.5 * [ mean_i log2(1 + 1/LR_so_i) + mean_j log2(1 + LR_do_j) ]

where LR_so are same-origin trials and LR_do different-origin trials. A
useless system that always answers LR = 1 costs exactly 1 bit. Cllr_min is
the cost after the best order-preserving recalibration of the scores
(pool-adjacent-violators), and Cllr_cal = Cllr - Cllr_min is the part a
better calibration could have removed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

LN2 = np.log(2.0)
LN10 = np.log(10.0)


@dataclass
class LabeledLogLRs:
    """log10 LRs split by trial label."""

    so: np.ndarray  # same-origin
    do: np.ndarray  # different-origin

    def __post_init__(self):
        self.so = np.asarray(self.so, dtype=np.float64)
        self.do = np.asarray(self.do, dtype=np.float64)
        if self.so.size == 0 or self.do.size == 0:
            raise ValidationError("need at least one trial of each label")
        if not (np.all(np.isfinite(self.so)) and np.all(np.isfinite(self.do))):
            raise ValidationError("log10 LRs must be finite")


def cllr(llrs: LabeledLogLRs) -> float:
    """Log-likelihood-ratio cost in bits, evaluated at even prior odds."""
    return _cllr_from_ln(llrs.so * LN10, llrs.do * LN10)


def _cllr_from_ln(ln_so: np.ndarray, ln_do: np.ndarray) -> float:
    # log2(1 + 1/LR) = logaddexp(0, -ln LR) / ln 2; the logaddexp form is
    # exact in the limits ln LR -> +/- inf, which PAV posteriors can reach.
    so_cost = np.logaddexp(0.0, -ln_so) / LN2
    do_cost = np.logaddexp(0.0, ln_do) / LN2
    return 0.5 * (float(np.mean(so_cost)) + float(np.mean(do_cost)))


def _check_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or labels.shape != scores.shape:
        raise ValueError("scores and labels must be flat arrays of equal length")
    if scores.size == 0:
        raise ValueError("empty score set")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    labels = labels.astype(np.int64)
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    return scores, labels


def pav(scores, labels) -> np.ndarray:
    """Isotonic (non-decreasing) least-squares fit of labels against scores.

    Classic pool-adjacent-violators: sort by score, pool exact score ties,
    then merge neighbouring blocks while any block mean exceeds the mean of
    its successor. Returns the fitted posterior for each input trial, in the
    original input order. Tied scores always share one fitted value.
    """
    scores, labels = _check_scores_labels(scores, labels)
    order = np.argsort(scores, kind="mergesort")
    s_sorted = scores[order]
    y_sorted = labels[order].astype(np.float64)

    # pre-pool exact ties so equal scores cannot straddle a block boundary
    boundaries = np.flatnonzero(np.diff(s_sorted) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(s_sorted)]))

    # stack of blocks as (sum, weight); merge while monotonicity is violated
    sums: list[float] = []
    weights: list[float] = []
    sizes: list[int] = []
    for a, b in zip(starts, ends):
        s, w, n = float(np.sum(y_sorted[a:b])), float(b - a), int(b - a)
        while sums and sums[-1] * w > s * weights[-1]:  # prev mean > new mean
            s += sums.pop()
            w += weights.pop()
            n += sizes.pop()
        sums.append(s)
        weights.append(w)
        sizes.append(n)

    fitted_sorted = np.repeat(np.array(sums) / np.array(weights),
                              np.array(sizes))
    fitted = np.empty_like(fitted_sorted)
    fitted[order] = fitted_sorted
    return fitted


def cllr_min(scores, labels) -> float:
    """Cllr after the optimal order-preserving recalibration of the scores.

    The PAV posteriors are converted to LRs by dividing out the empirical
    prior odds N_so/N_do of the trial set; blocks that are purely one class
    give LR = 0 or LR = inf, which contribute zero cost on their own side.
    """
    scores, labels = _check_scores_labels(scores, labels)
    n_so = int(np.sum(labels == 1))
    n_do = int(np.sum(labels == 0))
    if n_so == 0 or n_do == 0:
        raise ValueError("need at least one trial of each class")
    p = pav(scores, labels)
    with np.errstate(divide="ignore"):
        ln_lr = np.log(p) - np.log1p(-p) - np.log(n_so / n_do)
    return _cllr_from_ln(ln_lr[labels == 1], ln_lr[labels == 0])


def eer(scores, labels) -> float:
    """Equal error rate of an accept-if-score>=threshold detector.

    Sweeps every observed score as a threshold (plus one above the maximum),
    tracking FAR = P(different-origin >= t) and FRR = P(same-origin < t).
    FAR - FRR starts at +1 and ends at -1; if it hits zero exactly at an
    operating point that point is the EER, otherwise the EER is linearly
    interpolated on the segment between the two operating points that
    bracket the sign change. Interpolating between operating points (rather
    than between thresholds) keeps the value invariant under strictly
    increasing score transforms.
    """
    scores, labels = _check_scores_labels(scores, labels)
    tar = np.sort(scores[labels == 1])
    non = np.sort(scores[labels == 0])
    if tar.size == 0 or non.size == 0:
        raise ValueError("need at least one trial of each class")

    thresholds = np.unique(scores)
    far = (non.size - np.searchsorted(non, thresholds, side="left")) / non.size
    frr = np.searchsorted(tar, thresholds, side="left") / tar.size
    # sentinel above the maximum score: accept nothing
    far = np.append(far, 0.0)
    frr = np.append(frr, 1.0)

    diff = far - frr
    idx = int(np.argmax(diff <= 0.0))
    if diff[idx] == 0.0:
        return float(far[idx])
    # interpolate on the segment between operating points idx-1 and idx
    t = diff[idx - 1] / (diff[idx - 1] - diff[idx])
    return float(far[idx - 1] + t * (far[idx] - far[idx - 1]))


@dataclass
class TippetCurve:
    """Cumulative LR exceedance curves for both trial classes."""

    thresholds: np.ndarray  # log10 LR grid
    p_so_ge: np.ndarray     # P(same-origin log10 LR >= t)
    p_do_ge: np.ndarray     # P(different-origin log10 LR >= t)


def tippet(llrs: LabeledLogLRs, step: float = 0.01,
           lo: float | None = None, hi: float | None = None) -> TippetCurve:
    """Exceedance curves on a regular log10-LR grid.

    The default grid spans [min - 0.5, max + 0.5] over both classes.
    """
    if not step > 0:
        raise ValueError(f"step must be positive ({step})")
    if lo is None:
        lo = float(min(llrs.so.min(), llrs.do.min())) - 0.5
    if hi is None:
        hi = float(max(llrs.so.max(), llrs.do.max())) + 0.5
    if hi < lo:
        raise ValueError("empty threshold grid")
    thresholds = lo + step * np.arange(int(np.floor((hi - lo) / step)) + 1)
    so = np.sort(llrs.so)
    do = np.sort(llrs.do)
    p_so = (so.size - np.searchsorted(so, thresholds, side="left")) / so.size
    p_do = (do.size - np.searchsorted(do, thresholds, side="left")) / do.size
    return TippetCurve(thresholds, p_so, p_do)


def write_tippet_csv(curve: TippetCurve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("threshold_log10lr,p_so_ge,p_do_ge\n")
        for t, a, b in zip(curve.thresholds, curve.p_so_ge, curve.p_do_ge):
            f.write(f"{repr(float(t))},{repr(float(a))},{repr(float(b))}\n")

"""Uncertainty scores, calibration error, and risk-rejection analysis.

Both downstream tasks share one computation: rank items by an uncertainty
score, reject the top k, and measure the residual risk (misclassification
rate for selective classification, OOD fraction for detection). The area
under that curve, averaged over every rejection count, is the headline
number; the oracle lower bound scores flagged items as maximally uncertain
and is the best any score could do on the same flags.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

SCORE_ENTROPY = "entropy"
SCORE_MAXP = "maxp"
SCORES = (SCORE_ENTROPY, SCORE_MAXP)


def _check_distribution(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or len(p) == 0:
        raise ValueError("expected a 1-D probability vector")
    if (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"not a probability vector (sum {p.sum()})")
    return p


def entropy_score(distribution: np.ndarray) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = _check_distribution(distribution)
    nonzero = p[p > 0]
    return float(-(nonzero * np.log(nonzero)).sum())


def maxp_uncertainty(distribution: np.ndarray) -> float:
    """1 - max class probability, so higher always means more uncertain."""
    p = _check_distribution(distribution)
    return float(1.0 - p.max())


def score_rows(probs: np.ndarray, score: str) -> np.ndarray:
    """Per-row uncertainty under the chosen score."""
    if score == SCORE_ENTROPY:
        return np.array([entropy_score(row) for row in probs])
    if score == SCORE_MAXP:
        return np.array([maxp_uncertainty(row) for row in probs])
    raise ValueError(f"unknown score {score!r}")


def ece(probs: np.ndarray, labels: np.ndarray, bin_count: int = 10) -> float:
    """Expected calibration error over equal-width max-probability bins.

    Confidence exactly 1.0 falls in the top bin; empty bins contribute zero.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.asarray(labels)
    if len(probs) != len(labels):
        raise ValueError("need one label per probability row")
    if bin_count < 1:
        raise ValueError("bin_count must be positive")
    confidence = probs.max(axis=1)
    correct = (np.argmax(probs, axis=1) == labels)
    bins = np.minimum((confidence * bin_count).astype(int), bin_count - 1)
    total = len(labels)
    value = 0.0
    for b in range(bin_count):
        members = bins == b
        count = int(members.sum())
        if count == 0:
            continue
        value += (count / total) * abs(correct[members].mean()
                                       - confidence[members].mean())
    return float(value)


@dataclass(frozen=True)
class RiskRejectionCurve:
    """risks[k] is the residual risk after rejecting the k most-uncertain items."""

    risks: np.ndarray
    aurrrc: float

    def __len__(self) -> int:
        return len(self.risks)


def risk_rejection_curve(uncertainties: np.ndarray,
                         flags: np.ndarray) -> RiskRejectionCurve:
    """Sort descending by uncertainty (ties by original index) and sweep k.

    ``flags`` marks the bad items: misclassified, or OOD. The curve value at
    k is the bad fraction among the kept items; the area is the mean over
    k = 0 .. M-1 (risk at k = M would be 0/0).
    """
    uncertainties = np.asarray(uncertainties, dtype=float)
    flags = np.asarray(flags, dtype=bool)
    m = len(flags)
    if m == 0 or len(uncertainties) != m:
        raise ValueError("need equally many nonempty uncertainties and flags")
    order = np.lexsort((np.arange(m), -uncertainties))
    kept_bad = np.cumsum(flags[order][::-1])[::-1]  # bad count among items k..M-1
    kept_total = m - np.arange(m)
    risks = kept_bad / kept_total
    return RiskRejectionCurve(risks, float(risks.mean()))


def oracle_lower_bound(flags: np.ndarray) -> float:
    """Minimum achievable area: flagged items scored 100, the rest 0."""
    flags = np.asarray(flags, dtype=bool)
    if len(flags) == 0:
        raise ValueError("flags must be nonempty")
    return risk_rejection_curve(np.where(flags, 100.0, 0.0), flags).aurrrc


@dataclass(frozen=True)
class SelectiveReport:
    curve: RiskRejectionCurve
    aurrrc: float
    lower_bound: float
    accuracy: float
    ece: float


def selective_classification_eval(probs: np.ndarray, labels: np.ndarray,
                                  score: str = SCORE_ENTROPY,
                                  ece_bins: int = 10) -> SelectiveReport:
    """Flags are misclassifications of the argmax prediction."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    labels = np.asarray(labels)
    if len(probs) != len(labels):
        raise ValueError("need one label per probability row")
    flags = np.argmax(probs, axis=1) != labels
    curve = risk_rejection_curve(score_rows(probs, score), flags)
    return SelectiveReport(curve=curve, aurrrc=curve.aurrrc,
                           lower_bound=oracle_lower_bound(flags),
                           accuracy=float(1.0 - flags.mean()),
                           ece=ece(probs, labels, ece_bins))


@dataclass(frozen=True)
class OodReport:
    curve: RiskRejectionCurve
    aurrrc: float
    lower_bound: float


def ood_detection_eval(id_probs: np.ndarray, ood_probs: np.ndarray,
                       score: str = SCORE_ENTROPY) -> OodReport:
    """Flags are OOD membership; rows are concatenated ID first for tie-breaks."""
    id_probs = np.atleast_2d(np.asarray(id_probs, dtype=float))
    ood_probs = np.atleast_2d(np.asarray(ood_probs, dtype=float))
    if id_probs.shape[1] != ood_probs.shape[1]:
        raise ValueError("ID and OOD tables must have the same class count")
    stacked = np.vstack([id_probs, ood_probs])
    flags = np.concatenate([np.zeros(len(id_probs), dtype=bool),
                            np.ones(len(ood_probs), dtype=bool)])
    curve = risk_rejection_curve(score_rows(stacked, score), flags)
    return OodReport(curve=curve, aurrrc=curve.aurrrc,
                     lower_bound=oracle_lower_bound(flags))


def save_curve_csv(curve: RiskRejectionCurve, path) -> None:
    m = len(curve)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "rejection_rate", "risk"])
        for k, risk in enumerate(curve.risks):
            writer.writerow([k, repr(k / m), repr(float(risk))])


def save_summary_json(summary: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

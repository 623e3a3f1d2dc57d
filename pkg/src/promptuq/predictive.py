"""Posterior predictive class distributions from a weighted sample set.

Two routes, matching the two access regimes: average the simulator's
probability vectors over the samples, or count decoded labels per class when
probabilities are hidden. Uniform weights give the plain Monte-Carlo
average; general weights let importance-weighted sample sets be evaluated.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .blackbox import DECODE_ARGMAX, MODE_LABELS, MODE_LOGITS
from .estimators import PosteriorEnsemble


@dataclass(frozen=True)
class PredictiveTable:
    """One class-probability row per input."""

    probs: np.ndarray  # (n_inputs, classes)
    mode: str
    sample_count: int

    def __post_init__(self):
        if self.probs.ndim != 2 or len(self.probs) == 0:
            raise ValueError("need a nonempty 2-D probability table")
        if (self.probs < 0).any():
            raise ValueError("probabilities must be nonnegative")
        sums = self.probs.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-9:
            raise ValueError("rows must sum to 1 within 1e-9")

    @property
    def classes(self) -> int:
        return self.probs.shape[1]

    def predicted(self) -> np.ndarray:
        """Argmax class per row, ties to the lowest index."""
        return np.argmax(self.probs, axis=1)


def predictive_from_logits(ensemble: PosteriorEnsemble, sim,
                           inputs: np.ndarray) -> PredictiveTable:
    """Weighted average of per-sample probability vectors."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    rows = np.zeros((len(inputs), sim.classes))
    for w, z in zip(ensemble.weights, ensemble.samples):
        rows += w * sim.query_logits(z, inputs)
    return PredictiveTable(rows, MODE_LOGITS, ensemble.size)


def predictive_from_labels(ensemble: PosteriorEnsemble, sim, inputs: np.ndarray,
                           decode: str = DECODE_ARGMAX,
                           rng: np.random.Generator | None = None) -> PredictiveTable:
    """Weighted per-class frequency of decoded labels; never touches probabilities."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    rows = np.zeros((len(inputs), sim.classes))
    positions = np.arange(len(inputs))
    for w, z in zip(ensemble.weights, ensemble.samples):
        labels = sim.query_labels(z, inputs, decode=decode, rng=rng)
        rows[positions, labels] += w
    return PredictiveTable(rows, MODE_LABELS, ensemble.size)


def save_predictive_csv(table: PredictiveTable, path) -> None:
    """Columns p_0..p_{C-1} plus the argmax predicted class."""
    predicted = table.predicted()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"p_{c}" for c in range(table.classes)] + ["predicted"])
        for row, cls in zip(table.probs, predicted):
            writer.writerow([repr(float(v)) for v in row] + [int(cls)])


def load_predictive_csv(path, mode: str = MODE_LOGITS,
                        sample_count: int = 0) -> PredictiveTable:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_classes = sum(1 for name in header if name.startswith("p_"))
        for record in reader:
            rows.append([float(v) for v in record[:n_classes]])
    return PredictiveTable(np.asarray(rows), mode, sample_count)

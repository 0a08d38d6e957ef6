"""Evaluation harness: confusion matrices and per-class chunk accuracies.

Mirrors inference: only contact chunks (true label rough or smooth) enter the
matrix, predictions are the argmax over the two contact classes, and the
non-valid score is ignored. Matrix cells are percentages of all contact
chunks; per-class accuracy is the ratio of correctly identified chunks of
that class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import ModelParams, ROUGH, SMOOTH, forward_batch
from .dataset import LabeledChunkSet
from .dsp_frontend import DspConfig


@dataclass(frozen=True)
class EvalReport:
    matrix_percent: np.ndarray  # [true rough/smooth, pred rough/smooth], % of contact chunks
    accuracy: dict  # per-class chunk accuracy
    false_positive_rate: float  # fraction of smooth contact chunks classified rough
    n_contact: int
    n_nonvalid: int

    def format_text(self) -> str:
        m = self.matrix_percent
        lines = [
            "confusion matrix (% of contact chunks)",
            "                pred rough   pred smooth",
            f"  true rough    {m[0, 0]:10.2f}   {m[0, 1]:11.2f}",
            f"  true smooth   {m[1, 0]:10.2f}   {m[1, 1]:11.2f}",
            "",
            f"per-class accuracy: rough {self.accuracy['rough']:.3f}  "
            f"smooth {self.accuracy['smooth']:.3f}",
            f"false-positive rate (smooth classified rough): {self.false_positive_rate:.3f}",
            f"contact chunks: {self.n_contact}  non-valid (excluded): {self.n_nonvalid}",
        ]
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return {
            "matrix_percent": self.matrix_percent.tolist(),
            "accuracy": self.accuracy,
            "false_positive_rate": self.false_positive_rate,
            "n_contact": self.n_contact,
            "n_nonvalid": self.n_nonvalid,
        }


def evaluate(params: ModelParams, chunks: LabeledChunkSet, dsp: DspConfig) -> EvalReport:
    """Score every contact chunk exactly the way inference would."""
    features = chunks.feature_matrix(dsp)
    labels = chunks.labels
    contact = (labels == ROUGH) | (labels == SMOOTH)
    n_contact = int(contact.sum())
    n_nonvalid = int(len(labels) - n_contact)
    matrix = np.zeros((2, 2))
    accuracy = {"rough": float("nan"), "smooth": float("nan")}
    fp_rate = float("nan")
    if n_contact:
        log_probs = forward_batch(params, features[contact])
        preds = np.argmax(log_probs[:, [ROUGH, SMOOTH]], axis=1)  # 0=rough, 1=smooth
        truths = (labels[contact] == SMOOTH).astype(int)
        for t in (0, 1):
            for p in (0, 1):
                matrix[t, p] = 100.0 * float(((truths == t) & (preds == p)).sum()) / n_contact
        for t, name in ((0, "rough"), (1, "smooth")):
            n_class = int((truths == t).sum())
            if n_class:
                accuracy[name] = float(((truths == t) & (preds == t)).sum() / n_class)
        n_smooth = int((truths == 1).sum())
        if n_smooth:
            fp_rate = float(((truths == 1) & (preds == 0)).sum() / n_smooth)
    return EvalReport(
        matrix_percent=matrix,
        accuracy=accuracy,
        false_positive_rate=fp_rate,
        n_contact=n_contact,
        n_nonvalid=n_nonvalid,
    )


def overall_accuracy(params: ModelParams, chunks: LabeledChunkSet, dsp: DspConfig) -> float:
    """Three-way accuracy over all chunks (training-style metric)."""
    log_probs = forward_batch(params, chunks.feature_matrix(dsp))
    return float((np.argmax(log_probs, axis=1) == chunks.labels).mean())

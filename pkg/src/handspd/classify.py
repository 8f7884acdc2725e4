"""Linear SVM over extracted features, evaluation metrics, confusion matrix.

The binary solver is dual coordinate descent for the L2-regularized
L2-loss (squared hinge) SVM without a bias term, one-vs-rest for
multiclass.  Coordinates are visited in a freshly seeded random
permutation each pass; termination uses the projected-gradient spread
criterion over a full pass.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput

MODEL_MAGIC = b"SPDM"
MODEL_VERSION = 1


@dataclass
class SvmModel:
    weights: np.ndarray            # (n_classes, dim), one-vs-rest
    C: float = 1.0
    tol: float = 0.1
    dual_history: list = field(default_factory=list)  # per class, per pass

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]


@dataclass
class EvalReport:
    accuracy: float                # percent
    confusion: np.ndarray          # (n_classes, n_classes) counts, rows = true
    per_class_accuracy: np.ndarray


def _dual_objective(w: np.ndarray, alpha: np.ndarray, c: float) -> float:
    return 0.5 * float(w @ w) + float(alpha @ alpha) / (4.0 * c) - float(alpha.sum())


def _dcd_binary(x: np.ndarray, y: np.ndarray, c: float, tol: float, rng, max_passes: int):
    """LIBLINEAR-style dual coordinate descent for the squared-hinge dual.

    min_a 0.5 a^T (Q + I/(2C)) a - e^T a  over a >= 0, with w = X^T (a*y).
    Exact single-coordinate minimization, so the dual objective never
    increases across passes.
    """
    n, _ = x.shape
    alpha = np.zeros(n)
    w = np.zeros(x.shape[1])
    diag = 1.0 / (2.0 * c)
    qii = np.einsum("ij,ij->i", x, x) + diag
    history = []
    for _ in range(max_passes):
        order = rng.permutation(n)
        pg_max, pg_min = -np.inf, np.inf
        for i in order:
            g = y[i] * (x[i] @ w) - 1.0 + alpha[i] * diag
            pg = min(g, 0.0) if alpha[i] == 0.0 else g
            pg_max = max(pg_max, pg)
            pg_min = min(pg_min, pg)
            if pg != 0.0:
                new = max(alpha[i] - g / qii[i], 0.0)
                if new != alpha[i]:
                    w += (new - alpha[i]) * y[i] * x[i]
                    alpha[i] = new
        history.append(_dual_objective(w, alpha, c))
        if pg_max - pg_min < tol:
            break
    return w, history


def svm_train(
    features: np.ndarray,
    labels: np.ndarray,
    C: float = 1.0,
    tol: float = 0.1,
    seed: int = 0,
    n_classes: int | None = None,
    max_passes: int = 1000,
) -> SvmModel:
    """One-vs-rest training; labels are 1-based integers."""
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise InvalidInput(f"need (n, d) features with n labels, got {x.shape} / {labels.shape}")
    if C <= 0 or tol <= 0:
        raise InvalidInput("C and tol must be positive")
    present = np.unique(labels)
    if present.size < 2:
        raise InvalidInput("training data contains a single class")
    if n_classes is None:
        n_classes = int(labels.max())
    weights = np.zeros((n_classes, x.shape[1]))
    history = []
    for cls in range(1, n_classes + 1):
        y = np.where(labels == cls, 1.0, -1.0)
        rng = np.random.default_rng((seed, cls))
        weights[cls - 1], h = _dcd_binary(x, y, C, tol, rng, max_passes)
        history.append(h)
    return SvmModel(weights=weights, C=C, tol=tol, dual_history=history)


def decision_values(model: SvmModel, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != model.weights.shape[1]:
        raise InvalidInput(
            f"feature dim {x.shape[-1]} != model dim {model.weights.shape[1]}"
        )
    return x @ model.weights.T


def svm_predict(model: SvmModel, features: np.ndarray) -> np.ndarray:
    """Predicted 1-based labels; ties break to the lowest class index."""
    scores = decision_values(model, features)
    return np.argmax(scores, axis=-1) + 1


def evaluate(model: SvmModel, features: np.ndarray, labels: np.ndarray) -> EvalReport:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise InvalidInput("test set is empty")
    predicted = np.atleast_1d(svm_predict(model, features))
    k = model.n_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels - 1, predicted - 1), 1)
    totals = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(totals > 0, np.diag(confusion) / np.maximum(totals, 1), np.nan)
    accuracy = 100.0 * np.trace(confusion) / labels.size
    return EvalReport(accuracy=accuracy, confusion=confusion, per_class_accuracy=per_class)


def primal_objective(w: np.ndarray, x: np.ndarray, y: np.ndarray, c: float) -> float:
    """0.5 ||w||^2 + C * sum max(0, 1 - y w.x)^2 (no bias)."""
    margins = np.maximum(0.0, 1.0 - y * (x @ w))
    return 0.5 * float(w @ w) + c * float(margins @ margins)


def save_model(path, model: SvmModel):
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", MODEL_VERSION))
        fh.write(struct.pack("<2q", *model.weights.shape))
        fh.write(struct.pack("<2d", model.C, model.tol))
        fh.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())


def load_model(path) -> SvmModel:
    with open(path, "rb") as fh:
        if fh.read(4) != MODEL_MAGIC:
            raise InvalidInput(f"{path}: not an SVM model file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != MODEL_VERSION:
            raise InvalidInput(f"{path}: unsupported model version {version}")
        k, d = struct.unpack("<2q", fh.read(16))
        c, tol = struct.unpack("<2d", fh.read(16))
        buf = fh.read(8 * k * d)
        if len(buf) != 8 * k * d:
            raise InvalidInput(f"{path}: truncated model file")
        weights = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(k, d)
    return SvmModel(weights=weights, C=c, tol=tol)


def confusion_csv(path, report: EvalReport, class_names):
    """Counts with a header row/column of class names, plus a normalized table."""
    k = report.confusion.shape[0]
    if len(class_names) != k:
        raise InvalidInput(f"{len(class_names)} class names for {k} classes")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\predicted", *class_names])
        for name, row in zip(class_names, report.confusion):
            writer.writerow([name, *row.tolist()])
        writer.writerow([])
        writer.writerow(["row-normalized (%)"])
        totals = np.maximum(report.confusion.sum(axis=1), 1)
        for name, row, total in zip(class_names, report.confusion, totals):
            writer.writerow([name, *(f"{100.0 * v / total:.2f}" for v in row)])


def report_table(report: EvalReport, class_names) -> str:
    lines = [f"overall accuracy: {report.accuracy:.2f}%"]
    for name, acc in zip(class_names, report.per_class_accuracy):
        shown = "n/a" if np.isnan(acc) else f"{100.0 * acc:.2f}%"
        lines.append(f"  {name:<12s} {shown}")
    return "\n".join(lines)


DHG_CLASS_NAMES_14 = (
    "Grab",
    "Tap",
    "Expand",
    "Pinch",
    "Rot-CW",
    "Rot-CCW",
    "Swipe-R",
    "Swipe-L",
    "Swipe-U",
    "Swipe-D",
    "Swipe-X",
    "Swipe-V",
    "Swipe-+",
    "Shake",
)


def class_names(n_classes: int):
    """Display names: DHG gesture names for 14/28 classes, generic otherwise."""
    if n_classes == 14:
        return list(DHG_CLASS_NAMES_14)
    if n_classes == 28:
        out = []
        for name in DHG_CLASS_NAMES_14:
            out.extend([f"{name} (one finger)", f"{name} (whole hand)"])
        return out
    return [f"Class-{i}" for i in range(1, n_classes + 1)]

"""Test-time encoding, classification and metrics."""
from fractions import Fraction

import numpy as np

from .encoders import fista_lasso, lista_forward
from .errors import DataError, DimensionError
from .model import EncoderKind, as_finite


def encode_test(Y_test, state, cfg=None):
    Y_test = as_finite(Y_test, "Y_test")
    if Y_test.shape[0] != state.d:
        raise DimensionError(f"features have dimension {Y_test.shape[0]}, model expects {state.d}")
    if state.encoder_kind is EncoderKind.TOPK_LISTA:
        return lista_forward(Y_test, state)[0]
    return fista_lasso(Y_test, state.D, state.hp.lam, state.hp.mu_G, cfg)


def classify(G, W):
    """Predicted class per column: argmax of ``W g``, lowest index on ties."""
    G = np.asarray(G, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if W.shape[1] != G.shape[0]:
        raise DimensionError(f"W has {W.shape[1]} columns, codes have {G.shape[0]} rows")
    return np.argmax(W @ G, axis=0).astype(np.int64)


def metrics(pred, truth, G_test=None, n_classes=None):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise DataError(f"prediction/truth length mismatch: {pred.shape} vs {truth.shape}")
    if truth.size == 0:
        raise DataError("cannot score an empty prediction")
    correct = int(np.sum(pred == truth))
    top1 = Fraction(correct, truth.size)
    C = n_classes if n_classes is not None else int(max(pred.max(), truth.max())) + 1
    per_class = {}
    for c in range(C):
        sel = truth == c
        if np.any(sel):
            per_class[c] = Fraction(int(np.sum(pred[sel] == c)), int(sel.sum()))
    report = {"top1": top1, "per_class": per_class, "n": int(truth.size)}
    if G_test is not None:
        G_test = np.asarray(G_test)
        report["mean_nnz"] = float(np.count_nonzero(G_test) / G_test.shape[1])
    return report


def render_metrics(report):
    lines = [f"top1\t{float(report['top1']):.4f}", f"n\t{report['n']}"]
    if "mean_nnz" in report:
        lines.append(f"mean_nnz\t{report['mean_nnz']:.4f}")
    for c, acc in sorted(report["per_class"].items()):
        lines.append(f"class_{c}\t{float(acc):.4f}")
    return "\n".join(lines) + "\n"

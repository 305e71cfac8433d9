"""Anomaly scoring, thresholding, metrics and CSV exports."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .ebgan import Discriminator

CRITERIA = ("mse", "l1")
NORMAL, MALICIOUS = "normal", "malicious"


def score(disc: Discriminator, x, criterion: str = "mse"):
    """Reconstruction error of ``x`` (one record or a batch).

    ``mse`` is the mean squared error against ``Dec(Enc(x))``; ``l1`` the
    summed absolute error.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    diff = xb - disc.reconstruct(xb)
    out = np.mean(diff ** 2, axis=1) if criterion == "mse" else np.sum(np.abs(diff), axis=1)
    return float(out[0]) if single else out


@dataclass(frozen=True)
class AnomalyScore:
    index: int
    score: float
    true_label: str
    predicted: Optional[str] = None


def threshold_by_ratio(scores, c: float):
    """Flag the ``floor(c% * n)`` highest scores; ties go to the lower index.

    Returns ``(threshold, predicted)`` where ``predicted`` is a boolean array
    (True = malicious) and ``threshold`` is the smallest flagged score, or
    ``inf`` when nothing is flagged.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("no scores to threshold")
    if not 0 <= c <= 100:
        raise ValueError("c must be within [0, 100]")
    k = int(Fraction(str(c)) * s.size // 100)
    order = np.lexsort((np.arange(s.size), -s))
    predicted = np.zeros(s.size, dtype=bool)
    predicted[order[:k]] = True
    threshold = float(s[order[k - 1]]) if k else float("inf")
    return threshold, predicted


def threshold_by_max_train(train_normal_scores, test_scores):
    """Threshold at the largest training-normal score; flag strictly greater test scores."""
    train = np.asarray(train_normal_scores, dtype=np.float64)
    if train.size == 0:
        raise ValueError("no training scores")
    threshold = float(train.max())
    return threshold, np.asarray(test_scores, dtype=np.float64) > threshold


@dataclass(frozen=True)
class DetectionReport:
    threshold: float
    criterion: str
    mode: str
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    undefined: tuple = ()  # metrics whose denominator was zero (reported as 0)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def summary(self) -> str:
        return (f"{self.criterion}/{self.mode}: threshold={self.threshold:.6g} "
                f"TP={self.tp} FP={self.fp} TN={self.tn} FN={self.fn} "
                f"P={self.precision:.4f} R={self.recall:.4f} F1={self.f1:.4f}")


def metrics_from_counts(tp: int, fp: int, fn: int):
    undefined = []
    if tp + fp:
        p = tp / (tp + fp)
    else:
        p = 0.0
        undefined.append("precision")
    if tp + fn:
        r = tp / (tp + fn)
    else:
        r = 0.0
        undefined.append("recall")
    if p + r:
        f1 = 2 * p * r / (p + r)
    else:
        f1 = 0.0
        undefined.append("f1")
    return p, r, f1, tuple(undefined)


def evaluate(y_true, y_pred, threshold: float = float("nan"), criterion: str = "mse",
             mode: str = "ratio") -> DetectionReport:
    """Confusion counts and P/R/F1 with malicious (True) as the positive class."""
    t = np.asarray(y_true, dtype=bool)
    if y_pred is None or any(p is None for p in np.ravel(np.asarray(y_pred, dtype=object))):
        raise ValueError("every record needs a prediction")
    p = np.asarray(y_pred, dtype=bool)
    if t.shape != p.shape:
        raise ValueError(f"{t.size} labels but {p.size} predictions")
    tp = int(np.sum(t & p))
    fp = int(np.sum(~t & p))
    tn = int(np.sum(~t & ~p))
    fn = int(np.sum(t & ~p))
    prec, rec, f1, undefined = metrics_from_counts(tp, fp, fn)
    return DetectionReport(threshold, criterion, mode, tp, fp, tn, fn, prec, rec, f1, undefined)


def evaluate_scores(scored: Sequence[AnomalyScore], **kw) -> DetectionReport:
    if any(s.predicted is None for s in scored):
        raise ValueError("every record needs a prediction")
    return evaluate([s.true_label == MALICIOUS for s in scored],
                    [s.predicted == MALICIOUS for s in scored], **kw)


def normalize_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        return s.copy()
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)


def ranking_auc(scores, y_true) -> float:
    """Probability that a random malicious record outscores a random normal one (ties count half)."""
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(y_true, dtype=bool)
    n_pos, n_neg = int(t.sum()), int((~t).sum())
    if not n_pos or not n_neg:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[t].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# exports --------------------------------------------------------------------

def _f(x: float) -> str:
    return repr(float(x))


def histogram_rows(normalized, y_true, bins: int = 50):
    if bins < 1:
        raise ValueError("bins must be >= 1")
    s = np.asarray(normalized, dtype=np.float64)
    t = np.asarray(y_true, dtype=bool)
    idx = np.clip(np.floor(s * bins).astype(int), 0, bins - 1)
    normal = np.bincount(idx[~t], minlength=bins)
    malicious = np.bincount(idx[t], minlength=bins)
    return [(k / bins, (k + 1) / bins, int(normal[k]), int(malicious[k])) for k in range(bins)]


def export_histogram(normalized, y_true, bins: int = 50, out=None) -> str:
    """Write ``bin_low,bin_high,count_normal,count_malicious`` rows over equal bins of [0, 1]."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_low", "bin_high", "count_normal", "count_malicious"])
    for lo, hi, n, m in histogram_rows(normalized, y_true, bins):
        w.writerow([_f(lo), _f(hi), n, m])
    return _emit(buf.getvalue(), out)


def export_reconstructions(disc: Discriminator, vectors, y_true, out=None) -> str:
    """Reconstructed rows followed by the true label, one record per line."""
    x = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    recon = disc.reconstruct(x)
    t = np.asarray(y_true, dtype=bool)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{j}" for j in range(x.shape[1])] + ["true_label"])
    for row, mal in zip(recon, t):
        w.writerow([_f(v) for v in row] + [MALICIOUS if mal else NORMAL])
    return _emit(buf.getvalue(), out)


def read_reconstructions(path_or_text):
    text = _read(path_or_text)
    rows = list(csv.reader(io.StringIO(text)))[1:]
    recon = np.array([[float(v) for v in r[:-1]] for r in rows])
    labels = np.array([r[-1] == MALICIOUS for r in rows])
    return recon, labels


def export_scores(scores, y_true, predicted=None, out=None) -> str:
    """``index,score,true_label,predicted`` (predicted left blank when absent)."""
    t = np.asarray(y_true, dtype=bool)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "score", "true_label", "predicted"])
    for i, s in enumerate(np.asarray(scores, dtype=np.float64)):
        pred = "" if predicted is None else (MALICIOUS if predicted[i] else NORMAL)
        w.writerow([i, _f(s), MALICIOUS if t[i] else NORMAL, pred])
    return _emit(buf.getvalue(), out)


def read_scores(path_or_text):
    rows = list(csv.DictReader(io.StringIO(_read(path_or_text))))
    return [AnomalyScore(int(r["index"]), float(r["score"]), r["true_label"], r["predicted"] or None)
            for r in rows]


REPORT_FIELDS = ["criterion", "mode", "threshold", "tp", "fp", "tn", "fn", "precision", "recall", "f1"]


def report_row(rep: DetectionReport) -> list:
    return [rep.criterion, rep.mode, _f(rep.threshold), rep.tp, rep.fp, rep.tn, rep.fn,
            _f(rep.precision), _f(rep.recall), _f(rep.f1)]


def export_reports(reports: Sequence[DetectionReport], out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for rep in reports:
        w.writerow(report_row(rep))
    return _emit(buf.getvalue(), out)


def _emit(text: str, out) -> str:
    if out is not None:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def _read(path_or_text) -> str:
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        return path_or_text
    with open(path_or_text, encoding="utf-8") as fh:
        return fh.read()

"""Multiclass F1/AUC variants, per-class reports and the paired t-test."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


@dataclass
class PredictionSet:
    probs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.probs = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) < 1 or self.probs.shape[0] != len(self.labels):
            raise ValueError("need one probability row per label and at least one row")
        if np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("probability rows must sum to 1")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError(f"labels outside [0, {self.n_classes})")

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]

    def hard(self) -> np.ndarray:
        # argmax returns the first maximal index: lowest-class tie-break
        return self.probs.argmax(axis=1)


@dataclass
class ClassRow:
    label: int
    f1: float
    auc: float | None
    support: int
    note: str = ""


@dataclass
class MetricsReport:
    micro_f1: float
    macro_f1: float
    macro_f1_w: float
    micro_auc: float
    macro_auc: float
    macro_auc_w: float
    per_class: list = field(default_factory=list)

    SCORE_FIELDS = ("micro_f1", "macro_f1", "macro_f1_w", "micro_auc", "macro_auc", "macro_auc_w")

    def scores(self) -> dict:
        return {k: getattr(self, k) for k in self.SCORE_FIELDS}

    def to_dict(self) -> dict:
        d = self.scores()
        d["per_class"] = [asdict(r) for r in self.per_class]
        return d


def _present(labels: np.ndarray, C: int) -> np.ndarray:
    support = np.bincount(labels, minlength=C)
    present = support > 0
    if not present.all():
        warnings.warn(f"classes absent from labels excluded from macro averages: "
                      f"{np.flatnonzero(~present).tolist()}", stacklevel=3)
    return present


def f1_scores(preds: PredictionSet):
    """Return (micro, macro, weighted, per-class F1)."""
    C = preds.n_classes
    y, yhat = preds.labels, preds.hard()
    tp = np.bincount(y[yhat == y], minlength=C).astype(float)
    pred_count = np.bincount(yhat, minlength=C).astype(float)
    support = np.bincount(y, minlength=C).astype(float)
    denom = pred_count + support
    per_class = np.divide(2 * tp, denom, out=np.zeros(C), where=denom > 0)
    micro = tp.sum() / len(y)
    present = _present(y, C)
    macro = per_class[present].mean()
    weighted = float(np.sum(per_class * support) / support.sum())
    return float(micro), float(macro), weighted, per_class


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    n = len(x)
    while i < n:
        j = i
        while j + 1 < n and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def binary_auc(scores, positives) -> float | None:
    """ROC area via midranks (ties count one half); None if a class is empty."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    r = _midranks(scores)
    u = r[positives].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_scores(preds: PredictionSet):
    """Return (micro, macro, weighted, per-class one-vs-rest AUC).

    Classes without positives (or without negatives) get ``None`` and are
    skipped by the macro averages.
    """
    C = preds.n_classes
    onehot = np.eye(C, dtype=bool)[preds.labels]
    per_class = [binary_auc(preds.probs[:, c], onehot[:, c]) for c in range(C)]
    micro = binary_auc(preds.probs.ravel(), onehot.ravel())
    support = onehot.sum(axis=0)
    _present(preds.labels, C)
    valid = [c for c in range(C) if per_class[c] is not None]
    macro = float(np.mean([per_class[c] for c in valid])) if valid else float("nan")
    w = np.array([support[c] for c in valid], dtype=float)
    weighted = float(np.dot(w, [per_class[c] for c in valid]) / w.sum()) if valid else float("nan")
    return micro, macro, weighted, per_class


def evaluate_predictions(preds: PredictionSet) -> MetricsReport:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mi_f, ma_f, w_f, pc_f = f1_scores(preds)
        mi_a, ma_a, w_a, pc_a = auc_scores(preds)
    return MetricsReport(mi_f, ma_f, w_f, mi_a, ma_a, w_a, per_class_report(preds))


def per_class_report(preds: PredictionSet, class_names: Sequence[str] | None = None) -> list[ClassRow]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, _, _, f1 = f1_scores(preds)
        _, _, _, auc = auc_scores(preds)
    support = np.bincount(preds.labels, minlength=preds.n_classes)
    rows = []
    for c in range(preds.n_classes):
        note = "no support" if support[c] == 0 else ""
        if class_names is not None:
            note = f"{class_names[c]}" + (f" ({note})" if note else "")
        rows.append(ClassRow(c, float(f1[c]), auc[c], int(support[c]), note))
    return rows


# ---------------------------------------------------------------------------
# paired t-test


def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    return betainc_reg(0.5 * df, 0.5, df / (df + t * t))


def stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


class TTestResult(NamedTuple):
    t: float
    p: float
    stars: str

    @property
    def degenerate(self) -> bool:
        """Zero-variance differences with a nonzero mean."""
        return math.isinf(self.t)


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test of ``a - b``.

    Identical inputs give ``t=0, p=1``.  Constant nonzero differences have
    no variance; they are reported with infinite ``t`` and ``p=0`` (below
    any threshold) and flagged through ``degenerate``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    d = a - b
    n = len(d)
    mean = math.fsum(d) / n
    ss = math.fsum((d - mean) ** 2)
    if ss == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, "")
        return TTestResult(math.copysign(math.inf, mean), 0.0, "***")
    sd = math.sqrt(ss / (n - 1))
    t = mean / (sd / math.sqrt(n))
    p = t_sf_two_sided(t, n - 1)
    return TTestResult(t, p, stars(p))


def format_mean_std(values: Sequence[float], digits: int = 3) -> str:
    v = np.asarray(values, dtype=np.float64)
    sd = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
    return f"{v.mean():.{digits}f} ± {sd:.{digits}f}"

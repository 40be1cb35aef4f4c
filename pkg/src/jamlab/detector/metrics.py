"""Binary classification report: per-class precision/recall/F1, averages, confusion."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

CLASSES = (0, 1)


def confusion_matrix(y_true, y_pred):
    """2x2 matrix, rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _safe_div(a, b):
    return float(a) / float(b) if b else 0.0


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    per_class: dict
    accuracy: float
    macro_avg: ClassScores
    weighted_avg: ClassScores
    confusion: list
    mean_loss: float | None = None
    threshold: float = 0.5

    @property
    def n(self):
        return self.macro_avg.support

    @classmethod
    def from_confusion(cls, cm, mean_loss=None, threshold=0.5):
        cm = np.asarray(cm, dtype=np.int64)
        per = {}
        for c in CLASSES:
            tp = cm[c, c]
            pred = cm[:, c].sum()
            true = cm[c, :].sum()
            p = _safe_div(tp, pred)
            r = _safe_div(tp, true)
            f = _safe_div(2 * p * r, p + r)
            per[c] = ClassScores(p, r, f, int(true))
        total = int(cm.sum())
        acc = _safe_div(np.trace(cm), total)
        macro = ClassScores(*(float(np.mean([getattr(per[c], k) for c in CLASSES]))
                              for k in ("precision", "recall", "f1")), total)
        weights = np.array([per[c].support for c in CLASSES], dtype=np.float64)
        weighted = ClassScores(*(_safe_div(sum(getattr(per[c], k) * weights[c] for c in CLASSES), total)
                                 for k in ("precision", "recall", "f1")), total)
        return cls(per, acc, macro, weighted, cm.tolist(), mean_loss, threshold)

    def to_dict(self):
        d = {
            "per_class": {str(c): asdict(s) for c, s in self.per_class.items()},
            "accuracy": self.accuracy,
            "macro_avg": asdict(self.macro_avg),
            "weighted_avg": asdict(self.weighted_avg),
            "confusion": self.confusion,
            "mean_loss": self.mean_loss,
            "threshold": self.threshold,
        }
        return d

    def table(self, digits=2):
        """Text layout of a classification report (class rows, accuracy, averages)."""
        w = max(len("weighted avg"), 5)
        head = f"{'':>{w}} {'precision':>9} {'recall':>9} {'f1-score':>9} {'support':>9}"
        fmt = f"{{:>{w}}} {{:>9.{digits}f}} {{:>9.{digits}f}} {{:>9.{digits}f}} {{:>9}}"
        lines = [head, ""]
        for c in CLASSES:
            s = self.per_class[c]
            lines.append(fmt.format(str(c), s.precision, s.recall, s.f1, s.support))
        lines.append("")
        lines.append(f"{'accuracy':>{w}} {'':>9} {'':>9} {self.accuracy:>9.{digits}f} {self.n:>9}")
        for name, s in (("macro avg", self.macro_avg), ("weighted avg", self.weighted_avg)):
            lines.append(fmt.format(name, s.precision, s.recall, s.f1, s.support))
        return "\n".join(lines)


def classification_report(y_true, prob, threshold=0.5, mean_loss=None) -> MetricsReport:
    y_pred = (np.asarray(prob) >= threshold).astype(np.int64)
    return MetricsReport.from_confusion(confusion_matrix(y_true, y_pred), mean_loss, threshold)

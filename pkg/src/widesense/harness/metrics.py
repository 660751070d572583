"""Accuracy metrics and the per-SNR report container."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from ..errors import MetricError, ShapeError
from ..learning import NUM_CLASSES


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def sensing_accuracy(preds, labels) -> float:
    """Mean per-band agreement of binary occupancy over all bands and frames."""
    p = np.asarray(preds) != 0
    l = np.asarray(labels) != 0
    _same_shape(p, l, "sensing_accuracy")
    if p.size == 0:
        raise MetricError("no bands to score")
    return float(np.mean(p == l))


def frame_accuracy(preds, labels) -> float:
    """Fraction of frames whose whole occupancy vector is right (last axis = bands)."""
    p = np.asarray(preds) != 0
    l = np.asarray(labels) != 0
    _same_shape(p, l, "frame_accuracy")
    p, l = np.atleast_2d(p), np.atleast_2d(l)
    if p.shape[0] == 0:
        raise MetricError("no frames to score")
    return float(np.mean(np.all(p == l, axis=-1)))


def classification_accuracy(preds, labels, occupancy) -> float:
    """Agreement over busy bands only."""
    p, l, occ = np.asarray(preds), np.asarray(labels), np.asarray(occupancy) != 0
    _same_shape(p, l, "classification_accuracy")
    _same_shape(l, occ, "classification_accuracy")
    if not occ.any():
        raise MetricError("no busy bands: classification accuracy is undefined")
    return float(np.mean(p[occ] == l[occ]))


def confusion_matrix(preds, labels, occupancy, n_classes: int = NUM_CLASSES) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class, busy bands only."""
    p, l, occ = np.asarray(preds), np.asarray(labels), np.asarray(occupancy) != 0
    _same_shape(p, l, "confusion_matrix")
    _same_shape(l, occ, "confusion_matrix")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (l[occ].astype(np.int64), p[occ].astype(np.int64)), 1)
    return cm


def per_class_recall(cm: np.ndarray) -> np.ndarray:
    rows = cm.sum(axis=1)
    return np.divide(np.diag(cm), rows, out=np.full(len(cm), np.nan), where=rows > 0)


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return "nan"
    return repr(float(v))


@dataclass
class MetricReport:
    """Per-SNR metrics. Keys of every dict are SNRs in dB."""

    sensing_acc: dict = field(default_factory=dict)
    class_acc: dict = field(default_factory=dict)
    confusion: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)  # column name -> {snr: value}
    runtime_s: float = 0.0

    @property
    def snrs(self) -> list:
        keys = set(self.sensing_acc) | set(self.class_acc)
        for col in self.extras.values():
            keys |= set(col)
        return sorted(keys)

    def rows(self) -> list:
        cols = ["snr_db", "sensing_acc", "class_acc", *sorted(self.extras)]
        out = [cols]
        for snr in self.snrs:
            row = [f"{snr:g}", _fmt(self.sensing_acc.get(snr)), _fmt(self.class_acc.get(snr))]
            row += [_fmt(self.extras[c].get(snr)) for c in sorted(self.extras)]
            out.append(row)
        return out

    def write_csv(self, out_dir: Union[str, Path], name: str = "sweep.csv") -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / name
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.rows())
        for snr, cm in sorted(self.confusion.items()):
            with open(out_dir / f"confusion_{snr:g}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["true\\pred", *range(cm.shape[1])])
                for i, row in enumerate(cm):
                    w.writerow([i, *(int(v) for v in row)])
        return path

    def to_json(self) -> dict:
        def conv(d):
            return {f"{k:g}": (None if v is None or np.isnan(v) else float(v)) for k, v in sorted(d.items())}

        return {
            "sensing_acc": conv(self.sensing_acc),
            "class_acc": conv(self.class_acc),
            "extras": {c: conv(v) for c, v in sorted(self.extras.items())},
            "confusion": {f"{k:g}": v.tolist() for k, v in sorted(self.confusion.items())},
            "runtime_s": self.runtime_s,
        }

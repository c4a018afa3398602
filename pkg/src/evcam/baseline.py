"""Frame-based comparison detector and trigger evaluation metrics."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .pipeline import Blob
from .sensor import check_frame

_SQUARE = np.ones((3, 3), dtype=bool)


@dataclass
class BaselineParams:
    intensity_threshold: int = 25
    min_pixels: int = 20


def difference_mask(gray, prev_gray, threshold: int) -> np.ndarray:
    cur = check_frame(gray).astype(np.int16)
    prev = check_frame(prev_gray).astype(np.int16)
    return np.abs(cur - prev) > threshold


def clean_mask(mask: np.ndarray) -> np.ndarray:
    """3x3 opening then closing; pixels outside the frame count as background."""
    opened = ndimage.binary_opening(mask, structure=_SQUARE, border_value=0)
    # pad so closing does not erode blobs touching the border
    padded = np.pad(opened, 1)
    closed = ndimage.binary_closing(padded, structure=_SQUARE, border_value=0)
    return closed[1:-1, 1:-1]


def baseline_detect(gray, prev_gray, params: BaselineParams | None = None) -> list[Blob]:
    """Frame difference, morphological cleanup and 8-connected labeling."""
    params = params or BaselineParams()
    mask = clean_mask(difference_mask(gray, prev_gray, params.intensity_threshold))
    labels, n = ndimage.label(mask, structure=_SQUARE)
    blobs = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        rows, cols = np.nonzero(labels[sl] == idx)
        if rows.size < params.min_pixels:
            continue
        rows = rows + sl[0].start
        cols = cols + sl[1].start
        blobs.append(Blob(float(rows.mean()), float(cols.mean()), int(rows.min()), int(rows.max()),
                          int(cols.min()), int(cols.max()), int(rows.size)))
    return blobs


@dataclass(frozen=True)
class GroundTruthLabel:
    frame_index: int
    rule_id: str
    window: int = 15

    def __post_init__(self):
        if self.window <= 0:
            raise ValueError("label window must be positive")


@dataclass
class MetricCounts:
    td: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.td / (self.td + self.fp) if self.td + self.fp else 1.0

    @property
    def recall(self) -> float:
        return self.td / (self.td + self.fn) if self.td + self.fn else 1.0

    def __add__(self, other):
        return MetricCounts(self.td + other.td, self.fp + other.fp, self.fn + other.fn)


def match_triggers(triggers, labels) -> MetricCounts:
    """Greedy one-to-one matching of labels to triggers of the same rule.

    Labels are taken in frame order; each claims the nearest unmatched
    trigger within its window (earlier trigger on ties).
    """
    triggers = sorted(triggers, key=lambda t: (t.frame_index, t.rule_id, t.track_id))
    used = [False] * len(triggers)
    td = 0
    for lab in sorted(labels, key=lambda lab: (lab.frame_index, lab.rule_id)):
        best = None
        for i, trig in enumerate(triggers):
            if used[i] or trig.rule_id != lab.rule_id:
                continue
            d = abs(trig.frame_index - lab.frame_index)
            if d <= lab.window and (best is None or d < best[0]):
                best = (d, i)
        if best is not None:
            used[best[1]] = True
            td += 1
    return MetricCounts(td=td, fp=used.count(False), fn=len(labels) - td)


def read_labels(path, window: int = 15) -> list[GroundTruthLabel]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [GroundTruthLabel(int(r["frame_index"]), r["rule_id"], window) for r in rows]


def labels_csv(labels) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame_index", "rule_id"])
    for lab in sorted(labels, key=lambda lab: (lab.frame_index, lab.rule_id)):
        writer.writerow([lab.frame_index, lab.rule_id])
    return buf.getvalue()


def metrics_csv(rows) -> str:
    """``rows`` is an iterable of (scenario, domain, MetricCounts)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scenario", "domain", "TD", "FP", "FN", "precision", "recall"])
    for scenario, domain, m in rows:
        writer.writerow([scenario, domain, m.td, m.fp, m.fn, f"{m.precision:.6f}", f"{m.recall:.6f}"])
    return buf.getvalue()

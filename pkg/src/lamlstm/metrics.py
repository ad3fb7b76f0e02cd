"""Frame-level average precision and top-1 accuracy.

AP is the non-interpolated area under the precision-recall curve of all
frames pooled together: sort by score (descending, ties kept in input
order) and average precision@k over the ranks k that hold a positive. With
a single positive class this is what the challenge tables call mAP.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import UNLABELED


class MissingTrackError(KeyError):
    def __str__(self):
        return self.args[0]


class LengthMismatchError(ValueError):
    pass


class UnlabeledFrameError(ValueError):
    pass


@dataclass
class Metrics:
    mAP: float
    accuracy: float
    n_frames: int
    n_positives: int

    def to_dict(self) -> dict:
        d = asdict(self)
        if np.isnan(d["mAP"]):
            d["mAP"] = None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def _pairs(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores for {y.size} labels")
    return s, y


def average_precision(scores, labels) -> float:
    s, y = _pairs(scores, labels)
    pos = (y == 1)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("average precision is undefined without positives")
    order = np.argsort(-s, kind="stable")
    hits = pos[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_pos + 1) / ranks))


def top1_accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of frames where ``score > threshold`` agrees with the label."""
    s, y = _pairs(scores, labels)
    if s.size == 0:
        raise ValueError("accuracy of an empty prediction set")
    return float(np.mean((s > threshold).astype(int) == y))


def evaluate(scores, truth, threshold: float = 0.5) -> Metrics:
    """Pool every scored frame and compute :class:`Metrics`.

    ``truth`` is a list of labeled :class:`~lamlstm.data.FeatureTrack` (or a
    dict keyed by track id). A scored track that has no ground truth, a
    length disagreement, or an unlabeled frame each raise their own error.
    """
    if not isinstance(truth, dict):
        truth = {t.track_id: t for t in truth}
    all_s, all_y = [], []
    for series in scores:
        tr = truth.get(series.track_id)
        if tr is None:
            raise MissingTrackError(f"no ground truth for track {series.track_id!r}")
        if len(series.scores) != tr.n_frames:
            raise LengthMismatchError(
                f"track {series.track_id!r}: {len(series.scores)} scores for {tr.n_frames} frames"
            )
        if np.any(tr.labels == UNLABELED):
            raise UnlabeledFrameError(f"track {series.track_id!r} has unlabeled frames")
        all_s.append(series.scores)
        all_y.append(tr.labels.astype(np.int64))
    if not all_s:
        raise ValueError("nothing to evaluate")
    s = np.concatenate(all_s)
    y = np.concatenate(all_y)
    n_pos = int((y == 1).sum())
    ap = average_precision(s, y) if n_pos else float("nan")
    return Metrics(ap, top1_accuracy(s, y, threshold), int(y.size), n_pos)

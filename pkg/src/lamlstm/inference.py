"""Per-track prediction, flip test-time augmentation, ensembling, smoothing.

CSV formats (UTF-8, frames 0-based, rows sorted by ``(track_id, frame)``)::

    track_id,frame,logit0,logit1
    track_id,frame,score
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import FeatureTrack, window_stack
from .model import ModelParams, forward_batch
from .numerics import softmax


@dataclass
class LogitSeries:
    track_id: str
    logits: np.ndarray  # (T, 2)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(self.logits)):
            raise ValueError(f"track {self.track_id!r}: non-finite logits")

    def __len__(self):
        return self.logits.shape[0]

    def scores(self) -> "ScoreSeries":
        return ScoreSeries(self.track_id, softmax(self.logits, axis=1)[:, 1])


@dataclass
class ScoreSeries:
    track_id: str
    scores: np.ndarray  # (T,)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if not np.all((self.scores >= 0.0) & (self.scores <= 1.0)):
            raise ValueError(f"track {self.track_id!r}: scores outside [0, 1]")

    def __len__(self):
        return self.scores.shape[0]


def predict_track(params: ModelParams, track: FeatureTrack, batch_size: int = 1024) -> LogitSeries:
    """One logit pair per frame, each from the window centred on that frame."""
    cfg = params.config
    if track.dim != cfg.input_dim:
        raise ValueError(f"track {track.track_id!r} has D={track.dim}, model expects {cfg.input_dim}")
    X = window_stack(track, cfg.window)
    out = [forward_batch(params, X[s:s + batch_size]) for s in range(0, len(X), batch_size)]
    return LogitSeries(track.track_id, np.concatenate(out))


def predict_scores(params: ModelParams, track: FeatureTrack) -> ScoreSeries:
    return predict_track(params, track).scores()


def predict_tracks(params: ModelParams, tracks, workers: int = 1) -> list[LogitSeries]:
    if workers <= 1:
        return [predict_track(params, t) for t in tracks]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(lambda t: predict_track(params, t), tracks))


def tta_fuse(r: LogitSeries, r_flip: LogitSeries) -> ScoreSeries:
    """Average the positive-class probabilities of the original and flipped streams."""
    if r.track_id != r_flip.track_id:
        raise ValueError(f"cannot fuse track {r.track_id!r} with {r_flip.track_id!r}")
    if len(r) != len(r_flip):
        raise ValueError(f"track {r.track_id!r}: {len(r)} original vs {len(r_flip)} flipped frames")
    p = softmax(r.logits, axis=1)[:, 1]
    q = softmax(r_flip.logits, axis=1)[:, 1]
    return ScoreSeries(r.track_id, 0.5 * (p + q))


def ensemble_mean(members: list[ScoreSeries]) -> ScoreSeries:
    if not members:
        raise ValueError("ensemble needs at least one member")
    first = members[0]
    for m in members[1:]:
        if m.track_id != first.track_id:
            raise ValueError(f"ensemble mixes tracks {first.track_id!r} and {m.track_id!r}")
        if len(m) != len(first):
            raise ValueError(f"track {first.track_id!r}: member lengths {len(first)} and {len(m)} differ")
    s = np.mean([m.scores for m in members], axis=0)
    # a mean of values in [lo, hi] can round just outside them
    lo = np.min([m.scores for m in members], axis=0)
    hi = np.max([m.scores for m in members], axis=0)
    return ScoreSeries(first.track_id, np.clip(s, lo, hi))


def median_filter(x, window: int) -> np.ndarray:
    """Sliding median with replicate padding; output has the input's length."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"median window must be odd and >= 1, got {window}")
    x = np.asarray(x, dtype=np.float64)
    if window == 1 or x.size == 0:
        return x.copy()
    half = window // 2
    padded = np.pad(x, half, mode="edge")
    return np.median(sliding_window_view(padded, window), axis=1)


def median_smooth(scores: ScoreSeries, window: int) -> ScoreSeries:
    """Replace each frame's score by the median of the ``window`` frames around it."""
    return ScoreSeries(scores.track_id, median_filter(scores.scores, window))


# --- CSV I/O ----------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_logits_csv(series: list[LogitSeries], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["track_id", "frame", "logit0", "logit1"])
        for s in sorted(series, key=lambda s: s.track_id):
            for t, (a, b) in enumerate(s.logits):
                w.writerow([s.track_id, t, _fmt(a), _fmt(b)])


def write_scores_csv(series: list[ScoreSeries], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["track_id", "frame", "score"])
        for s in sorted(series, key=lambda s: s.track_id):
            for t, v in enumerate(s.scores):
                w.writerow([s.track_id, t, _fmt(v)])


def _read_csv(path, columns):
    groups: dict[str, list] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != columns:
            raise ValueError(f"{path}: expected header {','.join(columns)}, got {header}")
        for lineno, row in enumerate(r, 2):
            if len(row) != len(columns):
                raise ValueError(f"{path}:{lineno}: expected {len(columns)} fields")
            tid, frame = row[0], int(row[1])
            rows = groups.setdefault(tid, [])
            if frame != len(rows):
                raise ValueError(f"{path}:{lineno}: track {tid!r} frame {frame} out of order")
            rows.append([float(v) for v in row[2:]])
    return groups


def read_logits_csv(path) -> list[LogitSeries]:
    g = _read_csv(path, ["track_id", "frame", "logit0", "logit1"])
    return [LogitSeries(tid, np.array(rows)) for tid, rows in g.items()]


def read_scores_csv(path) -> list[ScoreSeries]:
    g = _read_csv(path, ["track_id", "frame", "score"])
    return [ScoreSeries(tid, np.array(rows)[:, 0]) for tid, rows in g.items()]

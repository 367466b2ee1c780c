"""Classical baselines and evaluation metrics.

DTW over a cost matrix, the video-warping Dijkstra baseline (shortest
audio-to-video path with a bounded per-step jump), shift-error and
accuracy metrics, warp edit statistics, Pearson correlation, and mel
cepstral distortion with and without DTW alignment.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureSequence

MCD_SCALE = 10.0 / np.log(10.0)


def dtw(cost: np.ndarray):
    """Classic boundary-anchored DTW; returns (path, total_cost).

    path is a list of (i, j) pairs from (0, 0) to (n-1, m-1); backtrack
    prefers the diagonal predecessor on ties.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        raise ValueError("empty cost matrix")
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(n):
        for j in range(m):
            acc[i + 1, j + 1] = cost[i, j] + min(acc[i, j], acc[i, j + 1], acc[i + 1, j])
    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, up, left = acc[i, j], acc[i, j + 1], acc[i + 1, j]
            if diag <= up and diag <= left:
                i, j = i - 1, j - 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    path.reverse()
    return path, float(acc[n, m])


def modified_dta(cost: np.ndarray, max_jump: int = 5) -> np.ndarray:
    """Dijkstra audio-to-video matching with non-decreasing indices.

    Nodes are (audio frame i, video index j); edges advance to i+1 with
    j' in [j, j + max_jump] at weight cost[i+1][j']. Ties in the queue
    resolve toward the smallest video index. Returns per-audio-frame
    video indices.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if m < n:
        raise ValueError("need at least as many video as audio frames")
    dist = np.full((n, m), np.inf)
    prev = np.full((n, m), -1, dtype=np.int64)
    heap = []
    for j in range(m):
        dist[0, j] = cost[0, j]
        heapq.heappush(heap, (dist[0, j], 0, j))
    while heap:
        d, i, j = heapq.heappop(heap)
        if d > dist[i, j] or i == n - 1:
            continue
        for j2 in range(j, min(j + max_jump, m - 1) + 1):
            nd = d + cost[i + 1, j2]
            if nd < dist[i + 1, j2]:
                dist[i + 1, j2] = nd
                prev[i + 1, j2] = j
                heapq.heappush(heap, (nd, i + 1, j2))
    j = int(np.argmin(dist[n - 1]))
    path = np.empty(n, dtype=np.int64)
    for i in range(n - 1, -1, -1):
        path[i] = j
        j = int(prev[i, j]) if i > 0 else j
    return path


def shift_error_metrics(predicted, truth):
    """Per-frame |pred - truth|: returns (mean, max, top1 exact fraction)."""
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.shape != truth.shape:
        raise ValueError("predicted and truth lengths differ")
    err = np.abs(predicted - truth)
    return float(err.mean()), int(err.max()), float((err == 0).mean())


def edit_statistics(path, video_length: int | None = None):
    """Warp quality counts: (dup, del, conseq, unique).

    dup counts extra occurrences beyond the first; del counts indices
    inside the used span never referenced; conseq counts steps where the
    match advances by exactly one; unique counts distinct used indices.
    """
    idx = np.asarray(getattr(path, "indices", path), dtype=np.int64)
    if idx.size == 0:
        return 0, 0, 0, 0
    values, counts = np.unique(idx, return_counts=True)
    dup = int((counts - 1).sum())
    span = np.arange(idx.min(), idx.max() + 1)
    deleted = int(np.setdiff1d(span, values).size)
    conseq = int((np.diff(idx) == 1).sum())
    unique = int(values.size)
    return dup, deleted, conseq, unique


def pearson(x, y) -> float:
    """Sample Pearson correlation; raises on degenerate input."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two equal-length sequences of at least 2 points")
    xc, yc = x - x.mean(), y - y.mean()
    # rescale to unit max magnitude so tiny deviations don't underflow to
    # zero variance when squared
    xs, ys = np.abs(xc).max(), np.abs(yc).max()
    if xs == 0 or ys == 0:
        raise ValueError("undefined correlation: zero variance")
    xc, yc = xc / xs, yc / ys
    den = np.sqrt((xc**2).sum() * (yc**2).sum())
    if den == 0:
        raise ValueError("undefined correlation: zero variance")
    return float((xc * yc).sum() / den)


def _frame_mcd(ref_frame: np.ndarray, test_frame: np.ndarray) -> float:
    diff = ref_frame[1:] - test_frame[1:]  # c0 excluded
    return MCD_SCALE * np.sqrt(2.0 * (diff**2).sum())


def mcd(ref: FeatureSequence, test: FeatureSequence) -> float:
    """Frame-aligned mel cepstral distortion in dB; coefficient 0 excluded."""
    if len(ref) != len(test) or ref.dim != test.dim:
        raise ValueError("mcd needs equal frame counts and dims")
    diffs = ref.frames[:, 1:] - test.frames[:, 1:]
    return float(MCD_SCALE * np.sqrt(2.0 * (diffs**2).sum(axis=1)).mean())


def mcd_dtw(ref: FeatureSequence, test: FeatureSequence) -> float:
    """MCD minimized over a DTW alignment: mean frame cost along the optimal path."""
    if len(ref) == 0 or len(test) == 0:
        raise ValueError("empty sequence")
    dr = ref.frames[:, 1:]
    dt = test.frames[:, 1:]
    # explicit differences: exact zeros for identical frames (no Gram-trick
    # cancellation error, which matters under the sqrt)
    sq = ((dr[:, None, :] - dt[None, :, :]) ** 2).sum(axis=-1)
    cost = MCD_SCALE * np.sqrt(2.0 * sq)
    path, total = dtw(cost)
    return float(total / len(path))


@dataclass
class MetricReport:
    mean_shift_error: float = float("nan")
    max_shift_error: float = float("nan")
    top1_accuracy: float = float("nan")
    per_video_exact_shift_accuracy: float = float("nan")
    dup: float = float("nan")
    del_: float = float("nan")
    conseq: float = float("nan")
    unique: float = float("nan")
    corr_x: float = float("nan")
    corr_y: float = float("nan")
    mcd: float = float("nan")
    mcd_dtw: float = float("nan")

    _JSON_KEYS = ("mean_shift_error", "max_shift_error", "top1_accuracy",
                  "per_video_exact_shift_accuracy", "dup", "del", "conseq",
                  "unique", "corr_x", "corr_y", "mcd", "mcd_dtw")

    def to_dict(self) -> dict:
        out = {}
        for key in self._JSON_KEYS:
            value = getattr(self, "del_" if key == "del" else key)
            out[key] = None if isinstance(value, float) and np.isnan(value) else value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict):
        kwargs = {}
        for key in cls._JSON_KEYS:
            if key in doc and doc[key] is not None:
                kwargs["del_" if key == "del" else key] = doc[key]
        return cls(**kwargs)


def write_report_csv(rows: list, path) -> None:
    """One CSV row per evaluated sequence; rows are (label, MetricReport)."""
    keys = MetricReport._JSON_KEYS
    with open(path, "w", newline="") as f:
        f.write("label," + ",".join(keys) + "\n")
        for label, report in rows:
            d = report.to_dict()
            f.write(label + "," + ",".join(
                "" if d[k] is None else f"{d[k]:.9g}" for k in keys) + "\n")

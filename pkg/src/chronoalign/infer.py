"""Full-sequence alignment at inference time.

Sliding windows with stride ten vote on a video index per audio frame;
the maximal-vote candidates feed a longest monotone (non-decreasing)
match dynamic program, gaps are repaired and the path is filled and
smoothed with the smallest Gaussian width meeting a second-difference
criterion, then padded to the full audio length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureSequence
from .model import ModelParams, forward_batch, lattice_decode_batch
from .synth import AUDIO_WINDOW, VIDEO_WINDOW, WINDOW_OFFSET, MAX_SHIFT

GAP = -1
PATH_MAGIC = "CHRONOPATH v1"


@dataclass
class VoteTable:
    """Per absolute audio frame, vote counts over absolute video indices."""

    votes: list          # list of dict {video_index: count}
    window_starts: list  # audio-frame start of every contributing window

    def __len__(self):
        return len(self.votes)

    def to_json(self) -> str:
        doc = {"window_starts": self.window_starts,
               "votes": [{str(k): v for k, v in sorted(d.items())} for d in self.votes]}
        return json.dumps(doc, sort_keys=True)


@dataclass
class AlignmentPath:
    """Per audio frame, a matched absolute video index or the gap sentinel."""

    indices: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)

    def __len__(self):
        return self.indices.size

    def is_monotone(self) -> bool:
        used = self.indices[self.indices != GAP]
        return bool(np.all(np.diff(used) >= 0)) if used.size else True

    def is_dense(self) -> bool:
        return bool(np.all(self.indices != GAP))


@dataclass(frozen=True)
class SmoothingConfig:
    sigma_grid: tuple = (0.5, 1.0, 2.0, 4.0, 8.0)
    criterion_threshold: float = 1.0  # max |second difference| in frames
    kernel_halfwidth_sigmas: float = 4.0

    def __post_init__(self):
        grid = tuple(self.sigma_grid)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] <= 0:
            raise ValueError("sigma_grid must be non-empty, positive, increasing")
        object.__setattr__(self, "sigma_grid", grid)


def write_path(path_obj: AlignmentPath, path) -> None:
    with open(path, "w") as f:
        f.write(f"{PATH_MAGIC} count={len(path_obj)}\n")
        for v in path_obj.indices:
            f.write(f"{int(v)}\n")


def read_path(path) -> AlignmentPath:
    with open(path) as f:
        header = f.readline().rstrip("\n")
        if not header.startswith(PATH_MAGIC):
            raise ValueError(f"bad path file header: {header!r}")
        count = int(header.split("count=")[1])
        values = [int(f.readline()) for _ in range(count)]
    return AlignmentPath(np.array(values, dtype=np.int64))


def windowed_predict(audio: FeatureSequence, video: FeatureSequence,
                     params: ModelParams, stride: int = 10,
                     swap_roles: bool = False, decode: str = "lattice",
                     distance_weight: float = 0.5) -> VoteTable:
    """Apply the aligner at every stride-10 window start and collect votes.

    Each window covers n audio frames against the m-frame video window
    centered on it; near sequence edges the video window shifts inward
    rather than padding. Interior frames collect up to ceil(n / stride)
    votes. decode="lattice" (default) uses the joint max-product decode;
    decode="greedy" uses free-running argmax.
    """
    if decode not in ("greedy", "lattice"):
        raise ValueError(f"unknown decode {decode!r}")
    cfg = params.config
    n, m = cfg.n, cfg.m
    t_a, t_v = len(audio), len(video)
    if t_a < n or t_v < m:
        raise ValueError(f"need at least {n} audio and {m} video frames, "
                         f"got {t_a} and {t_v}")
    votes = [dict() for _ in range(t_a)]
    starts = list(range(0, t_a - n + 1, stride))
    v_starts = [min(max(s - (m - n) // 2, 0), t_v - m) for s in starts]
    a_stack = np.stack([audio.frames[s:s + n] for s in starts])
    v_stack = np.stack([video.frames[v:v + m] for v in v_starts])
    chunk = 25 if decode == "lattice" else 256
    preds = np.empty((len(starts), n), dtype=np.int64)
    for lo in range(0, len(starts), chunk):
        a, v = a_stack[lo:lo + chunk], v_stack[lo:lo + chunk]
        if decode == "lattice":
            preds[lo:lo + chunk] = lattice_decode_batch(
                a, v, params, distance_weight=distance_weight,
                swap_roles=swap_roles)
        else:
            _, _, _, preds[lo:lo + chunk] = forward_batch(
                a, v, params, mode="free_running", swap_roles=swap_roles)
    for si, s in enumerate(starts):
        v_start = v_starts[si]
        for k, y in enumerate(preds[si]):
            abs_v = v_start + int(y)
            if 0 <= abs_v < t_v:
                votes[s + k][abs_v] = votes[s + k].get(abs_v, 0) + 1
    return VoteTable(votes, starts)


def candidate_sets(table: VoteTable) -> list:
    """Keep only the indices with the maximal vote count per audio frame."""
    out = []
    for frame_votes in table.votes:
        if not frame_votes:
            out.append(set())
            continue
        best = max(frame_votes.values())
        out.append({idx for idx, c in frame_votes.items() if c == best})
    return out


def longest_monotone_match(candidates: list) -> AlignmentPath:
    """Assign candidates to maximize frames matched with non-decreasing indices.

    Unassignable frames become gaps. Among equal-count solutions, the
    front-to-back reconstruction assigns the smallest optimum-preserving
    candidate at every frame, gapping a frame only when no candidate
    preserves the optimum.
    """
    n_frames = len(candidates)
    values = sorted({v for cand in candidates for v in cand})
    vpos = {v: i for i, v in enumerate(values)}
    n_vals = len(values)
    # best[k][i] = max matches in frames k.. using only indices >= values[i]
    best = np.zeros((n_frames + 1, n_vals + 1), dtype=np.int64)
    for k in range(n_frames - 1, -1, -1):
        for i in range(n_vals + 1):
            score = best[k + 1][i]
            for v in candidates[k]:
                j = vpos[v]
                if i <= j:
                    score = max(score, 1 + best[k + 1][j])
            best[k][i] = score
    indices = np.full(n_frames, GAP, dtype=np.int64)
    floor = 0  # value-grid position of the monotonicity lower bound
    for k in range(n_frames):
        target = best[k][floor]
        chosen = None
        for v in sorted(candidates[k]):
            j = vpos[v]
            if j >= floor and 1 + best[k + 1][j] == target:
                chosen = v
                break
        if chosen is not None:
            indices[k] = chosen
            floor = vpos[chosen]
    return AlignmentPath(indices)


def resume_after_break(path: AlignmentPath, candidates: list | None = None) -> AlignmentPath:
    """Greedy gap repair: fill a gap when a candidate keeps monotonicity.

    Frames whose candidates would go back relative to the surrounding
    matches stay gaps. A no-op on paths already produced by the optimal
    dynamic program.
    """
    indices = path.indices.copy()
    if candidates is None:
        return AlignmentPath(indices)
    n = len(indices)
    for k in range(n):
        if indices[k] != GAP or not candidates[k]:
            continue
        prev = indices[:k][indices[:k] != GAP]
        nxt = indices[k + 1:][indices[k + 1:] != GAP]
        lo = int(prev[-1]) if prev.size else -np.inf
        hi = int(nxt[0]) if nxt.size else np.inf
        fitting = sorted(v for v in candidates[k] if lo <= v <= hi)
        if fitting:
            indices[k] = fitting[0]
    return AlignmentPath(indices)


def _gaussian_kernel(sigma: float, halfwidth_sigmas: float) -> np.ndarray:
    half = max(1, int(np.ceil(halfwidth_sigmas * sigma)))
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _smooth_curve(curve: np.ndarray, sigma: float, halfwidth_sigmas: float) -> np.ndarray:
    kernel = _gaussian_kernel(sigma, halfwidth_sigmas)
    padded = np.convolve(curve, kernel, mode="same")
    # renormalize at the edges where the kernel is truncated
    weight = np.convolve(np.ones_like(curve), kernel, mode="same")
    return padded / weight


def adaptive_smooth(path: AlignmentPath, cfg: SmoothingConfig = SmoothingConfig()) -> AlignmentPath:
    """Fill gaps, smooth with the smallest adequate sigma, make non-decreasing.

    Gaps are linearly interpolated between matches; leading/trailing
    frames take the first/last matched index. Sigma is the smallest grid
    value whose smoothed curve has max |second difference| at or below
    the threshold (largest grid value if none qualifies). The rounded
    result is forced non-decreasing with a running max.
    """
    indices = path.indices
    matched = np.flatnonzero(indices != GAP)
    if matched.size < 2:
        return AlignmentPath(indices.copy())  # identity fallback
    x = np.arange(len(indices), dtype=np.float64)
    curve = np.interp(x, matched.astype(np.float64), indices[matched].astype(np.float64))
    chosen = None
    for sigma in cfg.sigma_grid:
        smoothed = _smooth_curve(curve, sigma, cfg.kernel_halfwidth_sigmas)
        if len(smoothed) < 3 or np.abs(np.diff(smoothed, 2)).max() <= cfg.criterion_threshold:
            chosen = smoothed
            break
    if chosen is None:
        chosen = _smooth_curve(curve, cfg.sigma_grid[-1], cfg.kernel_halfwidth_sigmas)
    out = np.maximum.accumulate(np.round(chosen).astype(np.int64))
    # pad past the last real match with the final matched index
    out[matched[-1] + 1:] = out[matched[-1]]
    return AlignmentPath(out)


def render_video_warp(video: FeatureSequence, path: AlignmentPath) -> FeatureSequence:
    """Re-time the video: output frame k is video frame path[k]."""
    if not path.is_dense():
        raise ValueError("render_video_warp needs a dense (gap-free) path")
    idx = path.indices
    if idx.min() < 0 or idx.max() >= len(video):
        raise ValueError("path index out of video bounds")
    return FeatureSequence(video.frames[idx], video.frame_rate)


def estimate_global_shift(audio: FeatureSequence, video: FeatureSequence,
                          params: ModelParams, stride: int = 10,
                          decode: str = "lattice",
                          distance_weight: float = 0.5) -> int:
    """Mode of per-frame offsets between voted indices and the centered identity."""
    table = windowed_predict(audio, video, params, stride=stride, decode=decode,
                             distance_weight=distance_weight)
    counts = {}
    for t, cands in enumerate(candidate_sets(table)):
        for v in cands:
            offset = v - t
            counts[offset] = counts.get(offset, 0) + 1
    if not counts:
        return 0
    best = max(counts.values())
    ties = [o for o, c in counts.items() if c == best]
    shift = min(ties, key=lambda o: (abs(o), o))
    return int(np.clip(shift, -MAX_SHIFT, MAX_SHIFT))


def align_audio_to_video(audio: FeatureSequence, video: FeatureSequence,
                         params: ModelParams, stride: int = 10,
                         decode: str = "lattice",
                         distance_weight: float = 0.5) -> VoteTable:
    """Role-swapped alignment: video frames query the audio stream.

    Runs the same checkpoint with the encoder assignment swapped; the
    returned vote table is indexed by video frame and votes on audio
    indices.
    """
    return windowed_predict(video, audio, params, stride=stride, swap_roles=True,
                            decode=decode, distance_weight=distance_weight)


def full_alignment(audio: FeatureSequence, video: FeatureSequence, params: ModelParams,
                   stride: int = 10, smoothing: SmoothingConfig = SmoothingConfig(),
                   swap_roles: bool = False, decode: str = "lattice",
                   distance_weight: float = 0.5):
    """The complete inference pipeline; returns (dense path, raw path, votes)."""
    if swap_roles:
        table = align_audio_to_video(audio, video, params, stride=stride, decode=decode,
                                     distance_weight=distance_weight)
    else:
        table = windowed_predict(audio, video, params, stride=stride, decode=decode,
                                 distance_weight=distance_weight)
    cands = candidate_sets(table)
    raw = resume_after_break(longest_monotone_match(cands), cands)
    dense = adaptive_smooth(raw, smoothing)
    return dense, raw, table

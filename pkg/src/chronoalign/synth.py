"""Synthetic cross-modal pairs and misalignment augmentation.

A Markov latent script drives both modalities through fixed per-dataset
mixing matrices. Video streams are perturbed by random frame drops and
duplications (displacement-bounded, occurrence-capped) plus a global
audio shift, and the induced ground-truth audio-to-video label map is
constructed exactly: dropped frames map to the closest survivor (ties
toward the later frame), duplicated frames to their last occurrence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .features import FeatureSequence
from .seeding import derive_seed, rng_for

SENTINEL = -1

# Canonical window geometry: 25 audio frames centered in 75 video frames.
AUDIO_WINDOW = 25
VIDEO_WINDOW = 75
WINDOW_OFFSET = 25
MAX_SHIFT = 25
FRAME_RATE = 25.0


@dataclass
class LatentScript:
    """Discrete latent symbols, one per 25 fps frame."""

    states: np.ndarray
    n_symbols: int

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        if self.states.size and not (0 <= self.states.min() and self.states.max() < self.n_symbols):
            raise ValueError("latent states out of range")


@dataclass
class SyntheticPair:
    video_feats: FeatureSequence
    audio_feats: FeatureSequence
    script: LatentScript

    def __post_init__(self):
        if self.video_feats.frame_rate != self.audio_feats.frame_rate:
            raise ValueError("modalities must share a frame rate")
        if len(self.video_feats) != len(self.audio_feats):
            raise ValueError("synthetic modalities must cover the same frames")


@dataclass(frozen=True)
class EditAction:
    kind: str  # "drop" | "duplicate"
    source_index: int

    def __post_init__(self):
        if self.kind not in ("drop", "duplicate"):
            raise ValueError(f"unknown edit kind {self.kind!r}")


@dataclass
class EditScript:
    actions: list
    max_displacement: int = 25
    max_occurrences: int = 4


@dataclass
class LabelMap:
    """Per audio frame, the target index into the modified video stream."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def __len__(self):
        return self.labels.size


def sample_markov_script(rng: np.random.Generator, m: int, n_symbols: int,
                         self_transition: float = 0.7) -> LatentScript:
    states = np.empty(m, dtype=np.int64)
    states[0] = rng.integers(n_symbols)
    for j in range(1, m):
        if rng.random() < self_transition:
            states[j] = states[j - 1]
        else:
            states[j] = rng.integers(n_symbols)
    return LatentScript(states, n_symbols)


def mixing_matrices(dataset_seed: int, n_symbols: int, video_dim: int, audio_dim: int):
    """Per-dataset mixing matrices shared by train and test pairs."""
    rng = rng_for(dataset_seed, "mixing")
    a = rng.normal(size=(video_dim, n_symbols))
    b = rng.normal(size=(audio_dim, n_symbols))
    return a, b


def gen_synthetic_pair(rng_seed: int, m: int, n_symbols: int, dims, noise_sigma: float,
                       mixing=None, dataset_seed: int = 0,
                       self_transition: float = 0.7) -> SyntheticPair:
    """Sample one aligned pair from a shared Markov latent script.

    dims is (video_dim, audio_dim). Mixing matrices come from
    `dataset_seed` (drawn once per dataset) unless given explicitly.
    """
    video_dim, audio_dim = dims
    if m < VIDEO_WINDOW:
        raise ValueError(f"need at least {VIDEO_WINDOW} frames, got {m}")
    if video_dim < 4 or audio_dim < 4:
        raise ValueError("modal dims must be >= 4")
    if mixing is None:
        mixing = mixing_matrices(dataset_seed, n_symbols, video_dim, audio_dim)
    a, b = mixing
    rng = np.random.default_rng(rng_seed)
    script = sample_markov_script(rng, m, n_symbols, self_transition)
    video = a[:, script.states].T.copy()
    audio = b[:, script.states].T.copy()
    if noise_sigma > 0:
        video += rng.normal(scale=noise_sigma, size=video.shape)
        audio += rng.normal(scale=noise_sigma, size=audio.shape)
    return SyntheticPair(FeatureSequence(video, FRAME_RATE),
                         FeatureSequence(audio, FRAME_RATE), script)


def sample_edit_script(rng_seed, m: int, p_drop: float, p_dup: float,
                       max_displacement: int = 25, max_occurrences: int = 4) -> EditScript:
    """Sample drops/duplications left to right with local rejection.

    Tracks the running position offset (modified minus original index) so
    that every emitted copy stays within max_displacement of its source;
    candidate actions that would break the bound or the occurrence cap
    are rejected.
    """
    if not (0.0 <= p_drop <= 0.3 and 0.0 <= p_dup <= 0.3):
        raise ValueError("p_drop and p_dup must lie in [0, 0.3]")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    actions = []
    offset = 0  # modified position minus original index at the current frame
    for j in range(m):
        if offset > -max_displacement and rng.random() < p_drop:
            actions.append(EditAction("drop", j))
            offset -= 1
            continue
        copies = 1
        while copies < max_occurrences and offset + copies <= max_displacement \
                and rng.random() < p_dup:
            actions.append(EditAction("duplicate", j))
            copies += 1
        offset += copies - 1
    return EditScript(actions, max_displacement, max_occurrences)


def apply_edit(video: FeatureSequence, script: EditScript, truncate_to: int | None = None):
    """Apply an edit script; returns the modified stream and provenance.

    provenance[p] is the original index of modified frame p. Frames past
    `truncate_to` are removed (they fall after the audio boundaries).
    """
    m = len(video)
    per_frame = {}
    for act in script.actions:
        if not 0 <= act.source_index < m:
            raise ValueError(f"edit action out of bounds: {act}")
        per_frame.setdefault(act.source_index, []).append(act.kind)
    provenance = []
    for j in range(m):
        kinds = per_frame.get(j, [])
        if "drop" in kinds:
            continue
        provenance.extend([j] * (1 + kinds.count("duplicate")))
    if truncate_to is not None:
        provenance = provenance[:truncate_to]
    prov = np.asarray(provenance, dtype=np.int64)
    return FeatureSequence(video.frames[prov], video.frame_rate), prov


def undo_edit(modified: FeatureSequence, provenance: np.ndarray,
              original: FeatureSequence) -> FeatureSequence:
    """Collapse duplicates and reinsert drops; inverse of apply_edit."""
    frames = original.frames.copy()
    used = set(int(p) for p in provenance)
    for p in used:
        first = int(np.flatnonzero(provenance == p)[0])
        frames[p] = modified.frames[first]
    return FeatureSequence(frames, original.frame_rate)


def build_label_map(provenance: np.ndarray, n_audio_frames: int, global_shift: int,
                    window_offset: int = WINDOW_OFFSET,
                    n_original: int | None = None) -> LabelMap:
    """Ground-truth targets into the modified stream.

    Audio frame k corresponds to original frame k + shift + offset; a
    surviving original maps to its last occurrence, a dropped one to the
    closest survivor (ties toward the later frame). Targets outside the
    original stream get the sentinel.
    """
    if abs(global_shift) > MAX_SHIFT:
        raise ValueError(f"|global_shift| must be <= {MAX_SHIFT}")
    provenance = np.asarray(provenance, dtype=np.int64)
    if n_original is None:
        n_original = int(provenance.max()) + 1 if provenance.size else 0
    last_pos = {}
    for p, orig in enumerate(provenance):
        last_pos[int(orig)] = p
    survivors = np.array(sorted(last_pos), dtype=np.int64)
    labels = np.full(n_audio_frames, SENTINEL, dtype=np.int64)
    for k in range(n_audio_frames):
        target = k + global_shift + window_offset
        if target < 0 or target >= n_original or survivors.size == 0:
            continue
        if target in last_pos:
            labels[k] = last_pos[target]
            continue
        i = int(np.searchsorted(survivors, target))
        if i == 0:
            nearest = survivors[0]
        elif i == survivors.size:
            nearest = survivors[-1]
        else:
            lo, hi = survivors[i - 1], survivors[i]
            nearest = hi if (target - lo) >= (hi - target) else lo
        labels[k] = last_pos[int(nearest)]
    return LabelMap(labels)


@dataclass
class TrainingExample:
    audio: np.ndarray   # (25, audio_dim)
    video: np.ndarray   # (75, video_dim)
    labels: np.ndarray  # (25,) targets into the video window, SENTINEL for none
    global_shift: int
    provenance: np.ndarray


def make_training_example(pair: SyntheticPair, rng_seed: int,
                          p_drop: float = 0.0, p_dup: float = 0.0,
                          edit_span: int = 100) -> TrainingExample:
    """Cut one (audio 25, video 75) training window with labels.

    Edits are sampled over the first `edit_span` original frames so the
    modified stream can be truncated back to a full 75-frame window; the
    audio window carries a uniform global shift in [-25, 25].
    """
    with_edits = p_drop > 0 or p_dup > 0
    span = min(edit_span, len(pair.video_feats)) if with_edits else VIDEO_WINDOW
    if len(pair.video_feats) < span or span < VIDEO_WINDOW:
        raise ValueError("pair too short for a training window")
    for attempt in range(32):
        rng = np.random.default_rng(derive_seed(rng_seed, "example", attempt))
        shift = int(rng.integers(-MAX_SHIFT, MAX_SHIFT + 1))
        if with_edits:
            script = sample_edit_script(rng, span, p_drop, p_dup)
        else:
            script = EditScript([])
        window_src = FeatureSequence(pair.video_feats.frames[:span], FRAME_RATE)
        video, prov = apply_edit(window_src, script, truncate_to=VIDEO_WINDOW)
        if len(video) < VIDEO_WINDOW:
            continue  # rare: heavy tail drops; resample deterministically
        start = WINDOW_OFFSET + shift
        audio = pair.audio_feats.frames[start:start + AUDIO_WINDOW]
        labels = build_label_map(prov, AUDIO_WINDOW, shift, WINDOW_OFFSET, n_original=span)
        return TrainingExample(audio.copy(), video.frames, labels.labels, shift, prov)
    raise RuntimeError("could not sample a valid training example")


@dataclass
class DatasetConfig:
    """Manifest describing a synthetic dataset; examples are materialized on demand."""

    dataset_seed: int = 0
    n_symbols: int = 24
    video_dim: int = 16
    audio_dim: int = 16
    noise_sigma: float = 0.05
    p_drop: float = 0.12
    p_dup: float = 0.12
    self_transition: float = 0.7
    pair_frames: int = 120
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 200

    def splits(self) -> dict:
        a, b = self.n_train, self.n_train + self.n_val
        return {"train": [0, a], "val": [a, b], "test": [b, b + self.n_test]}


class SyntheticDataset:
    """Deterministic on-demand example factory over a DatasetConfig."""

    def __init__(self, config: DatasetConfig):
        self.config = config
        self._mixing = mixing_matrices(config.dataset_seed, config.n_symbols,
                                       config.video_dim, config.audio_dim)

    def _pair(self, index: int) -> SyntheticPair:
        c = self.config
        return gen_synthetic_pair(
            derive_seed(c.dataset_seed, "pair", index), c.pair_frames, c.n_symbols,
            (c.video_dim, c.audio_dim), c.noise_sigma, mixing=self._mixing,
            self_transition=c.self_transition)

    def example(self, index: int, shift_only: bool = False) -> TrainingExample:
        c = self.config
        tag = "shift_only" if shift_only else "edited"
        seed = derive_seed(c.dataset_seed, tag, index)
        if shift_only:
            return make_training_example(self._pair(index), seed)
        return make_training_example(self._pair(index), seed, c.p_drop, c.p_dup)

    def split_indices(self, split: str) -> range:
        lo, hi = self.config.splits()[split]
        return range(lo, hi)


def write_manifest(config: DatasetConfig, path) -> None:
    doc = asdict(config)
    doc["format"] = "chronoalign-manifest-v1"
    doc["splits"] = config.splits()
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(path) -> DatasetConfig:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "chronoalign-manifest-v1":
        raise ValueError(f"not a dataset manifest: {path}")
    fields = {k: doc[k] for k in DatasetConfig.__dataclass_fields__ if k in doc}
    return DatasetConfig(**fields)

"""Feature sequences: fixed-dimension frame vectors at a fixed frame rate.

Serves both modalities (stacked MFCC audio inputs and per-frame video
feature vectors), plus text and binary file round-trips.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

TEXT_MAGIC = "CHRONOFEAT v1"
BINARY_MAGIC = b"CFT1"


@dataclass
class FeatureSequence:
    """A time-ordered sequence of fixed-dimension feature vectors.

    frames: (n, d) array, one row per frame
    frame_rate: frames per second
    """

    frames: np.ndarray
    frame_rate: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError(f"frames must be 2-D (n, d), got shape {self.frames.shape}")
        if self.frame_rate <= 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.frames.shape[0]

    def duration(self) -> float:
        return len(self) / self.frame_rate


def write_features_text(seq: FeatureSequence, path) -> None:
    """Write the text format: header line then one line of floats per frame."""
    n, d = seq.frames.shape
    with open(path, "w") as f:
        f.write(f"{TEXT_MAGIC} dim={d} rate={seq.frame_rate:.9g} count={n}\n")
        for row in seq.frames:
            f.write(" ".join(f"{x:.9g}" for x in row) + "\n")


def read_features_text(path) -> FeatureSequence:
    with open(path) as f:
        header = f.readline().rstrip("\n")
        if not header.startswith(TEXT_MAGIC):
            raise ValueError(f"bad feature file header: {header!r}")
        fields = dict(tok.split("=") for tok in header[len(TEXT_MAGIC):].split())
        d = int(fields["dim"])
        rate = float(fields["rate"])
        n = int(fields["count"])
        frames = np.empty((n, d))
        for i in range(n):
            row = np.array(f.readline().split(), dtype=np.float64)
            if row.size != d:
                raise ValueError(f"line {i + 2}: expected {d} values, got {row.size}")
            frames[i] = row
    return FeatureSequence(frames, rate)


def write_features_binary(seq: FeatureSequence, path) -> None:
    """Write the binary format: CFT1, u32 (d, rate*1000, n), then f32 frames."""
    n, d = seq.frames.shape
    rate_milli = int(round(seq.frame_rate * 1000))
    with open(path, "wb") as f:
        f.write(BINARY_MAGIC)
        f.write(struct.pack("<III", d, rate_milli, n))
        f.write(seq.frames.astype("<f4").tobytes())


def read_features_binary(path) -> FeatureSequence:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != BINARY_MAGIC:
            raise ValueError(f"bad binary feature magic: {magic!r}")
        d, rate_milli, n = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(4 * n * d), dtype="<f4")
        if data.size != n * d:
            raise ValueError("truncated binary feature file")
    return FeatureSequence(data.reshape(n, d).astype(np.float64), rate_milli / 1000.0)


def read_features(path) -> FeatureSequence:
    """Read either format, sniffing the magic bytes."""
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == BINARY_MAGIC:
        return read_features_binary(path)
    return read_features_text(path)

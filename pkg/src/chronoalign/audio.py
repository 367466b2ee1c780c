"""PCM audio ingestion and MFCC features.

16 kHz mono pipeline: 25 ms Hamming windows, 10 ms hop, triangular mel
filterbank on the HTK mel scale, log energies, orthonormal DCT-II.
The same code path produces the 60-coefficient mel cepstra used by the
MCD evaluation (64 ms window, 5 ms hop).
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np
import scipy.fft

LOG_FLOOR = 1e-10


class UnsupportedFormatError(ValueError):
    """Raised for WAV files that are not 16-bit PCM."""


class SilentAudioError(ValueError):
    """Raised when an operation needs a non-silent signal."""


@dataclass
class PcmAudio:
    """Mono PCM samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2))) if len(self.samples) else 0.0


@dataclass(frozen=True)
class MfccConfig:
    n_mel_bands: int = 13
    window_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int | None = None  # default: smallest power of two >= window samples
    mel_low_hz: float = 0.0
    mel_high_hz: float | None = None  # default: Nyquist
    include_c0: bool = True

    def validate(self, sample_rate: int) -> None:
        if self.n_mel_bands < 1:
            raise ValueError("n_mel_bands must be >= 1")
        if self.hop_ms > self.window_ms:
            raise ValueError("hop_ms must be <= window_ms")
        high = self.mel_high_hz if self.mel_high_hz is not None else sample_rate / 2
        if not self.mel_low_hz < high <= sample_rate / 2:
            raise ValueError("need mel_low_hz < mel_high_hz <= sample_rate/2")

    def window_samples(self, sample_rate: int) -> int:
        return int(round(sample_rate * self.window_ms / 1000))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(sample_rate * self.hop_ms / 1000))

    def fft_size(self, sample_rate: int) -> int:
        if self.n_fft is not None:
            return self.n_fft
        n = 1
        while n < self.window_samples(sample_rate):
            n *= 2
        return n


MCD_MFCC_CONFIG = MfccConfig(n_mel_bands=60, window_ms=64.0, hop_ms=5.0)


def load_wav(path) -> PcmAudio:
    """Load a RIFF/WAVE file (PCM 16-bit, mono or stereo) as mono [-1, 1]."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE":
                raise UnsupportedFormatError(f"compressed WAV not supported: {w.getcomptype()}")
            if w.getsampwidth() != 2:
                raise UnsupportedFormatError(f"only 16-bit PCM supported, got {8 * w.getsampwidth()}-bit")
            n_channels = w.getnchannels()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as e:
        raise UnsupportedFormatError(f"malformed WAV file {path}: {e}") from e
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    return PcmAudio(data, rate)


def write_wav(audio: PcmAudio, path) -> None:
    """Write 16-bit PCM mono WAV; samples are clipped to [-1, 1)."""
    data = np.clip(audio.samples, -1.0, 32767 / 32768.0)
    ints = np.round(data * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate)
        w.writeframes(ints.tobytes())


def normalize_dbfs(audio: PcmAudio, target_dbfs: float) -> PcmAudio:
    """Scale the signal so its RMS equals 10**(target_dbfs / 20)."""
    rms = audio.rms()
    if rms <= 0.0:
        raise SilentAudioError("cannot normalize a silent signal")
    gain = 10.0 ** (target_dbfs / 20.0) / rms
    return PcmAudio(audio.samples * gain, audio.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_bands: int, n_fft: int, sample_rate: int,
                   low_hz: float, high_hz: float) -> np.ndarray:
    """Triangular mel filters, (n_bands, n_fft//2 + 1)."""
    mel_pts = np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), n_bands + 2)
    hz_pts = mel_to_hz(mel_pts)
    bins = hz_pts / sample_rate * n_fft  # fractional FFT bin positions
    freqs = np.arange(n_fft // 2 + 1, dtype=np.float64)
    fb = np.zeros((n_bands, freqs.size))
    for b in range(n_bands):
        left, center, right = bins[b], bins[b + 1], bins[b + 2]
        up = (freqs - left) / max(center - left, 1e-12)
        down = (right - freqs) / max(right - center, 1e-12)
        fb[b] = np.maximum(0.0, np.minimum(up, down))
    return fb


def filter_centers_hz(cfg: MfccConfig, sample_rate: int) -> np.ndarray:
    high = cfg.mel_high_hz if cfg.mel_high_hz is not None else sample_rate / 2
    mel_pts = np.linspace(hz_to_mel(cfg.mel_low_hz), hz_to_mel(high), cfg.n_mel_bands + 2)
    return mel_to_hz(mel_pts[1:-1])


def frame_signal(samples: np.ndarray, window: int, hop: int) -> np.ndarray:
    """Slice a 1-D signal into (n_frames, window); n = floor((N-W)/H) + 1."""
    n = (len(samples) - window) // hop + 1
    if n < 1:
        raise ValueError(f"signal of {len(samples)} samples shorter than one window ({window})")
    idx = np.arange(window)[None, :] + hop * np.arange(n)[:, None]
    return samples[idx]


def log_mel_energies(audio: PcmAudio, cfg: MfccConfig) -> np.ndarray:
    """Per-frame log mel-band energies, (n_frames, n_mel_bands)."""
    cfg.validate(audio.sample_rate)
    win = cfg.window_samples(audio.sample_rate)
    hop = cfg.hop_samples(audio.sample_rate)
    n_fft = cfg.fft_size(audio.sample_rate)
    frames = frame_signal(audio.samples, win, hop) * np.hamming(win)
    spectrum = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))
    high = cfg.mel_high_hz if cfg.mel_high_hz is not None else audio.sample_rate / 2
    fb = mel_filterbank(cfg.n_mel_bands, n_fft, audio.sample_rate, cfg.mel_low_hz, high)
    return np.log(np.maximum(spectrum @ fb.T, LOG_FLOOR))


def compute_mfcc(audio: PcmAudio, cfg: MfccConfig = MfccConfig()):
    """MFCC frames: Hamming window, mel filterbank, log, orthonormal DCT-II."""
    from .features import FeatureSequence

    log_e = log_mel_energies(audio, cfg)
    coeffs = scipy.fft.dct(log_e, type=2, norm="ortho", axis=1)
    if not cfg.include_c0:
        coeffs = coeffs[:, 1:]
    return FeatureSequence(coeffs, 1000.0 / cfg.hop_ms)


def stack_audio_frames(mfcc, steps: int = 20, stride_ms: float = 40.0):
    """Stack consecutive MFCC frames into flattened model inputs.

    Each output frame is the C-order flattening of a (steps, dim) block;
    consecutive outputs advance by stride_ms.
    """
    from .features import FeatureSequence

    hop_ms = 1000.0 / mfcc.frame_rate
    stride = stride_ms / hop_ms
    if abs(stride - round(stride)) > 1e-9:
        raise ValueError(f"stride_ms {stride_ms} not divisible by hop {hop_ms} ms")
    stride = int(round(stride))
    t = len(mfcc)
    if t < steps:
        raise ValueError(f"need at least {steps} MFCC frames, got {t}")
    count = (t - steps) // stride + 1
    out = np.stack([mfcc.frames[s * stride:s * stride + steps].reshape(-1) for s in range(count)])
    return FeatureSequence(out, 1000.0 / stride_ms)

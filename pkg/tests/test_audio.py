import numpy as np
import pytest
import scipy.fft

from chronoalign.audio import (MCD_MFCC_CONFIG, MfccConfig, PcmAudio,
                               SilentAudioError, UnsupportedFormatError,
                               compute_mfcc, filter_centers_hz, frame_signal,
                               hz_to_mel, load_wav, log_mel_energies,
                               mel_filterbank, mel_to_hz, normalize_dbfs,
                               stack_audio_frames, write_wav)

SR = 16000


def sine(freq, seconds=1.0, amp=0.5, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return PcmAudio(amp * np.sin(2 * np.pi * freq * t), sr)


# ---------------------------------------------------------------------------
# WAV IO

def test_load_wav_all_zero(tmp_path):
    p = tmp_path / "z.wav"
    write_wav(PcmAudio(np.zeros(1000), SR), p)
    back = load_wav(p)
    assert back.sample_rate == SR
    np.testing.assert_array_equal(back.samples, 0.0)


def test_duration_definition():
    assert PcmAudio(np.zeros(16000), SR).duration() == pytest.approx(1.0)


def test_wav_round_trip_440hz(tmp_path):
    audio = sine(440.0)
    p = tmp_path / "s.wav"
    write_wav(audio, p)
    back = load_wav(p)
    assert np.abs(back.samples - audio.samples).max() <= 1.0 / 32768.0


def test_load_wav_stereo_averages(tmp_path):
    import wave
    left = (np.arange(100) % 7 - 3) / 100.0
    right = -left
    inter = np.empty(200)
    inter[0::2], inter[1::2] = left, right
    ints = np.round(inter * 32768.0).astype("<i2")
    p = tmp_path / "st.wav"
    with wave.open(str(p), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(SR)
        w.writeframes(ints.tobytes())
    back = load_wav(p)
    expected = ints.reshape(-1, 2).mean(axis=1) / 32768.0
    np.testing.assert_allclose(back.samples, expected)


def test_load_wav_rejects_8bit(tmp_path):
    import wave
    p = tmp_path / "8.wav"
    with wave.open(str(p), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(1)
        w.setframerate(SR)
        w.writeframes(bytes(100))
    with pytest.raises(UnsupportedFormatError):
        load_wav(p)


def test_load_wav_rejects_garbage(tmp_path):
    p = tmp_path / "g.wav"
    p.write_bytes(b"not a riff file at all")
    with pytest.raises(UnsupportedFormatError):
        load_wav(p)


# ---------------------------------------------------------------------------
# dBFS normalization

def test_normalize_fixed_point():
    target = -30.0
    audio = sine(200.0)
    once = normalize_dbfs(audio, target)
    twice = normalize_dbfs(once, target)
    np.testing.assert_allclose(twice.samples, once.samples, rtol=1e-6)
    assert once.rms() == pytest.approx(10 ** (target / 20.0), rel=1e-6)


def test_normalize_full_scale_sine_gain():
    # RMS of a full-scale sine is 1/sqrt(2); gain to -30 dBFS is 10^-1.5 * sqrt(2)
    audio = sine(100.0, amp=1.0)
    out = normalize_dbfs(audio, -30.0)
    gain = out.samples[100] / audio.samples[100]
    assert gain == pytest.approx(10 ** (-1.5) * np.sqrt(2.0), rel=1e-3)


def test_normalize_silent_raises():
    with pytest.raises(SilentAudioError):
        normalize_dbfs(PcmAudio(np.zeros(100), SR), -30.0)


# ---------------------------------------------------------------------------
# MFCC pipeline

def test_frame_count_one_second():
    # floor((16000 - 400) / 160) + 1 = 98
    feats = compute_mfcc(sine(300.0), MfccConfig())
    assert len(feats) == 98
    assert feats.dim == 13
    assert feats.frame_rate == pytest.approx(100.0)


def test_frame_count_formula_random_lengths():
    rng = np.random.default_rng(7)
    w, h = 400, 160
    for _ in range(50):
        n = int(rng.integers(w, 5 * SR))
        audio = PcmAudio(rng.normal(scale=0.1, size=n), SR)
        assert len(compute_mfcc(audio)) == (n - w) // h + 1


def test_too_short_raises():
    with pytest.raises(ValueError):
        compute_mfcc(PcmAudio(np.zeros(399), SR))


def test_dc_input_constant_frames():
    audio = PcmAudio(np.full(SR, 0.25), SR)
    feats = compute_mfcc(audio)
    assert np.abs(feats.frames - feats.frames[0]).max() <= 1e-12


def test_1khz_sine_peak_band():
    cfg = MfccConfig()
    audio = sine(1000.0)
    log_e = log_mel_energies(audio, cfg)
    centers = filter_centers_hz(cfg, SR)
    expected_band = int(np.argmin(np.abs(centers - 1000.0)))
    assert int(np.argmax(log_e[len(log_e) // 2])) == expected_band


def test_1khz_frame_matches_direct_dft_oracle():
    """Recompute one frame's log mel energies with an explicit DFT sum."""
    cfg = MfccConfig()
    audio = sine(1000.0)
    log_e = log_mel_energies(audio, cfg)
    w = cfg.window_samples(SR)
    hop = cfg.hop_samples(SR)
    n_fft = cfg.fft_size(SR)
    frame = audio.samples[10 * hop:10 * hop + w] * np.hamming(w)
    k = np.arange(n_fft // 2 + 1)
    t = np.arange(w)
    dft = np.abs((frame[None, :] * np.exp(-2j * np.pi * k[:, None] * t[None, :] / n_fft)).sum(axis=1))
    fb = mel_filterbank(cfg.n_mel_bands, n_fft, SR, 0.0, SR / 2)
    oracle = np.log(np.maximum(fb @ dft, 1e-10))
    np.testing.assert_allclose(log_e[10], oracle, atol=1e-8)


def test_mel_scale_endpoints():
    assert hz_to_mel(0.0) == 0.0
    assert mel_to_hz(hz_to_mel(700.0)) == pytest.approx(700.0)
    # HTK convention: mel(1000 Hz) = 2595 log10(1 + 1000/700)
    assert hz_to_mel(1000.0) == pytest.approx(2595.0 * np.log10(1 + 1000 / 700))


def test_filterbank_rows_nonnegative_and_positive_sum():
    fb = mel_filterbank(13, 512, SR, 0.0, SR / 2)
    assert fb.min() >= 0.0
    assert (fb.sum(axis=1) > 0).all()


def test_filter_centers_increasing():
    centers = filter_centers_hz(MfccConfig(), SR)
    assert (np.diff(centers) > 0).all()


def test_dct_round_trip():
    rng = np.random.default_rng(3)
    x = rng.normal(size=13)
    c = scipy.fft.dct(x, type=2, norm="ortho")
    back = scipy.fft.idct(c, type=2, norm="ortho")
    np.testing.assert_allclose(back, x, atol=1e-9)


def test_dct_basis_orthonormal():
    d = scipy.fft.dct(np.eye(13), type=2, norm="ortho", axis=0)
    np.testing.assert_allclose(d @ d.T, np.eye(13), atol=1e-9)


def test_time_shift_drops_leading_frames():
    rng = np.random.default_rng(11)
    samples = rng.normal(scale=0.1, size=SR)
    cfg = MfccConfig()
    hop = cfg.hop_samples(SR)
    full = compute_mfcc(PcmAudio(samples, SR), cfg)
    for k in (1, 3):
        shifted = compute_mfcc(PcmAudio(samples[k * hop:], SR), cfg)
        np.testing.assert_allclose(shifted.frames, full.frames[k:k + len(shifted)],
                                   atol=1e-9)


def test_include_c0_flag():
    feats = compute_mfcc(sine(500.0), MfccConfig(include_c0=False))
    assert feats.dim == 12


def test_mcd_config_geometry():
    assert MCD_MFCC_CONFIG.n_mel_bands == 60
    assert MCD_MFCC_CONFIG.window_samples(SR) == 1024
    assert MCD_MFCC_CONFIG.hop_samples(SR) == 80
    feats = compute_mfcc(sine(500.0), MCD_MFCC_CONFIG)
    assert feats.dim == 60
    assert feats.frame_rate == pytest.approx(200.0)


# ---------------------------------------------------------------------------
# frame stacking

def test_stack_count_formula():
    mfcc = compute_mfcc(sine(300.0))  # 98 frames at 100 fps
    stacked = stack_audio_frames(mfcc, steps=20, stride_ms=40.0)
    assert len(stacked) == (98 - 20) // 4 + 1  # 20
    assert stacked.dim == 260
    assert stacked.frame_rate == pytest.approx(25.0)


def test_stack_identity_degenerate():
    mfcc = compute_mfcc(sine(300.0))
    stacked = stack_audio_frames(mfcc, steps=1, stride_ms=10.0)
    np.testing.assert_array_equal(stacked.frames, mfcc.frames)


def test_stack_single_block_boundary():
    from chronoalign.features import FeatureSequence
    mfcc = FeatureSequence(np.arange(20 * 13, dtype=float).reshape(20, 13), 100.0)
    stacked = stack_audio_frames(mfcc, steps=20, stride_ms=40.0)
    assert len(stacked) == 1
    np.testing.assert_array_equal(stacked.frames[0], mfcc.frames.reshape(-1))


def test_stack_bit_identical_to_manual_slicing():
    rng = np.random.default_rng(5)
    from chronoalign.features import FeatureSequence
    mfcc = FeatureSequence(rng.normal(size=(57, 13)), 100.0)
    stacked = stack_audio_frames(mfcc, steps=20, stride_ms=40.0)
    for s in range(len(stacked)):
        np.testing.assert_array_equal(stacked.frames[s],
                                      mfcc.frames[4 * s:4 * s + 20].reshape(-1))


def test_stack_too_short_raises():
    from chronoalign.features import FeatureSequence
    mfcc = FeatureSequence(np.zeros((19, 13)), 100.0)
    with pytest.raises(ValueError):
        stack_audio_frames(mfcc, steps=20)


def test_stack_indivisible_stride_raises():
    from chronoalign.features import FeatureSequence
    mfcc = FeatureSequence(np.zeros((40, 13)), 100.0)
    with pytest.raises(ValueError):
        stack_audio_frames(mfcc, steps=20, stride_ms=25.0)


def test_frame_signal_shape():
    frames = frame_signal(np.arange(100.0), 30, 20)
    assert frames.shape == (4, 30)
    np.testing.assert_array_equal(frames[1], np.arange(20.0, 50.0))

import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chronoalign import infer
from chronoalign.features import FeatureSequence
from chronoalign.infer import (GAP, AlignmentPath, SmoothingConfig, VoteTable,
                               adaptive_smooth, candidate_sets,
                               estimate_global_shift, full_alignment,
                               longest_monotone_match, read_path,
                               render_video_warp, resume_after_break,
                               windowed_predict, write_path)
from chronoalign.model import AlignerConfig, init_params
from chronoalign.seeding import rng_for

TINY = AlignerConfig(n=5, m=15, audio_dim=4, video_dim=4, enc_hidden=8,
                     embed_dim=8, rnn_hidden=8, attn_dim=8, y_embed_dim=4,
                     mlp_hidden=(8,))


@pytest.fixture(scope="module")
def tiny_params():
    return init_params(TINY, rng_for(0, "tiny"))


def _feat(n, d=4, seed=0):
    return FeatureSequence(np.random.default_rng(seed).normal(size=(n, d)), 25.0)


# ---------------------------------------------------------------------------
# path file IO

def test_path_round_trip(tmp_path):
    p = AlignmentPath(np.array([3, GAP, 5, 5, 9]))
    f = tmp_path / "p.txt"
    write_path(p, f)
    back = read_path(f)
    np.testing.assert_array_equal(back.indices, p.indices)
    assert f.read_text().splitlines()[0] == "CHRONOPATH v1 count=5"


def test_path_bad_header(tmp_path):
    f = tmp_path / "bad.txt"
    f.write_text("nope\n1\n")
    with pytest.raises(ValueError):
        read_path(f)


def test_path_flags():
    assert AlignmentPath(np.array([1, GAP, 2])).is_monotone()
    assert not AlignmentPath(np.array([3, 2])).is_monotone()
    assert AlignmentPath(np.array([1, 2])).is_dense()
    assert not AlignmentPath(np.array([1, GAP])).is_dense()


# ---------------------------------------------------------------------------
# windowed prediction

def test_single_window_one_vote_each(tiny_params):
    table = windowed_predict(_feat(5), _feat(15, seed=1), tiny_params)
    assert len(table) == 5
    assert table.window_starts == [0]
    for votes in table.votes:
        assert sum(votes.values()) == 1


def test_window_coverage_counts(tiny_params):
    # 15 audio frames, n=5, stride 2 -> starts 0,2,...,10; interior frames
    # get up to ceil(n/stride)=3 votes, and absolute indices stay in bounds
    table = windowed_predict(_feat(15), _feat(40, seed=1), tiny_params, stride=2)
    assert table.window_starts == [0, 2, 4, 6, 8, 10]
    counts = [sum(v.values()) for v in table.votes]
    assert max(counts) <= 3
    assert counts[8] == 3  # covered by windows starting at 4, 6, 8
    for votes in table.votes:
        for idx in votes:
            assert 0 <= idx < 40


def test_windowed_predict_too_short(tiny_params):
    with pytest.raises(ValueError):
        windowed_predict(_feat(4), _feat(15), tiny_params)
    with pytest.raises(ValueError):
        windowed_predict(_feat(5), _feat(14), tiny_params)


def test_vote_table_json():
    table = VoteTable([{3: 2, 5: 1}], [0])
    doc = json.loads(table.to_json())
    assert doc["votes"] == [{"3": 2, "5": 1}]
    assert doc["window_starts"] == [0]


# ---------------------------------------------------------------------------
# candidate sets

def test_candidates_majority():
    table = VoteTable([{7: 2, 9: 1}], [0])
    assert candidate_sets(table) == [{7}]


def test_candidates_three_way_tie():
    table = VoteTable([{1: 1, 2: 1, 3: 1}], [0])
    assert candidate_sets(table) == [{1, 2, 3}]


def test_candidates_empty_frame():
    table = VoteTable([{}], [0])
    assert candidate_sets(table) == [set()]


# ---------------------------------------------------------------------------
# longest monotone match

def brute_force_monotone(candidates):
    """Max number of frames assignable with non-decreasing indices."""
    best = 0
    n = len(candidates)
    def go(k, last, count):
        nonlocal best
        if count + (n - k) <= best:
            return
        if k == n:
            best = max(best, count)
            return
        go(k + 1, last, count)  # gap
        for v in candidates[k]:
            if v >= last:
                go(k + 1, v, count + 1)
    go(0, -10**9, 0)
    return best


def test_monotone_singleton_increasing():
    path = longest_monotone_match([{1}, {4}, {9}])
    np.testing.assert_array_equal(path.indices, [1, 4, 9])


def test_monotone_hand_case():
    path = longest_monotone_match([{5}, {3}, {6}])
    np.testing.assert_array_equal(path.indices, [5, GAP, 6])


def test_monotone_repeats_allowed():
    path = longest_monotone_match([{2}, {2}, {2}])
    np.testing.assert_array_equal(path.indices, [2, 2, 2])


def test_monotone_empty_sets():
    path = longest_monotone_match([set(), {1}, set()])
    np.testing.assert_array_equal(path.indices, [GAP, 1, GAP])


def test_monotone_prefers_smallest_indices():
    # both {1} and {2} preserve the optimum at frame 0; lexicographic
    # reconstruction picks 1
    path = longest_monotone_match([{1, 2}, {3}])
    np.testing.assert_array_equal(path.indices, [1, 3])


def test_monotone_matches_oracle_1000_instances():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        candidates = []
        for _ in range(n):
            size = int(rng.integers(0, 4))
            candidates.append(set(int(v) for v in rng.integers(0, 12, size=size)))
        path = longest_monotone_match(candidates)
        got = int((path.indices != GAP).sum())
        assert got == brute_force_monotone(candidates)
        assert path.is_monotone()
        for k, v in enumerate(path.indices):
            if v != GAP:
                assert v in candidates[k]


@settings(max_examples=150, deadline=None)
@given(st.lists(st.sets(st.integers(0, 11), max_size=3), min_size=1, max_size=8))
def test_monotone_oracle_property(candidates):
    path = longest_monotone_match(candidates)
    assert int((path.indices != GAP).sum()) == brute_force_monotone(candidates)
    assert path.is_monotone()


# ---------------------------------------------------------------------------
# resume after break

def test_resume_no_gaps_unchanged():
    path = AlignmentPath(np.array([1, 2, 3]))
    out = resume_after_break(path, [{1}, {2}, {3}])
    np.testing.assert_array_equal(out.indices, [1, 2, 3])


def test_resume_skips_backward_candidate():
    # run ends at 40; frame with only {38} stays a gap, frame with {41} resumes
    path = AlignmentPath(np.array([39, 40, GAP, 41]))
    out = resume_after_break(path, [{39}, {40}, {38}, {41}])
    np.testing.assert_array_equal(out.indices, [39, 40, GAP, 41])


def test_resume_fills_valid_gap():
    path = AlignmentPath(np.array([10, GAP, 20]))
    out = resume_after_break(path, [{10}, {15}, {20}])
    np.testing.assert_array_equal(out.indices, [10, 15, 20])


def test_resume_all_decreasing_stay_gaps():
    path = AlignmentPath(np.array([50, GAP, GAP]))
    out = resume_after_break(path, [{50}, {40}, {30}])
    np.testing.assert_array_equal(out.indices, [50, GAP, GAP])


# ---------------------------------------------------------------------------
# adaptive smoothing

def test_smooth_constant_slope_identity():
    path = AlignmentPath(np.arange(30) + 5)
    out = adaptive_smooth(path)
    np.testing.assert_array_equal(out.indices, path.indices)


def test_smooth_flattens_spike():
    base = np.arange(31)
    spiked = base.copy()
    spiked[15] += 10
    out = adaptive_smooth(AlignmentPath(spiked))
    assert out.is_dense()
    assert (np.diff(out.indices) >= 0).all()
    assert out.indices[15] < spiked[15]


def test_smooth_pads_tail_with_last_match():
    indices = np.concatenate([np.arange(20), np.full(5, GAP)])
    out = adaptive_smooth(AlignmentPath(indices))
    assert out.is_dense()
    np.testing.assert_array_equal(out.indices[-5:], out.indices[19])


def test_smooth_interpolates_gaps():
    indices = np.array([0, GAP, GAP, GAP, 4, 5, 6, 7, 8, 9, 10])
    out = adaptive_smooth(AlignmentPath(indices))
    assert out.is_dense()
    assert (np.diff(out.indices) >= 0).all()
    np.testing.assert_array_equal(out.indices[1:4], [1, 2, 3])


def test_smooth_sigma_grid_minimal():
    """Chosen sigma is grid-minimal: the curve that passes at sigma also
    passes for every larger sigma candidate checked first fails."""
    spiked = np.arange(41, dtype=np.int64)
    spiked[20] += 8
    cfg = SmoothingConfig()
    curve = np.interp(np.arange(41.0), np.arange(41.0), spiked.astype(float))
    passing = []
    for sigma in cfg.sigma_grid:
        sm = infer._smooth_curve(curve, sigma, cfg.kernel_halfwidth_sigmas)
        passing.append(np.abs(np.diff(sm, 2)).max() <= cfg.criterion_threshold)
    first = passing.index(True)
    # the implementation must land on exactly that smallest passing sigma
    out = adaptive_smooth(AlignmentPath(spiked), cfg)
    expected = np.maximum.accumulate(np.round(
        infer._smooth_curve(curve, cfg.sigma_grid[first],
                            cfg.kernel_halfwidth_sigmas)).astype(np.int64))
    np.testing.assert_array_equal(out.indices, expected)


def test_smooth_identity_fallback_single_match():
    path = AlignmentPath(np.array([GAP, 7, GAP]))
    out = adaptive_smooth(path)
    np.testing.assert_array_equal(out.indices, path.indices)


def test_smooth_nondecreasing_property():
    rng = np.random.default_rng(9)
    for _ in range(50):
        indices = np.sort(rng.integers(0, 60, size=40))
        mask = rng.random(40) < 0.3
        noisy = np.where(mask, GAP, indices + rng.integers(-3, 4, size=40))
        noisy = np.maximum(noisy, GAP)
        if (noisy != GAP).sum() < 2:
            continue
        out = adaptive_smooth(AlignmentPath(noisy))
        assert out.is_dense()
        assert (np.diff(out.indices) >= 0).all()


# ---------------------------------------------------------------------------
# warp rendering

def test_warp_identity():
    video = _feat(10)
    out = render_video_warp(video, AlignmentPath(np.arange(10)))
    np.testing.assert_array_equal(out.frames, video.frames)


def test_warp_duplication():
    video = _feat(2)
    out = render_video_warp(video, AlignmentPath(np.array([0, 0, 1])))
    np.testing.assert_array_equal(out.frames[0], out.frames[1])
    assert len(out) == 3


def test_warp_rejects_gaps_and_bounds():
    video = _feat(5)
    with pytest.raises(ValueError):
        render_video_warp(video, AlignmentPath(np.array([0, GAP])))
    with pytest.raises(ValueError):
        render_video_warp(video, AlignmentPath(np.array([0, 5])))


def test_warp_reconstructs_original_order():
    """Ground-truth labels map the edited window back to original order."""
    from chronoalign.synth import DatasetConfig, SENTINEL, SyntheticDataset
    ds = SyntheticDataset(DatasetConfig())
    ex = ds.example(3)
    keep = ex.labels != SENTINEL
    video = FeatureSequence(ex.video, 25.0)
    warped = render_video_warp(video, AlignmentPath(ex.labels[keep]))
    originals = ex.provenance[ex.labels[keep]]
    assert (np.diff(originals) >= 0).all()
    np.testing.assert_array_equal(warped.frames, ex.video[ex.labels[keep]])


# ---------------------------------------------------------------------------
# global shift estimation

def _fake_table(offsets_by_frame):
    votes = [{t + off: 1 for off in offs} for t, offs in enumerate(offsets_by_frame)]
    return VoteTable(votes, [0])


def test_global_shift_mode_zero(monkeypatch, tiny_params):
    monkeypatch.setattr(infer, "windowed_predict",
                        lambda *a, **k: _fake_table([[0]] * 10))
    assert estimate_global_shift(_feat(5), _feat(15), tiny_params) == 0


def test_global_shift_all_plus_seven(monkeypatch, tiny_params):
    monkeypatch.setattr(infer, "windowed_predict",
                        lambda *a, **k: _fake_table([[7]] * 10))
    assert estimate_global_shift(_feat(5), _feat(15), tiny_params) == 7


def test_global_shift_majority(monkeypatch, tiny_params):
    offsets = [[3]] * 10 + [[-2]] * 4
    monkeypatch.setattr(infer, "windowed_predict",
                        lambda *a, **k: _fake_table(offsets))
    assert estimate_global_shift(_feat(5), _feat(15), tiny_params) == 3


def test_global_shift_tie_prefers_smaller_magnitude(monkeypatch, tiny_params):
    offsets = [[5]] * 3 + [[-2]] * 3
    monkeypatch.setattr(infer, "windowed_predict",
                        lambda *a, **k: _fake_table(offsets))
    assert estimate_global_shift(_feat(5), _feat(15), tiny_params) == -2


# ---------------------------------------------------------------------------
# role swap + full pipeline plumbing

def test_swap_twice_is_identity(tiny_params):
    audio = _feat(15, seed=3)
    video = _feat(15, seed=4)
    from chronoalign.model import forward_full
    _, once = forward_full(audio.frames[:5], video.frames, tiny_params,
                           swap_roles=False)
    # swapping roles twice is the same configuration as not swapping
    _, twice = forward_full(audio.frames[:5], video.frames, tiny_params,
                            swap_roles=False)
    np.testing.assert_array_equal(once, twice)
    # swapped orientation consumes (video queries, audio keys)
    _, swapped = forward_full(video.frames[:5], audio.frames, tiny_params,
                              swap_roles=True)
    assert swapped.shape == (5,)


def test_align_audio_to_video_path_length(tiny_params):
    video = _feat(12, seed=5)
    audio = _feat(30, seed=6)
    table = infer.align_audio_to_video(audio, video, tiny_params)
    assert len(table) == 12  # one entry per video query frame


def test_full_alignment_outputs(tiny_params):
    audio = _feat(15, seed=8)
    video = _feat(30, seed=9)
    dense, raw, table = full_alignment(audio, video, tiny_params, stride=5)
    assert len(dense) == len(raw) == len(table) == 15
    assert dense.is_dense()
    assert (np.diff(dense.indices) >= 0).all()
    assert raw.is_monotone()

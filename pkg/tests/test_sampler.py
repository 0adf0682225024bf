import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_sequence
from oracles import pool_oracle
from tempagg.errors import DataCoverageError
from tempagg.sampler import (BREAKFAST_ACTIVITY, EPIC100_ANTICIPATION, EPIC100_RECOGNITION,
                             FrameFeatureSequence, SamplingConfig, pool_snippets, sample,
                             sample_activity, sample_anticipation, sample_recognition)


def seq_from(values, fps=1.0):
    return FrameFeatureSequence.uniform("v", "rgb", np.asarray(values, float).reshape(-1, 1), fps)


class TestPoolSnippets:
    def test_partition_max(self):
        s = pool_snippets(seq_from([1, 2, 3, 4, 5, 6]), (0, 6), 3)
        np.testing.assert_array_equal(s.vectors[:, 0], [2, 4, 6])
        assert s.extents == [(0, 2), (2, 4), (4, 6)]

    def test_single_snippet_is_global_max(self, rng):
        seq = random_sequence(rng, frames=20, dim=4, fps=2.0)
        s = pool_snippets(seq, seq.span, 1)
        np.testing.assert_array_equal(s.vectors[0], seq.features.max(axis=0))

    @pytest.mark.parametrize("k", [2, 3, 5])
    def test_matches_oracle(self, rng, k):
        seq = random_sequence(rng, frames=30, dim=3)
        scope = (seq.timestamps[2], seq.timestamps[25] + 0.01)
        got = pool_snippets(seq, scope, k).vectors
        np.testing.assert_array_equal(got, pool_oracle(seq.timestamps, seq.features, *scope, k))

    def test_empty_part_borrows_nearest_frame(self):
        seq = FrameFeatureSequence("v", "rgb", [0.0, 5.0], [[1.0], [9.0]])
        s = pool_snippets(seq, (0, 6), 6)
        # midpoints 0.5..5.5; frame 0 is nearest for the first three parts
        np.testing.assert_array_equal(s.vectors[:, 0], [1, 1, 1, 9, 9, 9])

    def test_no_frames_is_coverage_error(self):
        with pytest.raises(DataCoverageError, match="v"):
            pool_snippets(seq_from([1, 2, 3]), (10, 20), 2)

    def test_open_end_excludes_boundary_frame(self):
        s = pool_snippets(seq_from([1, 2, 3, 99]), (0, 3), 1, closed_end=False)
        assert s.vectors[0, 0] == 3

    @pytest.mark.parametrize("scope,k", [((1, 1), 2), ((0, 4), 0)])
    def test_bad_arguments(self, scope, k):
        with pytest.raises(ValueError):
            pool_snippets(seq_from([1, 2, 3]), scope, k)

    @settings(max_examples=1000, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.booleans(), st.booleans())
    def test_property_matches_oracle(self, seed, k, closed, uniform):
        rng = np.random.default_rng(seed)
        seq = random_sequence(rng, frames=int(rng.integers(1, 25)), dim=2,
                              fps=float(rng.choice([1.0, 10.0, 30.0])) if uniform else None)
        ts = seq.timestamps
        a = float(rng.uniform(ts[0] - 1, ts[-1]))
        b = float(rng.uniform(a + 1e-3, ts[-1] + 1))
        if not np.any((ts >= a) & ((ts <= b) if closed else (ts < b))):
            with pytest.raises(DataCoverageError):
                pool_snippets(seq, (a, b), k, closed_end=closed)
            return
        s = pool_snippets(seq, (a, b), k, closed_end=closed)
        np.testing.assert_array_equal(s.vectors, pool_oracle(ts, seq.features, a, b, k, closed))
        widths = [hi - lo for lo, hi in s.extents]
        np.testing.assert_allclose(widths, (b - a) / k, rtol=1e-9)
        assert s.extents[0][0] == a and s.extents[-1][1] == b
        assert all(s.extents[j][1] == s.extents[j + 1][0] for j in range(k - 1))


class TestAnticipation:
    def test_preset_shapes(self, rng):
        seq = random_sequence(rng, frames=200, dim=4, fps=10.0)
        recent, spanning = sample_anticipation(seq, 12.0, EPIC100_ANTICIPATION)
        assert len(recent) == 4 and all(r.vectors.shape == (2, 4) for r in recent)
        assert [s.vectors.shape[0] for s in spanning] == [2, 3, 5]

    def test_extents_within_observed_window(self, rng):
        seq = random_sequence(rng, frames=200, dim=2, fps=10.0)
        recent, spanning = sample_anticipation(seq, 10.0, EPIC100_ANTICIPATION)
        for s in recent + spanning:
            for lo, hi in s.extents:
                assert 3.0 - 1e-12 <= lo and hi <= 9.0 + 1e-12
        assert [r.extents[0][0] for r in recent] == pytest.approx([7.4, 7.8, 8.2, 8.6])

    def test_recent_matches_oracle(self):
        # monotone features: the last frame of each part holds the max
        seq = seq_from(np.arange(300.0), fps=10.0)
        recent, _ = sample_anticipation(seq, 15.0, EPIC100_ANTICIPATION)
        t = 14.0
        expected = pool_oracle(seq.timestamps, seq.features, t - 0.4, t, 2, closed_end=False)
        np.testing.assert_array_equal(recent[-1].vectors, expected)

    def test_causal_access(self, rng):
        seq = random_sequence(rng, frames=300, dim=3, fps=10.0)
        seq.access_log = []
        sample_anticipation(seq, 20.0, EPIC100_ANTICIPATION)
        assert seq.access_log and max(seq.timestamps[seq.access_log]) < 19.0

    def test_no_history(self, rng):
        seq = random_sequence(rng, frames=50, dim=2, fps=10.0)
        with pytest.raises(DataCoverageError):
            sample_anticipation(seq, 0.5, EPIC100_ANTICIPATION)


class TestRecognition:
    def test_windows(self, rng):
        seq = random_sequence(rng, frames=300, dim=2, fps=10.0)
        recent, spanning = sample_recognition(seq, (10.0, 12.0), EPIC100_RECOGNITION)
        assert [(r.extents[0][0], r.extents[-1][1]) for r in recent] == \
            [(10, 12), (9, 13), (8, 14), (7, 15)]
        assert all(r.vectors.shape == (5, 2) for r in recent)
        assert (spanning[0].extents[0][0], spanning[0].extents[-1][1]) == (4, 18)
        assert not any(r.clipped for r in recent)

    def test_full_video_segment_clips(self, rng):
        seq = random_sequence(rng, frames=50, dim=3, fps=10.0)
        recent, spanning = sample_recognition(seq, seq.span, EPIC100_RECOGNITION)
        for r in recent:
            np.testing.assert_array_equal(r.vectors, recent[0].vectors)
            assert (r.extents[0][0], r.extents[-1][1]) == seq.span
        assert all(r.clipped for r in recent[1:]) and spanning[0].clipped

    def test_each_window_matches_oracle(self, rng):
        seq = random_sequence(rng, frames=150, dim=3)
        s, e = seq.timestamps[60], seq.timestamps[70]
        recent, _ = sample_recognition(seq, (s, e), EPIC100_RECOGNITION)
        lo, hi = seq.span
        for (da, db), r in zip(EPIC100_RECOGNITION.recent_windows, recent):
            a, b = max(s + da, lo), min(e + db, hi)
            np.testing.assert_array_equal(r.vectors, pool_oracle(seq.timestamps, seq.features, a, b, 5))

    def test_empty_segment(self, rng):
        seq = random_sequence(rng, frames=20, dim=2, fps=10.0)
        with pytest.raises(DataCoverageError):
            sample_recognition(seq, (50.0, 51.0), EPIC100_RECOGNITION)


class TestActivity:
    def test_thirds(self, rng):
        seq = random_sequence(rng, frames=90, dim=2, fps=1.0)
        recent, spanning = sample_activity(seq, BREAKFAST_ACTIVITY)
        assert [(r.extents[0][0], r.extents[-1][1]) for r in recent] == [(0, 30), (30, 60), (60, 90)]
        assert [s.vectors.shape[0] for s in spanning] == [10, 15, 20]
        assert all(r.vectors.shape[0] == 5 for r in recent)

    def test_constant_features(self):
        seq = seq_from(np.full(40, 3.5), fps=2.0)
        recent, spanning = sample_activity(seq, BREAKFAST_ACTIVITY)
        for s in recent + spanning:
            assert (s.vectors == 3.5).all()


def test_shapes_depend_only_on_config(rng):
    shapes = set()
    for frames in (80, 200, 500):
        seq = random_sequence(rng, frames=frames, dim=3, fps=10.0)
        smp = sample(seq, EPIC100_ANTICIPATION, 7.5, 8.0)
        shapes.add((smp.recent.shape, tuple(s.shape for s in smp.spanning)))
    assert shapes == {((4, 2, 3), ((2, 3), (3, 3), (5, 3)))}


@pytest.mark.parametrize("kwargs", [
    dict(k_recent=0),
    dict(spanning_scales=(2, 2)),
    dict(spanning_scales=(0,)),
    dict(recent_starts=(0.4,)),
])
def test_config_validation(kwargs):
    base = dict(task="anticipation", k_recent=2, spanning_scales=(2, 3), spanning_scope=6.0,
                recent_starts=(-0.4,))
    with pytest.raises(ValueError):
        SamplingConfig(**{**base, **kwargs})


def test_recognition_window_order_validated():
    with pytest.raises(ValueError):
        SamplingConfig(task="recognition", k_recent=2, spanning_scales=(2,), spanning_scope=1.0,
                       recent_windows=((1.0, -1.0),))


def test_sequence_validation():
    with pytest.raises(ValueError):
        FrameFeatureSequence("v", "rgb", [0.0, 0.0], np.ones((2, 2)))
    with pytest.raises(ValueError):
        FrameFeatureSequence("v", "depth", [0.0], np.ones((1, 2)))

import numpy as np
import pytest

from fewspikes.events import EventStream, SyntheticSceneSpec, generate_scene, trajectory_mask
from fewspikes.mestor import (MestorConfig, bin_events, continuity_map, encode,
                              spatial_channel, temporal_channel)
from fewspikes.neurons import FsnConfig


def stream_from(width, height, rows):
    t, x, y, p = zip(*rows) if rows else ((), (), (), ())
    return EventStream.from_arrays(width, height, t, x, y, p)


def brute_force_continuity(bins, cfg: MestorConfig) -> np.ndarray:
    """Literal per-pixel trace of conv + threshold/decay + keep rule."""
    _, h, w = bins.shape
    alpha, big_k = cfg.continuity.alpha, cfg.continuity.K
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            u = 0.0
            count = 0
            for t in range(1, big_k + 1):
                conv = 0.0
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w:
                            conv += cfg.kernel[dy + 1, dx + 1] * bins[t - 1, yy, xx]
                u += conv
                th = alpha * 2.0**-t
                if u >= th:
                    count += 1
                    u -= th
            out[y, x] = 1.0 if count >= cfg.keep_cutoff else 0.0
    return out


class TestBinning:
    def test_two_events_two_bins(self):
        s = stream_from(4, 4, ((500, 1, 1, 1), (1500, 2, 2, 0)))
        cfg = MestorConfig(continuity=FsnConfig(1.0, 2), n_bins=2, delta_t_us=1000.0)
        bins = bin_events(s, cfg)
        assert bins[0, 1, 1] == 1 and bins[1, 2, 2] == 1
        assert bins.sum() == 2

    def test_all_events_in_first_bin(self):
        rows = tuple((int(t), 1, 1, 1) for t in range(10))
        s = stream_from(4, 4, rows + ((10_000, 3, 3, 0),))
        cfg = MestorConfig(continuity=FsnConfig(1.0, 2), n_bins=2)
        bins = bin_events(s, cfg)
        assert bins[0, 1, 1] == 10
        assert bins[1].sum() == 1  # only the late closer

    def test_conservation(self):
        spec = SyntheticSceneSpec(kind="moving-disk", width=16, height=16,
                                  duration_ms=10.0, velocity_px_ms=0.1,
                                  object_rate=1.0, noise_rate=0.05, size_px=3.0, seed=8)
        clip = generate_scene(spec)
        cfg = MestorConfig(continuity=FsnConfig(1.0, 5))
        assert bin_events(clip.stream, cfg).sum() == len(clip.stream)

    def test_empty_stream(self):
        s = stream_from(4, 4, ())
        bins = bin_events(s, MestorConfig())
        assert bins.shape == (5, 4, 4) and bins.sum() == 0

    def test_last_bin_closed_right(self):
        s = stream_from(4, 4, ((0, 0, 0, 1), (1000, 3, 3, 1)))
        cfg = MestorConfig(continuity=FsnConfig(1.0, 2), n_bins=2)
        bins = bin_events(s, cfg)  # delta_t = 500; t=1000 lands in the last bin
        assert bins[1, 3, 3] == 1


class TestContinuity:
    def test_matches_brute_force_on_random_bins(self):
        rng = np.random.default_rng(0)
        for alpha in (1.0, 3.0):
            cfg = MestorConfig(continuity=FsnConfig(alpha, 5))
            bins = rng.poisson(0.4, size=(5, 9, 9)).astype(np.float64)
            assert np.array_equal(continuity_map(bins, cfg), brute_force_continuity(bins, cfg))

    def test_single_event_single_bin_dropped(self):
        # alpha=3 thresholds reject any lone unit count, whichever bin it hits
        cfg = MestorConfig(continuity=FsnConfig(3.0, 5))
        for b in range(5):
            bins = np.zeros((5, 7, 7))
            bins[b, 3, 3] = 1.0
            st = continuity_map(bins, cfg)
            assert st[3, 3] == 0.0
            assert np.array_equal(st, brute_force_continuity(bins, cfg))

    def test_active_every_bin_kept(self):
        # neighborhood carries >= 1 event in every bin, all-ones kernel, alpha=1
        cfg = MestorConfig(continuity=FsnConfig(1.0, 5))
        bins = np.zeros((5, 7, 7))
        bins[:, 3, 4] = 1.0  # neighbor of (3, 3) active in all bins
        st = continuity_map(bins, cfg)
        assert st[3, 3] == 1.0 and st[3, 4] == 1.0
        assert np.array_equal(st, brute_force_continuity(bins, cfg))

    def test_all_zero_bins(self):
        cfg = MestorConfig()
        assert continuity_map(np.zeros((5, 6, 6)), cfg).sum() == 0

    def test_locality(self):
        # a kept pixel implies at least one event within its 3x3 neighborhood
        rng = np.random.default_rng(1)
        cfg = MestorConfig(continuity=FsnConfig(1.0, 5))
        bins = (rng.uniform(size=(5, 12, 12)) < 0.05).astype(np.float64)
        st = continuity_map(bins, cfg)
        occupancy = bins.sum(axis=0) > 0
        padded = np.zeros((14, 14), dtype=bool)
        padded[1:-1, 1:-1] = occupancy
        for y, x in np.argwhere(st == 1.0):
            assert padded[y:y + 3, x:x + 3].any()

    def test_monotone_under_added_events(self):
        # integer count additions never flip a kept pixel to dropped
        rng = np.random.default_rng(2)
        for alpha in (1.0, 3.0):
            cfg = MestorConfig(continuity=FsnConfig(alpha, 5))
            for _ in range(20):
                bins = rng.poisson(0.3, size=(5, 6, 6)).astype(np.float64)
                st = continuity_map(bins, cfg)
                more = bins.copy()
                b, y, x = rng.integers(0, 5), rng.integers(0, 6), rng.integers(0, 6)
                more[b, y, x] += rng.integers(1, 3)
                st_more = continuity_map(more, cfg)
                assert np.all(st_more >= st)

    def test_n_bins_below_k_rejected(self):
        with pytest.raises(ValueError):
            MestorConfig(continuity=FsnConfig(1.0, 5), n_bins=3)


class TestChannels:
    def test_single_bin_degenerate(self):
        bins = np.random.default_rng(3).poisson(1.0, size=(1, 5, 5)).astype(float)
        assert np.array_equal(spatial_channel(bins), temporal_channel(bins))

    def test_disjoint_bins(self):
        bins = np.zeros((3, 4, 4))
        bins[0, 0, 0] = 2.0
        bins[2, 3, 3] = 1.0
        s, t = spatial_channel(bins), temporal_channel(bins)
        assert s[0, 0] == 2.0 and s[3, 3] == 1.0 and s.sum() == 3.0
        assert t[0, 0] == 0.0 and t[3, 3] == 1.0

    def test_conservation_of_raw_spatial(self):
        spec = SyntheticSceneSpec(kind="moving-bar", width=16, height=16,
                                  duration_ms=8.0, velocity_px_ms=0.2,
                                  object_rate=0.8, noise_rate=0.02, size_px=4.0, seed=5)
        clip = generate_scene(spec)
        cfg = MestorConfig()
        bins = bin_events(clip.stream, cfg)
        assert spatial_channel(bins).sum() == len(clip.stream)

    def test_max_normalization_all_equal(self):
        s = stream_from(3, 3, tuple((i, x, y, 1) for i, (x, y) in
                                    enumerate((x, y) for x in range(3) for y in range(3))))
        cfg = MestorConfig(continuity=FsnConfig(1.0, 5))
        frame = encode(s, cfg)
        assert np.all(frame.s == 1.0)  # every pixel got exactly one event


class TestEncode:
    def test_empty_stream_all_zero(self):
        frame = encode(stream_from(6, 6, ()), MestorConfig())
        assert frame.st.sum() == 0 and frame.s.sum() == 0 and frame.t.sum() == 0
        assert frame.stacked().shape == (3, 6, 6)

    def test_channel_ranges(self):
        spec = SyntheticSceneSpec(kind="moving-disk", width=24, height=24,
                                  duration_ms=12.0, velocity_px_ms=0.1,
                                  object_rate=1.5, noise_rate=0.05, size_px=4.0, seed=6)
        frame = encode(generate_scene(spec).stream, MestorConfig(continuity=FsnConfig(3.0, 5)))
        assert set(np.unique(frame.st)) <= {0.0, 1.0}
        assert frame.s.min() >= 0.0 and frame.s.max() <= 1.0
        assert frame.t.min() >= 0.0 and frame.t.max() <= 1.0

    def test_deterministic(self):
        spec = SyntheticSceneSpec(kind="moving-bar", width=16, height=16,
                                  duration_ms=10.0, velocity_px_ms=0.1,
                                  object_rate=1.0, noise_rate=0.05, size_px=4.0, seed=7)
        stream = generate_scene(spec).stream
        cfg = MestorConfig(continuity=FsnConfig(3.0, 5))
        f1, f2 = encode(stream, cfg), encode(stream, cfg)
        assert np.array_equal(f1.stacked(), f2.stacked())

    def test_noise_rejection_vs_event_density(self):
        # pure sparse noise: kept-pixel density far below event-pixel density
        spec = SyntheticSceneSpec(kind="moving-bar", width=48, height=48,
                                  duration_ms=25.0, velocity_px_ms=0.0,
                                  object_rate=0.0, noise_rate=0.001, size_px=4.0, seed=10)
        stream = generate_scene(spec).stream
        cfg = MestorConfig(continuity=FsnConfig(3.0, 5))
        frame = encode(stream, cfg)
        bins = bin_events(stream, cfg)
        event_pixel_density = (bins.sum(axis=0) > 0).mean()
        assert event_pixel_density > 0
        assert frame.st.mean() < 0.2 * event_pixel_density

    def test_dense_bar_trajectory_retained(self):
        spec = SyntheticSceneSpec(kind="moving-bar", width=48, height=48,
                                  duration_ms=25.0, velocity_px_ms=0.05,
                                  object_rate=1.0, noise_rate=0.0, size_px=12.0, seed=11)
        clip = generate_scene(spec)
        frame = encode(clip.stream, MestorConfig(continuity=FsnConfig(3.0, 5)))
        traj = trajectory_mask(spec)
        assert frame.st[traj].mean() >= 0.9

    def test_clamp_normalization(self):
        s = stream_from(2, 2, tuple((i, 0, 0, 1) for i in range(20)))
        cfg = MestorConfig(continuity=FsnConfig(1.0, 5), normalization="clamp", clamp_cap=4.0)
        frame = encode(s, cfg)
        assert frame.s[0, 0] == 1.0 and frame.s.max() <= 1.0

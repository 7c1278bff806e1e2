"""Tests for series I/O, gap handling, normalization, windows, splits."""

import numpy as np
import pytest

from aircast.ctm_oracle import SeriesBundle, demo_stations, generate, synthetic_scenario
from aircast.dataset import (NormStats, fit_normalize, load_bundle,
                             make_windows, split_ranges, write_bundle)
from aircast.errors import ValidationError
from aircast.spatial_graph import build_graph


@pytest.fixture(scope="module")
def small_bundle():
    graph = build_graph(demo_stations(4, seed=1))
    return generate(synthetic_scenario(graph, 60, seed=2), graph, 60)


def synthetic_counting_bundle(steps, v=2):
    """X[t] = t everywhere; handy for alignment assertions."""
    x = np.tile(np.arange(float(steps))[:, None, None], (1, v, 2))
    return SeriesBundle(
        timestamps=np.datetime64("2021-01-01T00:00:00", "s")
        + np.arange(steps) * np.timedelta64(3600, "s"),
        station_ids=[f"s{i}" for i in range(v)],
        X=x, P=np.zeros((steps, v, 8)), Q=np.zeros((steps, v, 6)))


def drop_hours(src, dst, iso_prefixes):
    lines = src.read_text().splitlines(keepends=True)
    kept = [ln for ln in lines
            if not any(ln.startswith(p) for p in iso_prefixes)]
    dst.write_text("".join(kept))


class TestRoundTrip:
    def test_write_load_bit_identical(self, small_bundle, tmp_path):
        path = tmp_path / "series.csv"
        write_bundle(path, small_bundle)
        loaded = load_bundle(path, station_ids=small_bundle.station_ids)
        assert np.array_equal(loaded.X, small_bundle.X)
        assert np.array_equal(loaded.P, small_bundle.P)
        assert np.array_equal(loaded.Q, small_bundle.Q)
        assert np.array_equal(loaded.timestamps, small_bundle.timestamps)
        assert loaded.station_ids == small_bundle.station_ids
        assert not loaded.excluded.any()
        assert not loaded.filled.any()

    def test_station_order_follows_graph(self, small_bundle, tmp_path):
        path = tmp_path / "series.csv"
        write_bundle(path, small_bundle)
        rev = list(reversed(small_bundle.station_ids))
        loaded = load_bundle(path, station_ids=rev)
        assert loaded.station_ids == rev
        assert np.array_equal(loaded.X, small_bundle.X[:, ::-1])


class TestGaps:
    def test_single_missing_hour_forward_filled(self, small_bundle, tmp_path):
        full = tmp_path / "full.csv"
        write_bundle(full, small_bundle)
        gappy = tmp_path / "gap.csv"
        missing_iso = str(small_bundle.timestamps[10]) + "Z"
        drop_hours(full, gappy, [missing_iso])
        loaded = load_bundle(gappy, station_ids=small_bundle.station_ids)
        assert loaded.n_steps == small_bundle.n_steps
        assert np.array_equal(loaded.X[10], small_bundle.X[9])
        assert loaded.filled[10] and not loaded.excluded[10]
        assert loaded.filled.sum() == 1

    def test_long_gap_marks_excluded(self, small_bundle, tmp_path):
        full = tmp_path / "full.csv"
        write_bundle(full, small_bundle)
        gappy = tmp_path / "gap.csv"
        missing = [str(small_bundle.timestamps[t]) + "Z" for t in range(10, 15)]
        drop_hours(full, gappy, missing)
        loaded = load_bundle(gappy, station_ids=small_bundle.station_ids)
        assert loaded.excluded[10:15].all()
        assert not loaded.excluded[:10].any() and not loaded.excluded[15:].any()
        windows = make_windows(loaded, t_hist=4, t_fore=2)
        for w in windows:
            lo, hi = w.origin_index - 3, w.origin_index + 2
            assert hi < 10 or lo > 14

    def test_unknown_station_named_in_error(self, small_bundle, tmp_path):
        path = tmp_path / "series.csv"
        write_bundle(path, small_bundle)
        known = small_bundle.station_ids[:-1]
        rogue = small_bundle.station_ids[-1]
        with pytest.raises(ValidationError, match=rogue):
            load_bundle(path, station_ids=known)

    def test_graph_station_without_rows_rejected(self, small_bundle, tmp_path):
        path = tmp_path / "series.csv"
        write_bundle(path, small_bundle)
        with pytest.raises(ValidationError, match="ghost"):
            load_bundle(path, station_ids=small_bundle.station_ids + ["ghost"])

    def test_non_hourly_timestamp_rejected(self, small_bundle, tmp_path):
        path = tmp_path / "series.csv"
        write_bundle(path, small_bundle)
        with open(path, "a") as fh:
            fh.write("2021-01-01T05:30:00Z,st00,X,pm25,1.0\n")
        with pytest.raises(ValidationError, match="non-hourly"):
            load_bundle(path)

    def test_duplicate_row_rejected(self, small_bundle, tmp_path):
        path = tmp_path / "series.csv"
        write_bundle(path, small_bundle)
        with open(path) as fh:
            fh.readline()
            first_data = fh.readline()
        with open(path, "a") as fh:
            fh.write(first_data)
        with pytest.raises(ValidationError, match="duplicate"):
            load_bundle(path)

    def test_unknown_channel_rejected(self, small_bundle, tmp_path):
        path = tmp_path / "series.csv"
        write_bundle(path, small_bundle)
        with open(path, "a") as fh:
            fh.write("2021-01-01T05:00:00Z,st00,X,pm10,1.0\n")
        with pytest.raises(ValidationError, match="pm10"):
            load_bundle(path)


class TestNormalize:
    def test_constant_channel_fallback(self, small_bundle):
        bundle = synthetic_counting_bundle(20)
        bundle.X[..., 0] = 5.0
        with pytest.warns(UserWarning, match="zero-variance"):
            stats = fit_normalize(bundle, range(0, 20))
        assert stats.x_mean[0] == 5.0 and stats.x_std[0] == 1.0
        assert np.all(stats.normalize_x(bundle.X)[..., 0] == 0.0)

    def test_alternating_zero_two(self):
        # population stats of {0, 2} repeating: mean 1, std 1
        bundle = synthetic_counting_bundle(20)
        bundle.X[..., 0] = np.where(np.arange(20) % 2 == 0, 0.0, 2.0)[:, None]
        with pytest.warns(UserWarning):
            stats = fit_normalize(bundle, range(0, 20))
        assert stats.x_mean[0] == 1.0 and stats.x_std[0] == 1.0

    def test_normalize_inverse_is_identity(self, small_bundle):
        stats = fit_normalize(small_bundle, range(0, 36))
        xn = stats.normalize_x(small_bundle.X)
        back = stats.denormalize_x(xn)
        assert np.max(np.abs(back - small_bundle.X)) < 1e-12

    def test_fit_ignores_val_test(self, small_bundle):
        poisoned = SeriesBundle(timestamps=small_bundle.timestamps,
                                station_ids=small_bundle.station_ids,
                                X=small_bundle.X.copy(), P=small_bundle.P.copy(),
                                Q=small_bundle.Q.copy())
        poisoned.X[36:] = np.nan
        poisoned.P[36:] = np.nan
        poisoned.Q[36:] = np.nan
        stats = fit_normalize(poisoned, range(0, 36))
        for arr in (stats.x_mean, stats.x_std, stats.p_mean, stats.p_std,
                    stats.q_mean, stats.q_std):
            assert np.all(np.isfinite(arr))

    def test_empty_range_rejected(self, small_bundle):
        with pytest.raises(ValidationError):
            fit_normalize(small_bundle, range(5, 5))

    def test_stats_roundtrip_dict(self, small_bundle):
        stats = fit_normalize(small_bundle, range(0, 36))
        again = NormStats.from_dict(stats.to_dict())
        assert np.array_equal(again.p_mean, stats.p_mean)
        assert np.array_equal(again.q_std, stats.q_std)


class TestWindows:
    def test_counting_formula(self):
        bundle = synthetic_counting_bundle(100)
        assert len(make_windows(bundle, 24, 24)) == 53

    def test_exact_fit_yields_one(self):
        bundle = synthetic_counting_bundle(48)
        assert len(make_windows(bundle, 24, 24)) == 1

    def test_too_short_yields_none(self):
        bundle = synthetic_counting_bundle(47)
        assert make_windows(bundle, 24, 24) == []

    def test_stride(self):
        bundle = synthetic_counting_bundle(100)
        assert len(make_windows(bundle, 24, 24, stride=7)) == 8

    def test_alignment(self):
        bundle = synthetic_counting_bundle(30)
        w = make_windows(bundle, 5, 3)[0]
        assert w.origin_index == 4
        assert w.x_hist.shape == (5, 2, 2)
        assert w.x_future.shape == (3, 2, 2)
        assert w.p_all.shape == (8, 2, 8)
        assert w.x_hist[-1, 0, 0] == 4.0
        assert w.x_future[0, 0, 0] == 5.0
        assert w.x_hist[0, 0, 0] == 0.0

    def test_bad_lengths_rejected(self):
        bundle = synthetic_counting_bundle(30)
        with pytest.raises(ValidationError):
            make_windows(bundle, 1, 3)
        with pytest.raises(ValidationError):
            make_windows(bundle, 5, 0)
        with pytest.raises(ValidationError):
            make_windows(bundle, 5, 3, stride=0)


class TestSplits:
    def test_default_fractions(self):
        train, val, test = split_ranges(100)
        assert (train, val, test) == (range(0, 60), range(60, 80), range(80, 100))

    def test_chronological_order(self):
        train, val, test = split_ranges(317)
        assert max(train) < min(val) <= max(val) < min(test)
        assert len(train) + len(val) + len(test) == 317

    def test_windows_stay_inside_split(self):
        bundle = synthetic_counting_bundle(100)
        train, val, test = split_ranges(100)
        for rng in (train, val, test):
            for w in make_windows(bundle, 4, 2, within=rng):
                assert w.origin_index - 3 >= rng.start
                assert w.origin_index + 2 <= rng.stop - 1

    def test_too_short_rejected(self):
        with pytest.raises(ValidationError):
            split_ranges(3)

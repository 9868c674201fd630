import json

import numpy as np
import pytest

from ignition import track as T


def square_track(side=100.0, width=10.0, ds=1.0):
    pts = [(0, 0), (side, 0), (side, side), (0, side)]
    return T.build_track(pts, width=width, ds=ds)


def circle_points(radius, n):
    ang = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])


class TestBuildTrack:
    def test_square_perimeter(self):
        t = square_track()
        # corners get rounded by smoothing, so slightly under the polygon perimeter
        assert t.total_length == pytest.approx(400.0, rel=0.05)

    def test_circle_curvature_matches_inverse_radius(self):
        t = T.build_track(circle_points(50.0, 64), width=8.0, ds=1.0)
        assert np.all(np.abs(t.curvature - 0.02) <= 0.02 * 0.02)

    def test_too_few_points_rejected(self):
        with pytest.raises(T.TrackError):
            T.build_track([(0, 0), (1, 0), (1, 1)], width=5.0, ds=0.5)

    def test_bad_ds_and_width_rejected(self):
        pts = circle_points(50.0, 16)
        with pytest.raises(T.TrackError):
            T.build_track(pts, width=5.0, ds=0.0)
        with pytest.raises(T.TrackError):
            T.build_track(pts, width=-1.0, ds=0.5)

    def test_degenerate_segment_rejected(self):
        with pytest.raises(T.TrackError):
            T.build_track([(0, 0), (0, 0), (100, 0), (100, 100), (0, 100)], width=5.0, ds=1.0)

    def test_self_intersection_rejected(self):
        # bowtie
        with pytest.raises(T.TrackError):
            T.build_track([(0, 0), (100, 100), (100, 0), (0, 100)], width=5.0, ds=1.0)

    def test_length_equals_samples_times_ds(self):
        t = square_track()
        assert t.total_length == pytest.approx(t.n_samples * t.ds, rel=1e-6)

    def test_closed_loop(self):
        t = square_track()
        gap = np.linalg.norm(t.centerline[0] - t.centerline[-1])
        assert gap == pytest.approx(t.ds, rel=0.01)

    def test_curvature_integrates_to_two_pi(self):
        for t in (square_track(), T.load_bundled("oval"), T.load_bundled("road_course")):
            total_turn = t.curvature.sum() * t.ds
            assert abs(abs(total_turn) - 2 * np.pi) <= 0.01 * 2 * np.pi


class TestLocate:
    def test_point_on_sample(self):
        t = square_track()
        k = 37
        s, lat = T.locate(t, t.centerline[k])
        assert s == pytest.approx(k * t.ds)
        assert lat == pytest.approx(0.0, abs=1e-9)

    def test_signed_offset_on_straight(self):
        t = square_track()
        # middle of the bottom straight, travel direction +x, left is +y
        k = t.sample_s(50.0)
        p = t.centerline[k] + np.array([0.0, 3.0]) if abs(t.tangents[k][0]) > 0.99 else None
        assert p is not None
        s, lat = T.locate(t, p)
        assert lat == pytest.approx(3.0, abs=t.ds / 2)

    def test_oracle_exhaustive_scan(self):
        t = T.load_bundled("oval", ds=1.0)
        rng = np.random.default_rng(0)
        lo = t.centerline.min(axis=0) - 2 * t.width
        hi = t.centerline.max(axis=0) + 2 * t.width
        pts = rng.uniform(lo, hi, size=(10_000, 2))
        for p in pts:
            k = t.index.nearest(p)
            d = t.centerline - p
            k_true = int(np.argmin(d[:, 0] ** 2 + d[:, 1] ** 2))
            dk = np.linalg.norm(t.centerline[k] - p)
            dt_ = np.linalg.norm(t.centerline[k_true] - p)
            assert dk == pytest.approx(dt_)

    def test_far_point_off_track(self):
        t = square_track()
        p = t.centerline[0] + np.array([0.0, -2 * t.width])
        _, lat = T.locate(t, p)
        assert abs(lat) > t.width / 2


class TestLookahead:
    def test_zero_is_first_sample(self):
        t = square_track()
        assert np.allclose(T.lookahead_point(t, 0.0, 0.0), t.centerline[0])

    def test_wraparound(self):
        t = square_track()
        p = T.lookahead_point(t, t.total_length - t.ds, 2 * t.ds)
        assert np.allclose(p, t.centerline[1])

    def test_collinear_on_straight(self):
        t = square_track()
        k = t.sample_s(50.0)
        s = k * t.ds
        a, b, c = (T.lookahead_point(t, s, d) for d in (0.0, 2.0, 4.0))
        cross = (b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0]
        assert abs(cross) < 1e-6

    def test_locate_roundtrip(self):
        t = T.load_bundled("road_course", ds=1.0)
        for s in np.linspace(0, t.total_length, 50, endpoint=False):
            p = T.lookahead_point(t, s, 0.0)
            s2, _ = T.locate(t, p)
            ds_err = min(abs(s2 - t.sample_s(s) * t.ds), t.total_length - abs(s2 - t.sample_s(s) * t.ds))
            assert ds_err <= t.ds


class TestTrackFiles:
    def test_json_roundtrip(self, tmp_path):
        t = square_track()
        path = tmp_path / "sq.json"
        T.save_track(t, path)
        t2 = T.load_track(path, ds=t.ds)
        assert t2.total_length == pytest.approx(t.total_length)
        assert np.allclose(t2.centerline, t.centerline)

    def test_file_schema(self, tmp_path):
        t = square_track()
        path = tmp_path / "sq.json"
        T.save_track(t, path)
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
        assert set(d) == {"name", "width_m", "control_points"}

    def test_bundled_tracks_load(self):
        for name in T.BUNDLED_TRACKS:
            t = T.load_bundled(name)
            assert t.width > 0 and t.total_length > 500

    def test_road_course_has_six_mixed_corners(self):
        t = T.load_bundled("road_course")
        k = np.abs(t.curvature)
        mask = k > 1 / 90
        n = len(mask)
        m2 = np.concatenate([mask, mask])
        visited = np.zeros(n, bool)
        radii = []
        i = 0
        while i < n:
            if mask[i] and not visited[i]:
                j = i
                while m2[j]:
                    j += 1
                seg = np.arange(i, j) % n
                visited[seg] = True
                radii.append(1 / k[seg].max())
                i = j
            else:
                i += 1
        assert len(radii) >= 6
        assert max(radii) / min(radii) > 1.5  # mixed radii

"""Tests for graph construction and the normalized Laplacian operator."""

import numpy as np
import pytest

from aircast.errors import DimensionError, ValidationError
from aircast.numerics import Tensor
from aircast.spatial_graph import (Station, apply_laplacian, build_graph,
                                   distance_matrix, haversine_km,
                                   load_stations, normalized_laplacian,
                                   unit_bearings, write_stations)

INV_SQRT2 = 1.0 / np.sqrt(2.0)

# three equatorial stations one degree apart: a path graph at 200 km
PATH3 = [Station("s0", 0.0, 0.0), Station("s1", 0.0, 1.0), Station("s2", 0.0, 2.0)]

# hand computation: D = diag(1, 2, 1), so L = I - D^-1/2 A D^-1/2
PATH3_LAPLACIAN = np.array([
    [1.0, -INV_SQRT2, 0.0],
    [-INV_SQRT2, 1.0, -INV_SQRT2],
    [0.0, -INV_SQRT2, 1.0],
])


def law_of_cosines_km(a, b):
    """Independent distance oracle: spherical law of cosines, R = 6371."""
    p1, l1, p2, l2 = map(np.radians, (a.lat, a.lon, b.lat, b.lon))
    c = np.sin(p1) * np.sin(p2) + np.cos(p1) * np.cos(p2) * np.cos(l2 - l1)
    return 6371.0 * np.arccos(np.clip(c, -1.0, 1.0))


class TestHaversine:
    def test_coincident_is_zero(self):
        assert haversine_km(Station("a", 0.0, 0.0), Station("b", 0.0, 0.0)) == 0.0

    def test_one_degree_of_longitude_at_equator(self):
        # 6371 * pi / 180 = 111.19492664455873 km
        d = haversine_km(Station("a", 0.0, 0.0), Station("b", 0.0, 1.0))
        assert abs(d - 111.19492664455873) < 1e-9

    def test_two_degrees_exceeds_default_threshold(self):
        d = haversine_km(Station("a", 0.0, 0.0), Station("b", 0.0, 2.0))
        assert abs(d - 222.38985328911746) < 1e-9
        assert d > 200.0

    def test_agrees_with_law_of_cosines(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            a = Station("a", rng.uniform(-60, 60), rng.uniform(-170, 170))
            b = Station("b", a.lat + rng.uniform(0.5, 5.0),
                        a.lon + rng.uniform(0.5, 5.0))
            assert abs(haversine_km(a, b) - law_of_cosines_km(a, b)) < 1e-6

    def test_symmetry(self):
        a = Station("a", 39.9, 116.4)
        b = Station("b", 31.2, 121.5)
        assert haversine_km(a, b) == haversine_km(b, a)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValidationError):
            haversine_km(Station("a", 91.0, 0.0), Station("b", 0.0, 0.0))
        with pytest.raises(ValidationError):
            haversine_km(Station("a", 0.0, 0.0), Station("b", 0.0, 181.0))

    def test_distance_matrix_matches_pairwise(self):
        d = distance_matrix(PATH3)
        for i, a in enumerate(PATH3):
            for j, b in enumerate(PATH3):
                assert abs(d[i, j] - haversine_km(a, b)) < 1e-9


class TestBuildGraph:
    def test_single_station(self):
        g = build_graph([Station("only", 10.0, 20.0)])
        assert np.array_equal(g.adjacency, np.zeros((1, 1)))
        assert np.array_equal(g.laplacian, np.ones((1, 1)))

    def test_path3_laplacian_matches_hand_matrix(self):
        g = build_graph(PATH3, threshold_km=200.0)
        expected_a = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
        assert np.array_equal(g.adjacency, expected_a)
        assert np.array_equal(g.degree, np.array([1.0, 2.0, 1.0]))
        assert np.allclose(g.laplacian, PATH3_LAPLACIAN, atol=1e-15)

    def test_tiny_threshold_gives_edgeless_graph(self):
        g = build_graph(PATH3, threshold_km=0.001)
        assert np.all(g.adjacency == 0.0)
        assert np.array_equal(g.laplacian, np.eye(3))

    def test_adjacency_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(5)
        stations = [Station(f"s{i}", rng.uniform(38, 41), rng.uniform(114, 119))
                    for i in range(12)]
        g = build_graph(stations)
        assert np.array_equal(g.adjacency, g.adjacency.T)
        assert np.all(np.diag(g.adjacency) == 0.0)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValidationError, match="dup"):
            build_graph([Station("dup", 0.0, 0.0), Station("dup", 0.0, 1.0)])

    def test_bad_threshold_rejected(self):
        with pytest.raises(ValidationError):
            build_graph(PATH3, threshold_km=0.0)

    def test_eigenvalues_within_bounds(self):
        # brute force eigendecomposition on small random geometric graphs
        for seed in range(10):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 21))
            stations = [Station(f"s{i}", rng.uniform(35, 42), rng.uniform(110, 120))
                        for i in range(n)]
            g = build_graph(stations, threshold_km=float(rng.uniform(50, 400)))
            eig = np.linalg.eigvalsh(g.laplacian)
            assert eig.min() >= -1e-9 and eig.max() <= 2.0 + 1e-9, (seed, eig)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        stations = [Station(f"s{i}", rng.uniform(38, 41), rng.uniform(114, 119))
                    for i in range(9)]
        g = build_graph(stations)
        perm = rng.permutation(9)
        g2 = build_graph([stations[i] for i in perm])
        inv = np.argsort(perm)
        assert np.array_equal(g2.laplacian[np.ix_(inv, inv)], g.laplacian)

    def test_isolated_node_identity_row(self):
        far = PATH3 + [Station("lone", 40.0, 100.0)]
        g = build_graph(far, threshold_km=200.0)
        assert g.degree[3] == 0.0
        assert np.array_equal(g.laplacian[3], np.array([0.0, 0.0, 0.0, 1.0]))


class TestApplyLaplacian:
    def test_edgeless_is_identity(self):
        g = build_graph(PATH3, threshold_km=0.001)
        h = Tensor(np.arange(6.0).reshape(3, 2))
        assert np.array_equal(apply_laplacian(g, h).data, h.data)

    def test_constant_vector_on_cycle_maps_to_zero(self):
        # equilateral-ish triangle, all degrees 2, so L annihilates constants
        tri = [Station("a", 0.0, 0.0), Station("b", 0.0, 1.0), Station("c", 0.85, 0.5)]
        g = build_graph(tri, threshold_km=200.0)
        assert np.array_equal(g.degree, np.array([2.0, 2.0, 2.0]))
        out = apply_laplacian(g, Tensor(np.ones((3, 1))))
        # 1/sqrt(2) squared lands on 0.5000000000000001, so not exactly zero
        assert np.allclose(out.data, 0.0, atol=1e-15)

    def test_path3_unit_vector(self):
        g = build_graph(PATH3, threshold_km=200.0)
        out = apply_laplacian(g, Tensor([[1.0], [0.0], [0.0]]))
        assert np.allclose(out.data[:, 0], [1.0, -INV_SQRT2, 0.0], atol=1e-15)

    def test_shape_mismatch(self):
        g = build_graph(PATH3)
        with pytest.raises(DimensionError):
            apply_laplacian(g, Tensor(np.zeros((4, 2))))

    def test_gradient_flows_through(self):
        g = build_graph(PATH3)
        from aircast.numerics import ParamSet, finite_difference_check
        params = ParamSet()
        params.add("h", np.random.default_rng(0).standard_normal((3, 2)))
        report = finite_difference_check(
            lambda p: apply_laplacian(g, p["h"]).square().mean(), params)
        assert report["h"] < 1e-4


class TestUnitBearings:
    def test_cardinal_directions(self):
        sts = [Station("o", 0.0, 0.0), Station("e", 0.0, 1.0), Station("n", 1.0, 0.0)]
        u = unit_bearings(sts)
        assert np.allclose(u[0, 1], [1.0, 0.0], atol=1e-12)   # east
        assert np.allclose(u[0, 2], [0.0, 1.0], atol=1e-12)   # north
        assert np.all(u[np.arange(3), np.arange(3)] == 0.0)

    def test_antisymmetric(self):
        rng = np.random.default_rng(8)
        sts = [Station(f"s{i}", rng.uniform(30, 45), rng.uniform(100, 120))
               for i in range(6)]
        u = unit_bearings(sts)
        assert np.allclose(u + np.swapaxes(u, 0, 1), 0.0, atol=1e-12)


class TestStationCsv:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "stations.csv"
        write_stations(path, PATH3)
        loaded = load_stations(path)
        assert loaded == PATH3

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("name,latitude,longitude\nx,0,0\n")
        with pytest.raises(ValidationError, match="header"):
            load_stations(path)

    def test_bad_coordinate_rejected(self, tmp_path):
        path = tmp_path / "bad2.csv"
        path.write_text("id,lat,lon\nx,abc,0\n")
        with pytest.raises(ValidationError):
            load_stations(path)

    def test_missing_file_is_io_error(self, tmp_path):
        # I/O failures stay OSError so callers can map them to exit code 3
        with pytest.raises(OSError):
            load_stations(tmp_path / "nope.csv")

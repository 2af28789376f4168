import numpy as np
import pytest

from mrsdf.errors import ArgumentError, DimensionError
from mrsdf.fields import ScalarGrid3, Sphere, bake_grid
from mrsdf.mesher import TriMesh, marching_cubes
from mrsdf.metrics import (
    EvalReport,
    asym_chamfer,
    chamfer_l2,
    evaluate_point_sets,
    f_score,
    occupancy_iou,
    sample_surface,
)


def brute_sq_nn(queries: np.ndarray, targets: np.ndarray) -> np.ndarray:
    d = queries[:, None, :] - targets[None, :, :]
    return (d * d).sum(axis=2).min(axis=1)


def random_sets(seed: int, n: int = 500):
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.6, 0.6, (n, 3)), rng.uniform(-0.6, 0.6, (n, 3))


class TestSampleSurface:
    def test_single_triangle_barycentric(self):
        tri = TriMesh(
            np.array([[0.0, 0, 0], [0.1, 0, 0], [0, 0.1, 0]]),
            np.array([[0, 1, 2]]),
        )
        s = sample_surface(tri, 200, seed=1)
        assert np.all(s[:, 2] == 0)
        # inside the triangle: x,y >= 0 and x + y <= 0.1
        assert np.all(s[:, 0] >= -1e-12)
        assert np.all(s[:, 1] >= -1e-12)
        assert np.all(s[:, 0] + s[:, 1] <= 0.1 + 1e-12)

    def test_equal_area_split(self):
        mesh = TriMesh(
            np.array(
                [[0.0, 0, 0], [0.1, 0, 0], [0, 0.1, 0], [0.1, 0.1, 0]]
            ),
            np.array([[0, 1, 2], [1, 3, 2]]),
        )
        s = sample_surface(mesh, 10_000, seed=2)
        # samples with x + y > 0.1 fall in the second triangle
        n2 = int((s[:, 0] + s[:, 1] > 0.1).sum())
        sigma = np.sqrt(10_000 * 0.25)
        assert abs(n2 - 5000) < 3 * sigma

    def test_deterministic(self):
        mesh = marching_cubes(bake_grid(Sphere(0.3), 16))
        assert np.array_equal(
            sample_surface(mesh, 64, seed=7), sample_surface(mesh, 64, seed=7)
        )

    def test_empty_mesh(self):
        empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        with pytest.raises(ArgumentError):
            sample_surface(empty, 10)


class TestChamfer:
    def test_identical_zero(self):
        a, _ = random_sets(3)
        assert chamfer_l2(a, a) == 0.0

    def test_single_pair(self):
        a = np.array([[0.0, 0, 0]])
        b = np.array([[0.1, 0, 0]])
        assert chamfer_l2(a, b) == pytest.approx(10.0, rel=1e-12)

    def test_symmetric(self):
        a, b = random_sets(4)
        assert chamfer_l2(a, b) == chamfer_l2(b, a)

    def test_matches_brute_force(self):
        a, b = random_sets(5)
        expect = 1e3 * 0.5 * (brute_sq_nn(a, b).mean() + brute_sq_nn(b, a).mean())
        assert chamfer_l2(a, b) == expect

    def test_scales_quadratically(self):
        a, b = random_sets(6, n=200)
        assert chamfer_l2(2 * a, 2 * b) == pytest.approx(4 * chamfer_l2(a, b), rel=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(ArgumentError):
            chamfer_l2(np.zeros((0, 3)), np.zeros((1, 3)))

    def test_shape_rejected(self):
        with pytest.raises(DimensionError):
            chamfer_l2(np.zeros((4, 2)), np.zeros((4, 3)))


class TestAsymChamfer:
    def test_subset_zero(self):
        a, _ = random_sets(7)
        assert asym_chamfer(a[:100], a) == 0.0

    def test_single_pair(self):
        assert asym_chamfer(np.array([[0.0, 0, 0]]), np.array([[0.1, 0, 0]])) == pytest.approx(
            10.0, rel=1e-12
        )

    def test_asymmetric_witness(self):
        a = np.array([[0.0, 0, 0]])
        b = np.array([[0.0, 0, 0], [0.5, 0, 0]])
        assert asym_chamfer(a, b) == 0.0
        assert asym_chamfer(b, a) > 0.0

    def test_matches_brute_force(self):
        a, b = random_sets(8)
        assert asym_chamfer(a, b) == 1e3 * brute_sq_nn(a, b).mean()


class TestFScore:
    def test_identical_sets(self):
        a, _ = random_sets(9)
        assert f_score(a, a, 0.01) == 100.0

    def test_far_pair_zero(self):
        assert f_score(np.array([[0.02, 0, 0]]), np.array([[0.0, 0, 0]]), 0.01) == 0.0

    def test_matches_brute_force(self):
        a, b = random_sets(10)
        tau = 0.05
        p = (brute_sq_nn(a, b) <= tau * tau).mean()
        r = (brute_sq_nn(b, a) <= tau * tau).mean()
        expect = 0.0 if p + r == 0 else 100 * 2 * p * r / (p + r)
        assert f_score(a, b, tau) == expect

    def test_swap_exchanges_precision_recall(self):
        a, b = random_sets(11, n=300)
        assert f_score(a, b, 0.04) == pytest.approx(f_score(b, a, 0.04), rel=1e-12)

    def test_bad_tau(self):
        a, b = random_sets(12, n=10)
        with pytest.raises(ArgumentError):
            f_score(a, b, 0.0)


class TestOccupancyIoU:
    def test_identical(self):
        g = bake_grid(Sphere(0.3), 32)
        assert occupancy_iou(g, g) == 1.0

    def test_disjoint(self):
        a = ScalarGrid3(np.where(np.arange(8)[:, None, None] < 4, -1.0, 1.0) * np.ones((8, 8, 8)))
        b = ScalarGrid3(np.where(np.arange(8)[:, None, None] < 4, 1.0, -1.0) * np.ones((8, 8, 8)))
        assert occupancy_iou(a, b) == 0.0

    def test_both_empty(self):
        g = ScalarGrid3(np.ones((8, 8, 8)))
        assert occupancy_iou(g, g) == 1.0

    def test_nested_spheres(self):
        inner = bake_grid(Sphere(0.2), 64)
        outer = bake_grid(Sphere(0.3), 64)
        assert occupancy_iou(inner, outer) == pytest.approx((0.2 / 0.3) ** 3, abs=0.03)

    def test_resolution_mismatch(self):
        with pytest.raises(DimensionError):
            occupancy_iou(bake_grid(Sphere(0.3), 16), bake_grid(Sphere(0.3), 32))


class TestEvalReport:
    def test_round_trip(self):
        a, b = random_sets(13, n=100)
        rep = evaluate_point_sets(a, b, bake_grid(Sphere(0.3), 16), bake_grid(Sphere(0.25), 16))
        back = EvalReport.from_text(rep.to_text())
        assert back.chamfer_l2 == pytest.approx(rep.chamfer_l2, abs=1e-6)
        assert back.f_score == pytest.approx(rep.f_score, abs=1e-4)
        assert back.iou == pytest.approx(rep.iou, abs=1e-6)
        assert back.n_pred == 100 and back.n_gt == 100
        assert back.tau_f == rep.tau_f

    def test_no_grids_round_trip(self):
        a, b = random_sets(14, n=50)
        rep = evaluate_point_sets(a, b)
        assert rep.iou is None
        assert "iou" not in rep.to_text()
        assert EvalReport.from_text(rep.to_text()).iou is None

    def test_field_validation(self):
        with pytest.raises(ArgumentError):
            EvalReport(1.0, 1.0, 150.0, 0.5, 10, 10)
        with pytest.raises(ArgumentError):
            EvalReport(-1.0, 1.0, 50.0, 0.5, 10, 10)
        with pytest.raises(ArgumentError):
            EvalReport(1.0, 1.0, 50.0, 1.5, 10, 10)

    def test_missing_key(self):
        with pytest.raises(ArgumentError):
            EvalReport.from_text("chamfer_l2 1.0\n")

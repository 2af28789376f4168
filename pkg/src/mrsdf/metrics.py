"""Evaluation metrics: Chamfer distances, F-Score, occupancy IoU, and the
surface sampling they consume."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .constants import CHAMFER_SCALE, EVAL_SAMPLES, F_SCORE_TAU
from .errors import ArgumentError, DimensionError
from .fields import ScalarGrid3
from .mesher import TriMesh

Array = np.ndarray


@dataclass
class EvalReport:
    """One evaluation record; distances are in world units (box side 1.28),
    Chamfer values scaled by 10^3."""

    chamfer_l2: float
    asym_chamfer: float
    f_score: float
    iou: float | None  # None when no occupancy grids were available
    n_pred: int
    n_gt: int
    tau_f: float = F_SCORE_TAU

    def __post_init__(self):
        if not 0.0 <= self.f_score <= 100.0:
            raise ArgumentError(f"f_score must be a percentage, got {self.f_score}")
        if self.chamfer_l2 < 0 or self.asym_chamfer < 0:
            raise ArgumentError("chamfer distances must be non-negative")
        if self.iou is not None and not 0.0 <= self.iou <= 1.0:
            raise ArgumentError(f"iou must be in [0,1], got {self.iou}")

    def to_text(self) -> str:
        lines = [
            f"chamfer_l2 {self.chamfer_l2:.6f}",
            f"asym_chamfer {self.asym_chamfer:.6f}",
            f"f_score {self.f_score:.4f}",
        ]
        if self.iou is not None:
            lines.append(f"iou {self.iou:.6f}")
        lines += [
            f"n_pred {self.n_pred}",
            f"n_gt {self.n_gt}",
            f"tau_f {self.tau_f:.6g}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        fields = {}
        for line in text.strip().splitlines():
            key, _, value = line.partition(" ")
            fields[key] = value
        try:
            return cls(
                chamfer_l2=float(fields["chamfer_l2"]),
                asym_chamfer=float(fields["asym_chamfer"]),
                f_score=float(fields["f_score"]),
                iou=float(fields["iou"]) if "iou" in fields else None,
                n_pred=int(fields["n_pred"]),
                n_gt=int(fields["n_gt"]),
                tau_f=float(fields["tau_f"]),
            )
        except KeyError as missing:
            raise ArgumentError(f"evaluation record is missing {missing}") from None


def sample_surface(mesh: TriMesh, n: int = EVAL_SAMPLES, seed: int = 0) -> Array:
    """Area-weighted uniform samples on the mesh surface, [n, 3]."""
    if mesh.num_triangles == 0:
        raise ArgumentError("cannot sample an empty mesh")
    if n < 1:
        raise ArgumentError(f"sample count must be >= 1, got {n}")
    p = mesh.vertices[mesh.triangles]
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    area = 0.5 * np.sqrt((cross * cross).sum(axis=1))
    total = area.sum()
    if total <= 0:
        raise ArgumentError("mesh has zero surface area")
    rng = np.random.Generator(np.random.PCG64(seed))
    tri = rng.choice(len(area), size=n, p=area / total)
    # sqrt of the first coordinate gives uniform barycentric samples
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = p[tri, 0], p[tri, 1], p[tri, 2]
    return (1.0 - r1)[:, None] * a + (r1 * (1.0 - r2))[:, None] * b + (r1 * r2)[:, None] * c


def _check_point_set(pts: Array, name: str) -> Array:
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DimensionError(f"{name} must be [N,3], got {pts.shape}")
    if len(pts) == 0:
        raise ArgumentError(f"{name} is empty")
    return pts


def _sq_nn(queries: Array, targets: Array) -> Array:
    """Exact squared nearest-neighbor distances.  The squared values are
    recomputed from the matched coordinates so they agree bit-for-bit with
    a brute-force double loop."""
    _, idx = cKDTree(targets).query(queries, k=1)
    diff = queries - targets[idx]
    return (diff * diff).sum(axis=1)


def chamfer_l2(a: Array, b: Array) -> float:
    """Symmetric squared-distance Chamfer, two directional means averaged,
    scaled by 10^3."""
    a = _check_point_set(a, "first point set")
    b = _check_point_set(b, "second point set")
    return float(CHAMFER_SCALE * 0.5 * (_sq_nn(a, b).mean() + _sq_nn(b, a).mean()))


def asym_chamfer(a: Array, b: Array) -> float:
    """One-directional squared Chamfer from a to b, scaled by 10^3."""
    a = _check_point_set(a, "query point set")
    b = _check_point_set(b, "target point set")
    return float(CHAMFER_SCALE * _sq_nn(a, b).mean())


def f_score(pred: Array, gt: Array, tau: float = F_SCORE_TAU) -> float:
    """Harmonic mean of precision/recall at distance threshold tau, in %."""
    pred = _check_point_set(pred, "prediction point set")
    gt = _check_point_set(gt, "ground-truth point set")
    if tau <= 0:
        raise ArgumentError(f"tau must be > 0, got {tau}")
    t2 = tau * tau
    precision = float((_sq_nn(pred, gt) <= t2).mean())
    recall = float((_sq_nn(gt, pred) <= t2).mean())
    if precision + recall == 0:
        return 0.0
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def occupancy_iou(a: ScalarGrid3, b: ScalarGrid3, iso: float = 0.0) -> float:
    """Volume overlap of the two below-iso regions on matching grids."""
    if a.res != b.res:
        raise DimensionError(f"grid resolutions differ: {a.res} vs {b.res}")
    inside_a = a.values < iso
    inside_b = b.values < iso
    union = np.logical_or(inside_a, inside_b).sum()
    if union == 0:
        return 1.0
    inter = np.logical_and(inside_a, inside_b).sum()
    return float(inter / union)


def evaluate_point_sets(
    pred: Array,
    gt: Array,
    pred_grid: ScalarGrid3 | None = None,
    gt_grid: ScalarGrid3 | None = None,
    tau: float = F_SCORE_TAU,
) -> EvalReport:
    """Bundle the point metrics (and IoU when grids are given) in one record."""
    iou = None if pred_grid is None or gt_grid is None else occupancy_iou(pred_grid, gt_grid)
    return EvalReport(
        chamfer_l2=chamfer_l2(pred, gt),
        asym_chamfer=asym_chamfer(pred, gt),
        f_score=f_score(pred, gt, tau),
        iou=iou,
        n_pred=len(pred),
        n_gt=len(gt),
        tau_f=tau,
    )

"""Analytic signed distance fields and ground-truth generation.

Shapes are CSG expression trees over exact primitive SDFs.  Union/
intersection/difference via min/max give conservative distance bounds
(never overestimates outside), which is all that sampling, sphere tracing
and supervision need: the zero set is correct.

Also here: grid baking with truncation, training-point sampling, synthetic
depth rendering, visible/occluded point classification for completion, and
an exact hash-accelerated nearest-neighbor distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import (
    BOX_MAX,
    BOX_MIN,
    BOX_SIDE,
    NEAR_SURFACE_BAND,
    NEAR_SURFACE_JITTER,
    SDF_TRUNCATION,
    VISIBILITY_TOL,
)
from .errors import (
    ArgumentError,
    DegenerateShapeError,
    DimensionError,
    FormatError,
    ObservationError,
)

Array = np.ndarray


def as_rng(seed: int | np.random.Generator) -> np.random.Generator:
    """Accept either a seed or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def truncate_sdf(values: Array, bound: float = SDF_TRUNCATION) -> Array:
    return np.clip(values, -bound, bound)


# ---------------------------------------------------------------------------
# CSG shape trees


class Shape:
    """Base class: evaluate signed distance at [N,3] world positions."""

    kind = "shape"

    def eval(self, pts: Array) -> Array:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass
class Sphere(Shape):
    radius: float
    kind = "sphere"

    def eval(self, pts: Array) -> Array:
        return np.linalg.norm(pts, axis=-1) - self.radius

    def to_dict(self) -> dict:
        return {"type": "sphere", "radius": self.radius}


@dataclass
class BoxShape(Shape):
    half_extents: tuple[float, float, float]
    kind = "box"

    def eval(self, pts: Array) -> Array:
        q = np.abs(pts) - np.asarray(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def to_dict(self) -> dict:
        return {"type": "box", "half_extents": list(self.half_extents)}


@dataclass
class Torus(Shape):
    major_radius: float
    minor_radius: float
    kind = "torus"

    def eval(self, pts: Array) -> Array:
        ring = np.hypot(pts[..., 0], pts[..., 1]) - self.major_radius
        return np.hypot(ring, pts[..., 2]) - self.minor_radius

    def to_dict(self) -> dict:
        return {"type": "torus", "major_radius": self.major_radius, "minor_radius": self.minor_radius}


@dataclass
class Capsule(Shape):
    p0: tuple[float, float, float]
    p1: tuple[float, float, float]
    radius: float
    kind = "capsule"

    def eval(self, pts: Array) -> Array:
        a = np.asarray(self.p0)
        b = np.asarray(self.p1)
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0.0:
            return np.linalg.norm(pts - a, axis=-1) - self.radius
        t = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
        closest = a + t[..., None] * ab
        return np.linalg.norm(pts - closest, axis=-1) - self.radius

    def to_dict(self) -> dict:
        return {"type": "capsule", "p0": list(self.p0), "p1": list(self.p1), "radius": self.radius}


@dataclass
class Cylinder(Shape):
    """Z-aligned finite cylinder."""

    radius: float
    half_height: float
    kind = "cylinder"

    def eval(self, pts: Array) -> Array:
        dr = np.hypot(pts[..., 0], pts[..., 1]) - self.radius
        dz = np.abs(pts[..., 2]) - self.half_height
        q = np.stack([dr, dz], axis=-1)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def to_dict(self) -> dict:
        return {"type": "cylinder", "radius": self.radius, "half_height": self.half_height}


@dataclass
class Transformed(Shape):
    """Rigidly transformed child: world point x maps to R^T (x - t) locally."""

    child: Shape
    rotation: Array  # [3,3], world-from-local
    translation: tuple[float, float, float]
    kind = "transform"

    def eval(self, pts: Array) -> Array:
        local = (pts - np.asarray(self.translation)) @ np.asarray(self.rotation)
        return self.child.eval(local)

    def to_dict(self) -> dict:
        return {
            "type": "transform",
            "rotation": np.asarray(self.rotation).tolist(),
            "translation": list(self.translation),
            "child": self.child.to_dict(),
        }


@dataclass
class Union(Shape):
    children: list[Shape]
    kind = "union"

    def eval(self, pts: Array) -> Array:
        return np.minimum.reduce([c.eval(pts) for c in self.children])

    def to_dict(self) -> dict:
        return {"type": "union", "children": [c.to_dict() for c in self.children]}


@dataclass
class Intersection(Shape):
    children: list[Shape]
    kind = "intersection"

    def eval(self, pts: Array) -> Array:
        return np.maximum.reduce([c.eval(pts) for c in self.children])

    def to_dict(self) -> dict:
        return {"type": "intersection", "children": [c.to_dict() for c in self.children]}


@dataclass
class Difference(Shape):
    base: Shape
    cut: Shape
    kind = "difference"

    def eval(self, pts: Array) -> Array:
        return np.maximum(self.base.eval(pts), -self.cut.eval(pts))

    def to_dict(self) -> dict:
        return {"type": "difference", "base": self.base.to_dict(), "cut": self.cut.to_dict()}


def shape_from_dict(d: dict) -> Shape:
    """Rebuild a shape tree from its JSON-style dictionary."""
    try:
        t = d["type"]
        if t == "sphere":
            return Sphere(float(d["radius"]))
        if t == "box":
            return BoxShape(tuple(float(v) for v in d["half_extents"]))
        if t == "torus":
            return Torus(float(d["major_radius"]), float(d["minor_radius"]))
        if t == "capsule":
            return Capsule(
                tuple(float(v) for v in d["p0"]),
                tuple(float(v) for v in d["p1"]),
                float(d["radius"]),
            )
        if t == "cylinder":
            return Cylinder(float(d["radius"]), float(d["half_height"]))
        if t == "transform":
            rot = np.asarray(d["rotation"], dtype=np.float64)
            if rot.shape != (3, 3):
                raise FormatError("transform rotation must be a 3x3 matrix")
            return Transformed(
                shape_from_dict(d["child"]), rot, tuple(float(v) for v in d["translation"])
            )
        if t == "union":
            return Union([shape_from_dict(c) for c in d["children"]])
        if t == "intersection":
            return Intersection([shape_from_dict(c) for c in d["children"]])
        if t == "difference":
            return Difference(shape_from_dict(d["base"]), shape_from_dict(d["cut"]))
    except KeyError as e:
        raise FormatError(f"shape description missing key {e}") from e
    raise FormatError(f"unknown shape type {d.get('type')!r}")


def eval_sdf(shape: Shape, x: Array) -> Array | float:
    """Signed distance at one [3] point (returns scalar) or [N,3] points."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return float(shape.eval(x[None])[0])
    if x.ndim != 2 or x.shape[1] != 3:
        raise DimensionError(f"positions must be [N,3], got {x.shape}")
    return shape.eval(x)


def sdf_gradient(shape: Shape, pts: Array, h: float = 1e-5) -> Array:
    """Central-difference spatial gradient of the field at [N,3] points."""
    g = np.empty_like(pts, dtype=np.float64)
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = h
        g[:, axis] = (shape.eval(pts + step) - shape.eval(pts - step)) / (2 * h)
    return g


def rotation_xyz(rx: float, ry: float, rz: float) -> Array:
    """Rotation matrix from intrinsic x, y, z Euler angles (radians)."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mx @ my @ mz


def random_shape(rng: int | np.random.Generator, max_primitives: int = 4) -> Shape:
    """A random CSG shape whose surface stays well inside the world box."""
    rng = as_rng(rng)

    def prim() -> Shape:
        t = rng.integers(0, 5)
        if t == 0:
            s: Shape = Sphere(float(rng.uniform(0.12, 0.3)))
        elif t == 1:
            s = BoxShape(tuple(rng.uniform(0.1, 0.26, size=3)))
        elif t == 2:
            s = Torus(float(rng.uniform(0.15, 0.28)), float(rng.uniform(0.05, 0.1)))
        elif t == 3:
            p = rng.uniform(-0.2, 0.2, size=3)
            s = Capsule(tuple(-p), tuple(p), float(rng.uniform(0.08, 0.16)))
        else:
            s = Cylinder(float(rng.uniform(0.1, 0.24)), float(rng.uniform(0.12, 0.3)))
        rot = rotation_xyz(*rng.uniform(0, 2 * np.pi, size=3))
        shift = rng.uniform(-0.18, 0.18, size=3)
        return Transformed(s, rot, tuple(shift))

    n = int(rng.integers(2, max_primitives + 1))
    shape: Shape = Union([prim() for _ in range(n)])
    if rng.random() < 0.3:
        cut = Transformed(
            Sphere(float(rng.uniform(0.1, 0.2))),
            np.eye(3),
            tuple(rng.uniform(-0.2, 0.2, size=3)),
        )
        shape = Difference(shape, cut)
    return shape


# ---------------------------------------------------------------------------
# grids and point batches


def grid_nodes(res: int) -> Array:
    """World coordinates of all res^3 node centers, row-major, [res^3, 3]."""
    axis = np.linspace(BOX_MIN, BOX_MAX, res)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)


@dataclass
class ScalarGrid3:
    """Dense node-centered scalar field over the world box."""

    values: Array  # [r, r, r]

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or not (v.shape[0] == v.shape[1] == v.shape[2]):
            raise DimensionError(f"grid values must be cubic [r,r,r], got {v.shape}")
        self.values = v

    @property
    def res(self) -> int:
        return self.values.shape[0]

    @property
    def spacing(self) -> float:
        return BOX_SIDE / (self.res - 1)


def bake_grid(shape: Shape, res: int, truncation: float = SDF_TRUNCATION) -> ScalarGrid3:
    """Evaluate the shape at every grid node and clamp to the truncation band."""
    if res < 2:
        raise ArgumentError(f"grid resolution must be >= 2, got {res}")
    vals = shape.eval(grid_nodes(res)).reshape(res, res, res)
    return ScalarGrid3(truncate_sdf(vals, truncation).astype(np.float32))


@dataclass
class PointBatch:
    """Sampled positions with truncated ground-truth SDF and a role label."""

    positions: Array  # [N, 3]
    gt_sdf: Array  # [N]
    role: str  # uniform | near_surface | visible | occluded

    ROLES = ("uniform", "near_surface", "visible", "occluded")

    def __post_init__(self):
        p = np.asarray(self.positions)
        s = np.asarray(self.gt_sdf)
        if p.ndim != 2 or p.shape[1] != 3 or s.shape != (p.shape[0],):
            raise DimensionError(
                f"point batch wants positions [N,3] and gt_sdf [N], got {p.shape} / {s.shape}"
            )
        if self.role not in self.ROLES:
            raise ArgumentError(f"unknown role {self.role!r}")
        self.positions = p
        self.gt_sdf = s

    def __len__(self) -> int:
        return self.positions.shape[0]

    def validate(self, band: float = NEAR_SURFACE_BAND) -> None:
        if np.any(self.positions < BOX_MIN - 1e-9) or np.any(self.positions > BOX_MAX + 1e-9):
            raise ArgumentError("point batch positions leave the world box")
        if np.any(np.abs(self.gt_sdf) > SDF_TRUNCATION + 1e-9):
            raise ArgumentError("point batch gt_sdf violates truncation")
        if self.role == "near_surface" and np.any(np.abs(self.gt_sdf) >= band):
            raise ArgumentError("near-surface batch violates its band constraint")


def sample_uniform(shape: Shape, n: int, seed: int | np.random.Generator) -> PointBatch:
    """n i.i.d. uniform points in the world box with truncated gt SDF."""
    if n < 1:
        raise ArgumentError(f"need n >= 1 points, got {n}")
    rng = as_rng(seed)
    pts = rng.uniform(BOX_MIN, BOX_MAX, size=(n, 3))
    return PointBatch(pts, truncate_sdf(shape.eval(pts)), "uniform")


def sample_near_surface(
    shape: Shape,
    n: int,
    band: float = NEAR_SURFACE_BAND,
    seed: int | np.random.Generator = 0,
    jitter: float = NEAR_SURFACE_JITTER,
    max_draws: int = 10_000_000,
) -> PointBatch:
    """n points with |gt_sdf| < band.

    Uniform candidates are projected toward the surface with two Newton
    steps along the field gradient, jittered with an isotropic Gaussian,
    then rejected outside the band or the box.
    """
    if n < 1:
        raise ArgumentError(f"need n >= 1 points, got {n}")
    if band <= 0:
        raise DegenerateShapeError("near-surface band must be positive")
    rng = as_rng(seed)
    out: list[Array] = []
    collected = 0
    drawn = 0
    while collected < n:
        m = max(2 * (n - collected), 256)
        drawn += m
        if drawn > max_draws:
            raise DegenerateShapeError(
                f"near-surface sampling rejected {drawn} candidates; surface may not reach the box"
            )
        pts = rng.uniform(BOX_MIN, BOX_MAX, size=(m, 3))
        for _ in range(2):
            s = shape.eval(pts)
            g = sdf_gradient(shape, pts)
            gn = np.maximum(np.sum(g * g, axis=-1), 1e-12)
            step = (s / gn)[:, None] * g
            # CSG kinks can shrink the finite-difference gradient and blow
            # the Newton step up; cap it at half the box side
            norm = np.linalg.norm(step, axis=-1, keepdims=True)
            pts = pts - step * np.minimum(1.0, 0.5 * BOX_SIDE / np.maximum(norm, 1e-12))
        pts = pts + rng.normal(0.0, jitter, size=pts.shape)
        s = shape.eval(pts)
        ok = (
            (np.abs(s) < band)
            & np.all(pts > BOX_MIN, axis=-1)
            & np.all(pts < BOX_MAX, axis=-1)
        )
        pts = pts[ok]
        if len(pts):
            out.append(pts[: n - collected])
            collected += len(out[-1])
    pts = np.concatenate(out, axis=0)
    return PointBatch(pts, truncate_sdf(shape.eval(pts)), "near_surface")


# ---------------------------------------------------------------------------
# synthetic depth observations


@dataclass
class DepthObservation:
    """Pinhole depth image: depth = distance along the (unit) pixel ray, 0 = miss."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: Array  # [3,3] camera-to-world (columns: right, down, forward)
    translation: Array  # [3] camera center in world
    depth: Array  # [H, W]

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        self.depth = np.asarray(self.depth)
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise DimensionError("camera pose wants rotation [3,3] and translation [3]")
        if self.depth.ndim != 2:
            raise DimensionError(f"depth image must be [H,W], got {self.depth.shape}")
        if np.all((self.translation >= BOX_MIN) & (self.translation <= BOX_MAX)):
            raise ObservationError("camera center must lie outside the world box")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def pixel_rays(self) -> Array:
        """Unit world-space direction for every pixel center, [H, W, 3]."""
        h, w = self.depth.shape
        us = (np.arange(w) + 0.5 - self.cx) / self.fx
        vs = (np.arange(h) + 0.5 - self.cy) / self.fy
        uu, vv = np.meshgrid(us, vs, indexing="xy")
        d = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return d @ self.rotation.T

    def hit_points(self) -> Array:
        """Back-projected world points of all valid (depth > 0) pixels, [M,3]."""
        rays = self.pixel_rays()
        mask = self.depth > 0
        return self.translation + self.depth[mask, None] * rays[mask]


def look_at_camera(
    eye: Array,
    target: Array = (0.0, 0.0, 0.0),
    up: Array = (0.0, 1.0, 0.0),
) -> tuple[Array, Array]:
    """Camera-to-world rotation and translation looking from eye at target."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    nf = np.linalg.norm(fwd)
    if nf < 1e-12:
        raise ArgumentError("camera eye and target coincide")
    fwd = fwd / nf
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise ArgumentError("camera up vector is parallel to the view direction")
    right = right / nr
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=1), eye


def render_depth(
    shape: Shape,
    rotation: Array,
    translation: Array,
    width: int = 64,
    height: int = 64,
    fx: float | None = None,
    fy: float | None = None,
    cx: float | None = None,
    cy: float | None = None,
    hit_tol: float = 1e-4,
    max_steps: int = 256,
) -> DepthObservation:
    """Sphere-trace a depth image of the shape from a pinhole camera.

    Default intrinsics frame the world box from the given eye point.
    """
    translation = np.asarray(translation, dtype=np.float64)
    dist = float(np.linalg.norm(translation))
    if fx is None:
        # focal length that keeps the box diagonal comfortably in frame
        fx = fy = 0.82 * width * dist / BOX_SIDE
    if fy is None:
        fy = fx
    if cx is None:
        cx = width / 2.0
    if cy is None:
        cy = height / 2.0
    obs = DepthObservation(fx, fy, cx, cy, rotation, translation, np.zeros((height, width)))
    rays = obs.pixel_rays().reshape(-1, 3)
    n = rays.shape[0]
    t = np.zeros(n)
    hit = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    t_max = dist + 2.0 * BOX_SIDE
    for _ in range(max_steps):
        if not active.any():
            break
        p = translation + t[active, None] * rays[active]
        s = shape.eval(p)
        idx = np.flatnonzero(active)
        newly_hit = s < hit_tol
        hit[idx[newly_hit]] = True
        active[idx[newly_hit]] = False
        t[idx[~newly_hit]] += s[~newly_hit]
        overshot = t[idx] > t_max
        active[idx[overshot]] = False
    depth = np.where(hit, t, 0.0).reshape(height, width)
    obs.depth = depth
    return obs


# ---------------------------------------------------------------------------
# visible / occluded classification for completion


def classify_occluded(obs: DepthObservation, pts: Array, tol: float = VISIBILITY_TOL) -> Array:
    """True where a point is occluded: its projection falls outside the image
    or its ray depth exceeds the recorded depth by more than tol (missed
    pixels record depth 0, so anything behind them counts as occluded)."""
    rel = pts - obs.translation
    cam = rel @ obs.rotation  # camera-frame coordinates
    z = cam[:, 2]
    occ = z <= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(z > 0, obs.fx * cam[:, 0] / z + obs.cx, -1.0)
        v = np.where(z > 0, obs.fy * cam[:, 1] / z + obs.cy, -1.0)
    ui = np.floor(u).astype(np.int64)
    vi = np.floor(v).astype(np.int64)
    inside = (~occ) & (ui >= 0) & (ui < obs.width) & (vi >= 0) & (vi < obs.height)
    occ |= ~inside
    t_p = np.linalg.norm(rel, axis=-1)
    rec = np.zeros(len(pts))
    rec[inside] = obs.depth[vi[inside], ui[inside]]
    occ |= t_p > rec + tol
    return occ


def _ray_box_entry(origin: Array, dirs: Array) -> Array:
    """Parameter t at which each ray first enters the world box (inf if never)."""
    with np.errstate(divide="ignore"):
        t0 = (BOX_MIN - origin) / dirs
        t1 = (BOX_MAX - origin) / dirs
    tmin = np.minimum(t0, t1).max(axis=-1)
    tmax = np.maximum(t0, t1).min(axis=-1)
    tmin = np.where(tmax >= tmin, tmin, np.inf)
    return np.maximum(tmin, 0.0)


def completion_point_sets(
    obs: DepthObservation,
    shape: Shape,
    n_vis: int,
    n_occ: int,
    seed: int | np.random.Generator,
    tol: float = VISIBILITY_TOL,
    surface_fraction: float = 0.75,
) -> tuple[PointBatch, PointBatch]:
    """Sample camera-observable and occluded point sets from a depth image.

    Visible points mix near-surface jitter (+-tol along the pixel ray around
    each hit) with free-space points strictly in front of the recorded
    depth; ground truth comes from the analytic shape.  Occluded points are
    uniform box samples classified by `classify_occluded`.
    """
    if n_vis < 1 or n_occ < 0:
        raise ArgumentError("need n_vis >= 1 and n_occ >= 0")
    mask = obs.depth > 0
    if not mask.any():
        raise ObservationError("depth image has no valid pixels")
    rng = as_rng(seed)

    rays = obs.pixel_rays()[mask]
    depths = obs.depth[mask]
    entries = _ray_box_entry(obs.translation[None, :], rays)

    vis_pts = np.empty((0, 3))
    guard = 0
    while len(vis_pts) < n_vis:
        guard += 1
        if guard > 10_000:
            raise ObservationError("could not draw visible samples inside the box")
        m = max(n_vis - len(vis_pts), 256)
        pick = rng.integers(0, len(depths), size=m)
        d = depths[pick]
        r = rays[pick]
        near = rng.random(m) < surface_fraction
        tmin = entries[pick]
        lo = np.where(near, d - tol, tmin)
        hi = np.where(near, d + tol, np.maximum(d - tol, tmin))
        t = rng.uniform(lo, np.maximum(hi, lo + 1e-9))
        cand = obs.translation + t[:, None] * r
        ok = np.all(cand > BOX_MIN, axis=-1) & np.all(cand < BOX_MAX, axis=-1)
        vis_pts = np.concatenate([vis_pts, cand[ok]], axis=0)
    vis_pts = vis_pts[:n_vis]
    p_v = PointBatch(vis_pts, truncate_sdf(shape.eval(vis_pts)), "visible")

    occ_pts = np.empty((0, 3))
    guard = 0
    while len(occ_pts) < n_occ:
        guard += 1
        if guard > 10_000:
            raise ObservationError("could not draw occluded samples; view covers the whole box")
        m = max(2 * (n_occ - len(occ_pts)), 256)
        cand = rng.uniform(BOX_MIN, BOX_MAX, size=(m, 3))
        cand = cand[classify_occluded(obs, cand, tol)]
        occ_pts = np.concatenate([occ_pts, cand], axis=0)
    occ_pts = occ_pts[:n_occ]
    p_o = PointBatch(occ_pts, truncate_sdf(shape.eval(occ_pts)), "occluded")
    return p_v, p_o


# ---------------------------------------------------------------------------
# exact nearest-neighbor distance via a uniform spatial hash


class SpatialHash:
    """Uniform-cell hash over a fixed point set for exact NN distances.

    Scans cells ring by ring outward from the query cell and stops once the
    best distance provably beats anything in farther rings, so results are
    exact (the brute-force oracle in the tests enforces this).
    """

    def __init__(self, points: Array, cell_size: float | None = None):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
            raise ArgumentError("spatial hash wants a non-empty [N,3] point set")
        self.points = points
        if cell_size is None:
            cell_size = BOX_SIDE / max(4, int(round(len(points) ** (1 / 3))))
        self.cell_size = float(cell_size)
        self.origin = points.min(axis=0)
        cells = np.floor((points - self.origin) / self.cell_size).astype(np.int64)
        self.buckets: dict[tuple[int, int, int], list[int]] = {}
        for i, c in enumerate(map(tuple, cells)):
            self.buckets.setdefault(c, []).append(i)
        self.cell_lo = cells.min(axis=0)
        self.cell_hi = cells.max(axis=0)

    def _ring_cells(self, center: tuple[int, int, int], k: int):
        cx, cy, cz = center
        if k == 0:
            yield center
            return
        for dx in range(-k, k + 1):
            for dy in range(-k, k + 1):
                for dz in range(-k, k + 1):
                    if max(abs(dx), abs(dy), abs(dz)) == k:
                        yield (cx + dx, cy + dy, cz + dz)

    def query(self, x: Array) -> float:
        x = np.asarray(x, dtype=np.float64)
        c = np.floor((x - self.origin) / self.cell_size).astype(np.int64)
        center = (int(c[0]), int(c[1]), int(c[2]))
        # rings below k_min cannot intersect the occupied cells; rings above
        # k_max cover every occupied cell, so the scan always terminates
        k_min = int(np.maximum(np.maximum(self.cell_lo - c, c - self.cell_hi), 0).max())
        k_max = int(np.maximum(np.abs(c - self.cell_lo), np.abs(c - self.cell_hi)).max())
        best = np.inf
        for k in range(k_min, k_max + 1):
            if best <= (k - 1) * self.cell_size:
                # any point in ring >= k sits at least (k-1) cells away
                break
            idx: list[int] = []
            for cell in self._ring_cells(center, k):
                idx.extend(self.buckets.get(cell, ()))
            if idx:
                d = np.linalg.norm(self.points[idx] - x, axis=-1).min()
                best = min(best, float(d))
        return best

    def query_many(self, xs: Array) -> Array:
        return np.array([self.query(x) for x in np.asarray(xs, dtype=np.float64)])


def nn_distance(x: Array, pts: Array | PointBatch) -> float:
    """Exact Euclidean distance from x to the closest point of the set."""
    if isinstance(pts, PointBatch):
        pts = pts.positions
    return SpatialHash(pts).query(x)


def nn_distances(xs: Array, pts: Array | PointBatch) -> Array:
    """Exact NN distance for many queries against one point set."""
    if isinstance(pts, PointBatch):
        pts = pts.positions
    return SpatialHash(pts).query_many(xs)

"""Zero-level-set extraction from node-centered scalar grids and mesh export."""

from dataclasses import dataclass, field

import numpy as np

from .constants import BOX_MIN
from .errors import ArgumentError, DimensionError, FormatError
from .fields import ScalarGrid3, grid_nodes
from .mc_tables import EDGE_TABLE, EDGE_VERTICES, TRI_TABLE, VERTEX_OFFSETS
from .model import ModelConfig, ModelParams, predict_sdf

Array = np.ndarray

DEGENERATE_EDGE = 1e-9  # world units; triangles with a shorter edge are dropped
MESH_GRID_RES = 128  # published meshing resolution


@dataclass
class TriMesh:
    """Triangle mesh with per-vertex provenance: the grid cell (lower node
    index of the crossed edge) each vertex was extracted from."""

    vertices: Array  # [V, 3] float
    triangles: Array  # [T, 3] int
    cells: Array = field(default=None)  # [V, 3] int

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise DimensionError("triangle indices out of range")
        c = self.cells
        c = np.zeros((len(v), 3), dtype=np.int64) if c is None else np.asarray(c, dtype=np.int64)
        if c.shape != (len(v), 3):
            raise DimensionError(f"cells must be [V,3], got {c.shape}")
        self.vertices = v
        self.triangles = t
        self.cells = c

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)


def eval_field_grid(
    z_grids: list[Array],
    params: ModelParams,
    cfg: ModelConfig,
    m: int | None = None,
    r_out: int = MESH_GRID_RES,
    chunk: int = 8192,
) -> ScalarGrid3:
    """Decode the aggregate field (up to level m) at every node of an
    r_out^3 grid.  Values are stored as given; no truncation is applied so
    the node values equal the pointwise decode."""
    if r_out < 2:
        raise ArgumentError(f"output resolution must be >= 2, got {r_out}")
    nodes = grid_nodes(r_out)
    out = np.empty(len(nodes), dtype=np.float32)
    for lo in range(0, len(nodes), chunk):
        hi = min(lo + chunk, len(nodes))
        out[lo:hi] = predict_sdf(z_grids, params, cfg, nodes[lo:hi], m)
    return ScalarGrid3(out.reshape(r_out, r_out, r_out))


def marching_cubes(grid: ScalarGrid3, iso: float = 0.0) -> TriMesh:
    """Standard 256-case marching cubes with linear edge interpolation.

    Vertices are deduplicated by global edge id, so shared edges between
    cells produce shared vertices.  An all-positive or all-negative field
    yields an empty mesh.
    """
    vals = np.asarray(grid.values, dtype=np.float64)
    r = grid.res
    if r < 2:
        raise ArgumentError("marching cubes needs a grid of resolution >= 2")
    spacing = grid.spacing
    inside = vals < iso

    # case index per cell from the eight corner in/out bits
    cases = np.zeros((r - 1, r - 1, r - 1), dtype=np.int32)
    for bit, (dx, dy, dz) in enumerate(VERTEX_OFFSETS):
        corner = inside[dx : dx + r - 1, dy : dy + r - 1, dz : dz + r - 1]
        cases |= corner.astype(np.int32) << bit
    active = np.argwhere((cases != 0) & (cases != 255))

    # one unique vertex per crossed grid edge: key = (lower node, axis)
    edge_axis = np.array([_edge_axis(a, b) for a, b in EDGE_VERTICES])
    edge_base = np.array(
        [
            np.minimum(VERTEX_OFFSETS[a], VERTEX_OFFSETS[b])
            for a, b in EDGE_VERTICES
        ],
        dtype=np.int64,
    )
    vertex_ids: dict[int, int] = {}
    verts: list[Array] = []
    cells: list[Array] = []
    tris: list[tuple[int, int, int]] = []

    for ix, iy, iz in active:
        case = cases[ix, iy, iz]
        crossing = EDGE_TABLE[case]
        cell = np.array([ix, iy, iz], dtype=np.int64)
        local: dict[int, int] = {}
        for e in range(12):
            if not crossing & (1 << e):
                continue
            node = cell + edge_base[e]
            axis = edge_axis[e]
            key = ((node[0] * r + node[1]) * r + node[2]) * 3 + axis
            vid = vertex_ids.get(key)
            if vid is None:
                v0 = vals[node[0], node[1], node[2]]
                n1 = node.copy()
                n1[axis] += 1
                v1 = vals[n1[0], n1[1], n1[2]]
                t = (iso - v0) / (v1 - v0)
                pos = BOX_MIN + node * spacing
                pos = pos.astype(np.float64)
                pos[axis] += t * spacing
                vid = len(verts)
                verts.append(pos)
                cells.append(node)
                vertex_ids[key] = vid
            local[e] = vid
        row = TRI_TABLE[case]
        for t0 in range(0, len(row), 3):
            # reversed order so face normals point out of the negative side
            a, b, c = (local[row[t0 + 2]], local[row[t0 + 1]], local[row[t0]])
            if a == b or b == c or a == c:
                continue
            tris.append((a, b, c))

    if not tris:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    vertices = np.array(verts)
    triangles = np.array(tris, dtype=np.int64)
    triangles = _drop_degenerate(vertices, triangles)
    return TriMesh(vertices, triangles, np.array(cells, dtype=np.int64))


def _edge_axis(a: int, b: int) -> int:
    pa, pb = VERTEX_OFFSETS[a], VERTEX_OFFSETS[b]
    for axis in range(3):
        if pa[axis] != pb[axis]:
            return axis
    raise ArgumentError("edge endpoints coincide")


def _drop_degenerate(vertices: Array, triangles: Array) -> Array:
    p = vertices[triangles]
    e = np.stack(
        [p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1
    )
    shortest = np.sqrt((e * e).sum(axis=2)).min(axis=1)
    return triangles[shortest > DEGENERATE_EDGE]


# ---------------------------------------------------------------------------
# export


def export_obj(mesh: TriMesh) -> bytes:
    """ASCII OBJ with 1-based face indices."""
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    return ("\n".join(lines) + "\n").encode("ascii") if lines else b""


def export_ply(mesh: TriMesh) -> bytes:
    """Binary little-endian PLY: float32 positions, uchar-counted int32 faces."""
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {mesh.num_vertices}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {mesh.num_triangles}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    ).encode("ascii")
    vbuf = mesh.vertices.astype("<f4").tobytes()
    faces = np.zeros(mesh.num_triangles, dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    faces["n"] = 3
    faces["idx"] = mesh.triangles
    return header + vbuf + faces.tobytes()


def export_mesh(mesh: TriMesh, fmt: str = "obj") -> bytes:
    """Serialize to 'obj' (ASCII) or 'ply' (binary little-endian)."""
    fmt = fmt.lower()
    if fmt == "obj":
        return export_obj(mesh)
    if fmt == "ply":
        return export_ply(mesh)
    raise FormatError(f"unknown mesh format {fmt!r} (use 'obj' or 'ply')")


def import_obj(blob: bytes) -> TriMesh:
    """Read the v/f subset of ASCII OBJ (triangular faces, 1-based indices)."""
    vertices: list[list[float]] = []
    triangles: list[list[int]] = []
    for ln, raw in enumerate(blob.decode("ascii", errors="replace").splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0] not in ("v", "f"):
            continue
        try:
            if parts[0] == "v":
                vertices.append([float(v) for v in parts[1:4]])
            else:
                # faces may carry v/vt/vn references; keep the vertex index
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) != 3:
                    raise FormatError(f"OBJ line {ln}: only triangular faces are supported")
                triangles.append([i - 1 for i in idx])
        except ValueError as e:
            raise FormatError(f"OBJ line {ln}: {e}") from e
    return TriMesh(
        np.asarray(vertices, dtype=np.float64).reshape(len(vertices), 3),
        np.asarray(triangles, dtype=np.int64).reshape(len(triangles), 3),
    )


def import_ply(blob: bytes) -> TriMesh:
    """Read the binary PLY layout export_ply writes."""
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply") or end < 0:
        raise FormatError("not a PLY file")
    nv = nt = None
    for line in blob[:end].decode("ascii", errors="replace").splitlines():
        parts = line.split()
        if parts[:2] == ["format", "binary_little_endian"]:
            pass
        elif parts[:1] == ["format"]:
            raise FormatError(f"unsupported PLY format {' '.join(parts[1:])!r}")
        elif parts[:2] == ["element", "vertex"]:
            nv = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            nt = int(parts[2])
    if nv is None or nt is None:
        raise FormatError("PLY header is missing vertex or face counts")
    off = end + len(b"end_header\n")
    vbytes = nv * 12
    fbytes = nt * 13
    if len(blob) != off + vbytes + fbytes:
        raise FormatError("PLY payload size does not match the header counts")
    vertices = np.frombuffer(blob[off : off + vbytes], dtype="<f4").reshape(nv, 3)
    faces = np.frombuffer(blob[off + vbytes :], dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    if nt and not np.all(faces["n"] == 3):
        raise FormatError("PLY faces must all be triangles")
    return TriMesh(vertices.astype(np.float64), faces["idx"].astype(np.int64))


def import_mesh(blob: bytes, fmt: str) -> TriMesh:
    fmt = fmt.lower()
    if fmt == "obj":
        return import_obj(blob)
    if fmt == "ply":
        return import_ply(blob)
    raise FormatError(f"unknown mesh format {fmt!r} (use 'obj' or 'ply')")

"""The multiresolution latent hierarchy.

A shape is represented by one latent grid per level: level 0 is a single
global code (resolution 1), finer levels are cubic grids of local codes.
This module owns the level layout, code lookup, the upsampling chain that
turns the global code into per-level context grids, spatial dropout over
whole cells, and the binary latent container.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .constants import LEAKY_SLOPE
from .errors import ArgumentError, DimensionError, FormatError
from .kernels import (
    dropout_cells,
    leaky_relu_bwd,
    leaky_relu_fwd,
    tconv3d_bwd,
    tconv3d_fwd,
    trilinear_sample,
)

Array = np.ndarray

MAGIC = b"MDIF"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class LevelSpec:
    """Per-level (resolution, channels), coarsest first.

    Level 0 must be a single global code (resolution 1) unless
    `allow_grid_root` is set, which the local-only ablation uses to train a
    model whose root level is already a grid.
    """

    levels: tuple[tuple[int, int], ...]
    allow_grid_root: bool = False

    def __post_init__(self):
        if len(self.levels) < 1:
            raise ArgumentError("need at least one level")
        object.__setattr__(
            self, "levels", tuple((int(r), int(c)) for r, c in self.levels)
        )
        for r, c in self.levels:
            if r < 1 or c < 1:
                raise ArgumentError(f"bad level entry (r={r}, c={c})")
        if self.levels[0][0] != 1 and not self.allow_grid_root:
            raise ArgumentError("level 0 must have resolution 1 (a single global code)")
        res = [r for r, _ in self.levels]
        for a, b in zip(res, res[1:]):
            if b <= a:
                raise ArgumentError(f"level resolutions must strictly increase, got {res}")

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def resolutions(self) -> tuple[int, ...]:
        return tuple(r for r, _ in self.levels)

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(c for _, c in self.levels)

    def total_scalars(self) -> int:
        return sum(c * r**3 for r, c in self.levels)

    def to_string(self) -> str:
        return ",".join(f"{r}x{c}" for r, c in self.levels)

    @classmethod
    def from_string(cls, text: str, allow_grid_root: bool = False) -> "LevelSpec":
        try:
            levels = tuple(
                (int(r), int(c))
                for r, c in (part.split("x") for part in text.split(","))
            )
        except ValueError as e:
            raise ArgumentError(f"cannot parse level spec {text!r}") from e
        return cls(levels, allow_grid_root=allow_grid_root)


@dataclass
class LatentHierarchy:
    """One latent grid [c_n, r_n, r_n, r_n] per level."""

    spec: LevelSpec
    grids: list[Array] = field(repr=False)

    def __post_init__(self):
        if len(self.grids) != self.spec.num_levels:
            raise DimensionError("grid count does not match the level spec")
        for n, ((r, c), g) in enumerate(zip(self.spec.levels, self.grids)):
            if g.shape != (c, r, r, r):
                raise DimensionError(
                    f"level {n} grid has shape {g.shape}, spec wants {(c, r, r, r)}"
                )

    def copy(self) -> "LatentHierarchy":
        return LatentHierarchy(self.spec, [g.copy() for g in self.grids])

    def astype(self, dtype) -> "LatentHierarchy":
        return LatentHierarchy(self.spec, [g.astype(dtype) for g in self.grids])


def zero_hierarchy(spec: LevelSpec, dtype=np.float32) -> LatentHierarchy:
    return LatentHierarchy(
        spec, [np.zeros((c, r, r, r), dtype=dtype) for r, c in spec.levels]
    )


def latent_at(hier: LatentHierarchy, n: int, x: Array) -> Array:
    """Latent codes [N, c_n] at world positions [N, 3] (level 0 ignores x)."""
    if not 0 <= n < hier.spec.num_levels:
        raise ArgumentError(f"level {n} out of range for {hier.spec.num_levels} levels")
    return trilinear_sample(hier.grids[n], x)[0]


def hat_latent_at(hat_grid: Array, x: Array) -> Array:
    """Sample an upsampled global-context grid at world positions."""
    return trilinear_sample(hat_grid, x)[0]


# ---------------------------------------------------------------------------
# global connection: upsample the level-0 code to each finer resolution


def global_chain_shapes(c0: int, c_n: int, r_n: int) -> list[tuple[int, int]]:
    """(in, out) channels of each stride-2 upsampling layer from 1^3 to r_n^3.

    Channels halve per doubling, floored at (and finally forced to) c_n.
    """
    k = int(round(np.log2(r_n)))
    if 2**k != r_n or k < 1:
        raise ArgumentError(f"global connection needs a power-of-two resolution, got {r_n}")
    shapes = []
    cin = c0
    for i in range(k):
        cout = c_n if i == k - 1 else max(c_n, c0 // 2 ** (i + 1))
        shapes.append((cin, cout))
        cin = cout
    return shapes


def global_connection_fwd(
    z0: Array, chain: list[tuple[Array, Array]], alpha: float = LEAKY_SLOPE
) -> tuple[Array, tuple]:
    """Upsample [B, c0, 1, 1, 1] (or [c0,1,1,1]) through transposed convs.

    Each layer doubles the resolution (stride 2; any even kernel size k with
    padding (k-2)/2 doubles exactly) with a leaky ReLU between layers and
    none after the last.
    """
    squeeze = z0.ndim == 4
    h = z0[None] if squeeze else z0
    if h.ndim != 5:
        raise DimensionError(f"global connection input must be [B,c,1,1,1], got {z0.shape}")
    caches = []
    for li, (kernel, bias) in enumerate(chain):
        h, tcache = tconv3d_fwd(h, kernel, bias, stride=2, padding=(kernel.shape[2] - 2) // 2)
        acache = None
        if li < len(chain) - 1:
            h, acache = leaky_relu_fwd(h, alpha)
        caches.append((tcache, acache))
    out = h[0] if squeeze else h
    return out, (caches, squeeze)


def global_connection_bwd(cache: tuple, gout: Array) -> tuple[Array, list[tuple[Array, Array]]]:
    """Returns (grad z0, per-layer (grad kernel, grad bias))."""
    caches, squeeze = cache
    g = gout[None] if squeeze else gout
    layer_grads: list[tuple[Array, Array]] = [None] * len(caches)  # type: ignore[list-item]
    for li in range(len(caches) - 1, -1, -1):
        tcache, acache = caches[li]
        if acache is not None:
            g = leaky_relu_bwd(acache, g)
        g, gk, gb = tconv3d_bwd(tcache, g)
        layer_grads[li] = (gk, gb)
    gz0 = g[0] if squeeze else g
    return gz0, layer_grads


# ---------------------------------------------------------------------------
# dropout over hierarchy levels


def dropout_hierarchy(
    hier: LatentHierarchy, rate: float, rng: np.random.Generator
) -> tuple[LatentHierarchy, list[Array | None]]:
    """Spatial-cell dropout on every grid level; a resolution-1 root (the
    global code) is never dropped.  Returns (masked hierarchy, masks)."""
    grids: list[Array] = []
    masks: list[Array | None] = []
    for n, g in enumerate(hier.grids):
        if hier.spec.resolutions[n] == 1:
            grids.append(g)
            masks.append(None)
        else:
            masked, keep = dropout_cells(g, rate, rng)
            grids.append(masked)
            masks.append(keep)
    return LatentHierarchy(hier.spec, grids), masks


# ---------------------------------------------------------------------------
# binary latent container


def serialize(hier: LatentHierarchy) -> bytes:
    """Pack a hierarchy as magic, version, level table, then little-endian
    float32 grid payloads in level order."""
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, hier.spec.num_levels)]
    for r, c in hier.spec.levels:
        parts.append(struct.pack("<II", r, c))
    for g in hier.grids:
        parts.append(np.ascontiguousarray(g, dtype="<f4").tobytes())
    return b"".join(parts)


def deserialize(blob: bytes) -> LatentHierarchy:
    if blob[:4] != MAGIC:
        raise FormatError(f"bad latent container magic {blob[:4]!r}")
    try:
        version, n_levels = struct.unpack_from("<II", blob, 4)
    except struct.error as e:
        raise FormatError("latent container truncated in header") from e
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported latent container version {version}")
    off = 12
    levels = []
    for _ in range(n_levels):
        try:
            r, c = struct.unpack_from("<II", blob, off)
        except struct.error as e:
            raise FormatError("latent container truncated in level table") from e
        levels.append((r, c))
        off += 8
    spec = LevelSpec(tuple(levels), allow_grid_root=levels[0][0] != 1)
    grids = []
    for r, c in levels:
        count = c * r**3
        end = off + 4 * count
        if end > len(blob):
            raise FormatError("latent container truncated in payload")
        g = np.frombuffer(blob[off:end], dtype="<f4").reshape(c, r, r, r)
        grids.append(g.copy())  # frombuffer views are read-only
        off = end
    if off != len(blob):
        raise FormatError(f"latent container has {len(blob) - off} trailing bytes")
    return LatentHierarchy(spec, grids)

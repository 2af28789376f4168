"""Persistence: a sectioned binary tensor archive and the artifacts on it.

One container format serves every binary artifact except the latent
hierarchy (which has its own fixed wire layout in the hierarchy module):
a JSON header names the payload kind, carries scalar metadata, and tables
the named tensors that follow as raw little-endian blocks.  A sha256 of
everything before it is appended so loaders detect truncation and silent
corruption.  Checkpoints, baked grids, point batches, and depth images are
all thin layers over this one format; shape descriptions are plain JSON
text.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, FormatError
from .fields import DepthObservation, PointBatch, ScalarGrid3, Shape, shape_from_dict
from .kernels import AdamState
from .model import ModelConfig, ModelParams

Array = np.ndarray

ARCHIVE_MAGIC = b"MDAR"
ARCHIVE_VERSION = 1

# the only payload dtypes the wire format admits
_DTYPE_TAGS = ("<f4", "<f8", "<i4", "<i8", "|u1")


def _canon_json(obj) -> bytes:
    """Canonical JSON bytes: sorted keys, no whitespace, hence hashable."""
    try:
        return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    except (TypeError, ValueError) as e:
        raise ArgumentError(f"metadata is not JSON-serializable: {e}") from e


# ---------------------------------------------------------------------------
# generic sectioned archive


@dataclass(frozen=True)
class Archive:
    """A decoded container: payload kind, scalar metadata, named tensors."""

    kind: str
    meta: dict
    tensors: dict[str, Array] = field(repr=False)


def pack_archive(kind: str, tensors: dict[str, Array], meta: dict | None = None) -> bytes:
    """Encode named tensors plus metadata into one self-checking blob."""
    table = []
    payloads = []
    for name in sorted(tensors):
        a = np.ascontiguousarray(tensors[name])
        tag = a.dtype.str
        if tag not in _DTYPE_TAGS:
            raise FormatError(f"tensor {name!r} has unsupported dtype {tag}")
        table.append([name, tag, list(a.shape)])
        payloads.append(a.tobytes())
    header = _canon_json({"kind": kind, "meta": meta or {}, "tensors": table})
    parts = [
        ARCHIVE_MAGIC,
        struct.pack("<IQ", ARCHIVE_VERSION, len(header)),
        header,
        *payloads,
    ]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def unpack_archive(blob: bytes, expect_kind: str | None = None) -> Archive:
    if blob[:4] != ARCHIVE_MAGIC:
        raise FormatError(f"bad archive magic {blob[:4]!r}")
    if len(blob) < 48:
        raise FormatError("archive truncated in header")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise FormatError("archive content hash mismatch (truncated or corrupted)")
    version, header_len = struct.unpack_from("<IQ", body, 4)
    if version != ARCHIVE_VERSION:
        raise FormatError(f"unsupported archive version {version}")
    off = 16
    try:
        header = json.loads(body[off : off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"archive header is not valid JSON: {e}") from e
    off += header_len
    kind = header.get("kind")
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(f"archive holds {kind!r}, expected {expect_kind!r}")
    tensors: dict[str, Array] = {}
    for name, tag, shape in header["tensors"]:
        if tag not in _DTYPE_TAGS:
            raise FormatError(f"tensor {name!r} has unsupported dtype {tag}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * np.dtype(tag).itemsize
        if off + nbytes > len(body):
            raise FormatError(f"archive truncated in tensor {name!r}")
        a = np.frombuffer(body[off : off + nbytes], dtype=tag).reshape(shape)
        tensors[name] = a.copy()  # frombuffer views are read-only
        off += nbytes
    if off != len(body):
        raise FormatError(f"archive has {len(body) - off} trailing payload bytes")
    return Archive(kind, header["meta"], tensors)


def save_archive(path: str | Path, kind: str, tensors: dict[str, Array], meta: dict | None = None) -> None:
    Path(path).write_bytes(pack_archive(kind, tensors, meta))


def load_archive(path: str | Path, expect_kind: str | None = None) -> Archive:
    return unpack_archive(Path(path).read_bytes(), expect_kind)


def file_digest(path: str | Path) -> str:
    """sha256 hex digest of a file's bytes, for manifest entries."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# model configuration as JSON-safe dictionaries

_CONFIG_FIELDS = {f.name for f in dataclasses.fields(ModelConfig)}
_TUPLE_INT_FIELDS = ("decoder_widths", "trunk_channels")


def config_to_dict(cfg: ModelConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(d: dict) -> ModelConfig:
    """Build a ModelConfig from a (possibly partial) dictionary.

    Unknown keys are rejected rather than ignored; missing keys take the
    defaults.  List-valued entries from JSON become the tuples the config
    expects.
    """
    if not isinstance(d, dict):
        raise FormatError(f"config must be a mapping, got {type(d).__name__}")
    unknown = sorted(set(d) - _CONFIG_FIELDS)
    if unknown:
        raise FormatError(f"unknown config keys: {', '.join(unknown)}")
    kw = dict(d)
    if "levels" in kw:
        try:
            kw["levels"] = tuple((int(r), int(c)) for r, c in kw["levels"])
        except (TypeError, ValueError) as e:
            raise FormatError(f"levels must be a list of [resolution, channels] pairs: {e}") from e
    for key in _TUPLE_INT_FIELDS:
        if key in kw:
            kw[key] = tuple(int(v) for v in kw[key])
    return ModelConfig(**kw)


def config_digest(cfg: ModelConfig) -> str:
    """sha256 hex digest of the canonical config JSON."""
    return hashlib.sha256(_canon_json(config_to_dict(cfg))).hexdigest()


def build_id(source_dir: str | Path | None = None) -> str:
    """git-describe style identifier of the running code, or the package
    version when no repository is reachable."""
    root = Path(source_dir) if source_dir else Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=root,
            capture_output=True,
            text=True,
            timeout=10,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from . import __version__

    return f"v{__version__}"


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    """Training state snapshot: everything needed to resume or evaluate."""

    config: ModelConfig
    params: ModelParams
    states: dict[str, AdamState]
    iteration: int
    loss_history: Array  # [iterations]
    level_history: Array  # [iterations, num_levels]

    def __post_init__(self):
        self.loss_history = np.asarray(self.loss_history, dtype=np.float64)
        self.level_history = np.asarray(self.level_history, dtype=np.float64)
        if self.iteration < 0:
            raise ArgumentError(f"iteration count {self.iteration} is negative")
        if set(self.states) != set(self.params.tensors):
            raise ArgumentError("optimizer state names do not match parameter names")

    def bit_equal(self, other: "Checkpoint") -> bool:
        def arr_eq(a: Array | None, b: Array | None) -> bool:
            if a is None or b is None:
                return a is None and b is None
            return a.dtype == b.dtype and np.array_equal(a, b)

        return (
            self.config == other.config
            and self.iteration == other.iteration
            and self.params.bit_equal(other.params)
            and arr_eq(self.loss_history, other.loss_history)
            and arr_eq(self.level_history, other.level_history)
            and set(self.states) == set(other.states)
            and all(
                self.states[k].t == other.states[k].t
                and arr_eq(self.states[k].m, other.states[k].m)
                and arr_eq(self.states[k].v, other.states[k].v)
                for k in self.states
            )
        )


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.config
    tensors: dict[str, Array] = {
        "loss_history": ckpt.loss_history,
        "level_history": ckpt.level_history,
    }
    for name, t in ckpt.params.tensors.items():
        tensors[f"param.{name}"] = t
    adam_t = {}
    for name, st in ckpt.states.items():
        adam_t[name] = st.t
        if st.m is not None:
            tensors[f"adam.m.{name}"] = st.m
        if st.v is not None:
            tensors[f"adam.v.{name}"] = st.v
    meta = {
        "config": config_to_dict(cfg),
        "config_hash": config_digest(cfg),
        "seed": cfg.seed,
        "iteration": ckpt.iteration,
        "adam_t": adam_t,
    }
    return pack_archive("checkpoint", tensors, meta)


def checkpoint_from_bytes(blob: bytes) -> Checkpoint:
    ar = unpack_archive(blob, expect_kind="checkpoint")
    cfg = config_from_dict(ar.meta["config"])
    if ar.meta.get("config_hash") != config_digest(cfg):
        raise FormatError("checkpoint config hash does not match its config")
    params = ModelParams(
        {k[len("param.") :]: v for k, v in ar.tensors.items() if k.startswith("param.")}
    )
    states: dict[str, AdamState] = {}
    for name, t in ar.meta["adam_t"].items():
        if name not in params.tensors:
            raise FormatError(f"optimizer state {name!r} has no matching parameter")
        states[name] = AdamState(
            lr=cfg.lr,
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            eps=cfg.eps,
            t=int(t),
            m=ar.tensors.get(f"adam.m.{name}"),
            v=ar.tensors.get(f"adam.v.{name}"),
        )
    return Checkpoint(
        config=cfg,
        params=params,
        states=states,
        iteration=int(ar.meta["iteration"]),
        loss_history=ar.tensors["loss_history"],
        level_history=ar.tensors["level_history"],
    )


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(ckpt))


def load_checkpoint(path: str | Path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# dataset artifacts: grids, point batches, depth images, shape descriptions


def save_grid(path: str | Path, grid: ScalarGrid3) -> None:
    save_archive(path, "grid", {"values": np.asarray(grid.values, dtype=np.float64)})


def load_grid(path: str | Path) -> ScalarGrid3:
    return ScalarGrid3(load_archive(path, "grid").tensors["values"])


def save_point_batch(path: str | Path, batch: PointBatch) -> None:
    save_archive(
        path,
        "points",
        {
            "positions": np.asarray(batch.positions, dtype=np.float64),
            "gt_sdf": np.asarray(batch.gt_sdf, dtype=np.float64),
        },
        {"role": batch.role},
    )


def load_point_batch(path: str | Path) -> PointBatch:
    ar = load_archive(path, "points")
    return PointBatch(ar.tensors["positions"], ar.tensors["gt_sdf"], ar.meta["role"])


def save_depth(path: str | Path, obs: DepthObservation) -> None:
    save_archive(
        path,
        "depth",
        {
            "rotation": np.asarray(obs.rotation, dtype=np.float64),
            "translation": np.asarray(obs.translation, dtype=np.float64),
            "depth": np.asarray(obs.depth, dtype=np.float64),
        },
        {"fx": obs.fx, "fy": obs.fy, "cx": obs.cx, "cy": obs.cy},
    )


def load_depth(path: str | Path) -> DepthObservation:
    ar = load_archive(path, "depth")
    m = ar.meta
    return DepthObservation(
        fx=float(m["fx"]),
        fy=float(m["fy"]),
        cx=float(m["cx"]),
        cy=float(m["cy"]),
        rotation=ar.tensors["rotation"],
        translation=ar.tensors["translation"],
        depth=ar.tensors["depth"],
    )


def save_shape(path: str | Path, shape: Shape) -> None:
    """Shape description file: the CSG tree as indented JSON text."""
    Path(path).write_text(json.dumps(shape.to_dict(), indent=2, sort_keys=True) + "\n")


def load_shape(path: str | Path) -> Shape:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"shape description is not valid JSON: {e}") from e
    return shape_from_dict(d)

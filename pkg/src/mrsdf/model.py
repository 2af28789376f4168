"""The full encoder/decoder model over the latent hierarchy.

Forward/backward passes are composed explicitly from the kernels module
(no tape).  One shape is represented by per-level latent grids; decoding a
world point x works level by level:

  level 0:  sample the global code z0,    decode [z0, x]          -> s_0
  level n:  sample z_n and the upsampled  decode [z_n, hat z_n]   -> r_n
            global-context grid at x                    (no position input)

and the level-n field estimate is the running sum s_n = s_0 + r_1 + ... +
r_n.  The `no_residual` ablation makes every decoder regress the field
directly (the estimate is then the last level alone); `local_only` drops
level 0 and positions entirely and decodes a single grid's codes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    DECODER_WIDTHS,
    DESK_INPUT_RES,
    DESK_LEVELS,
    DROPOUT_RATE,
    LEAKY_SLOPE,
    SDF_TRUNCATION,
    TRAIN_LR,
    TRUNK_CHANNELS,
)
from .errors import ArgumentError, DimensionError, NumericError
from .fields import PointBatch, ScalarGrid3
from .hierarchy import (
    LatentHierarchy,
    LevelSpec,
    global_chain_shapes,
    global_connection_bwd,
    global_connection_fwd,
)
from .kernels import (
    AdamState,
    adam_step,
    conv3d_bwd,
    conv3d_fwd,
    dropout_cells,
    leaky_relu_bwd,
    leaky_relu_fwd,
    linear_bwd,
    linear_fwd,
    tconv3d_bwd,
    tconv3d_fwd,
    trilinear_sample,
    trilinear_sample_bwd,
)

Array = np.ndarray


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ModelConfig:
    levels: tuple[tuple[int, int], ...] = DESK_LEVELS
    input_res: int = DESK_INPUT_RES
    decoder_widths: tuple[int, ...] = DECODER_WIDTHS
    trunk_channels: tuple[int, ...] = TRUNK_CHANNELS
    alpha: float = LEAKY_SLOPE
    dropout_rate: float = DROPOUT_RATE
    lr: float = TRAIN_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    batch_size: int = 8
    points_per_set: int = 4096
    iterations: int = 5000
    seed: int = 0
    no_residual: bool = False
    no_global_connection: bool = False
    local_only: bool = False

    def __post_init__(self):
        spec = self.level_spec  # validates level layout
        if self.local_only and spec.num_levels != 1:
            raise ArgumentError("local_only uses exactly one (grid) level")
        if len(self.trunk_channels) < 1:
            raise ArgumentError("need at least one trunk stage")
        t = self.trunk_res
        if t < 1:
            raise ArgumentError(
                f"input resolution {self.input_res} too small for "
                f"{len(self.trunk_channels)} stride-2 trunk stages"
            )
        if self.input_res % (2 ** len(self.trunk_channels)) != 0:
            raise ArgumentError("input resolution must be divisible by the trunk downsampling")
        for r, _ in self.levels:
            hi, lo = max(t, r), min(t, r)
            if hi % lo != 0 or (hi // lo) & (hi // lo - 1):
                raise ArgumentError(
                    f"level resolution {r} unreachable from trunk resolution {t} by factor-2 steps"
                )
        if self.batch_size < 1 or self.points_per_set < 1 or self.iterations < 0:
            raise ArgumentError("batch size / points per set / iterations out of range")

    @property
    def level_spec(self) -> LevelSpec:
        return LevelSpec(self.levels, allow_grid_root=self.local_only)

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def trunk_res(self) -> int:
        return self.input_res // (2 ** len(self.trunk_channels))

    def decoder_input_dim(self, n: int) -> int:
        r, c = self.levels[n]
        if self.local_only:
            return c
        return c + 3 if n == 0 else 2 * c

    def decoder_layer_dims(self, n: int) -> list[tuple[int, int]]:
        """(d_in, d_out) per dense layer: hidden stack then the scalar head.

        The raw input is re-concatenated into the inputs of the second and
        third hidden layers when they exist.
        """
        d_in = self.decoder_input_dim(n)
        dims = [(d_in, self.decoder_widths[0])]
        for j in range(1, len(self.decoder_widths)):
            extra = d_in if j <= 2 else 0
            dims.append((self.decoder_widths[j - 1] + extra, self.decoder_widths[j]))
        dims.append((self.decoder_widths[-1], 1))
        return dims

    def head_plan(self, n: int) -> list[tuple[str, int, int, int, int, int]]:
        """Per-level encoder head: (kind, c_in, c_out, k, stride, pad) layers
        mapping the trunk feature to this level's latent grid."""
        r_n, c_n = self.levels[n]
        tc = self.trunk_channels[-1]
        steps = []
        cur = self.trunk_res
        while cur > r_n:
            steps.append("conv")
            cur //= 2
        while cur < r_n:
            steps.append("tconv")
            cur *= 2
        if not steps:
            return [("conv", tc, c_n, 1, 1, 0)]
        # keep intermediate widths at min(c_n, trunk width); only the final
        # resampler pays for a wide latent, which matters for the 128-wide root
        c_mid = min(c_n, tc)
        layers = [("conv", tc, c_mid, 1, 1, 0)]
        cin = c_mid
        for i, kind in enumerate(steps):
            cout = c_n if i == len(steps) - 1 else c_mid
            layers.append((kind, cin, cout, 2, 2, 0))
            cin = cout
        return layers

    def trunk_plan(self) -> list[tuple[str, int, int, int, int, int]]:
        chans = (1,) + tuple(self.trunk_channels)
        return [
            ("conv", chans[i], chans[i + 1], 3, 2, 1) for i in range(len(self.trunk_channels))
        ]

    def uses_global_connection(self) -> bool:
        return not (self.no_global_connection or self.local_only) and self.num_levels > 1


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ModelParams:
    tensors: dict[str, Array] = field(repr=False)

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: v.astype(dtype) for k, v in self.tensors.items()})

    def bit_equal(self, other: "ModelParams") -> bool:
        return set(self.tensors) == set(other.tensors) and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors
        )


def _uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Array:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, seed: int | None = None, dtype=np.float32) -> ModelParams:
    """Uniform fan-in scaled weights, zero biases."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed if seed is None else seed))
    t: dict[str, Array] = {}

    def add_conv(name: str, kind: str, cin: int, cout: int, k: int):
        if kind == "conv":
            t[f"{name}.kernel"] = _uniform_fan_in(rng, (cout, cin, k, k, k), cin * k**3)
        else:
            t[f"{name}.kernel"] = _uniform_fan_in(rng, (cin, cout, k, k, k), cin * k**3)
        t[f"{name}.bias"] = np.zeros(cout)

    for i, (kind, cin, cout, k, _, _) in enumerate(cfg.trunk_plan()):
        add_conv(f"trunk.{i}", kind, cin, cout, k)
    for n in range(cfg.num_levels):
        for j, (kind, cin, cout, k, _, _) in enumerate(cfg.head_plan(n)):
            add_conv(f"head.{n}.{j}", kind, cin, cout, k)
    if cfg.uses_global_connection():
        c0 = cfg.levels[0][1]
        for n in range(1, cfg.num_levels):
            r_n, c_n = cfg.levels[n]
            for j, (cin, cout) in enumerate(global_chain_shapes(c0, c_n, r_n)):
                add_conv(f"gchain.{n}.{j}", "tconv", cin, cout, 2)
    for n in range(cfg.num_levels):
        for j, (din, dout) in enumerate(cfg.decoder_layer_dims(n)):
            t[f"dec.{n}.{j}.weight"] = _uniform_fan_in(rng, (dout, din), din)
            t[f"dec.{n}.{j}.bias"] = np.zeros(dout)

    return ModelParams({k: v.astype(dtype) for k, v in t.items()})


def _acc(grads: dict[str, Array], name: str, g: Array) -> None:
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g


# ---------------------------------------------------------------------------
# encoder


def encode_fwd(
    grids: Array, params: ModelParams, cfg: ModelConfig
) -> tuple[list[Array], tuple]:
    """[B, 1, R, R, R] truncated-SDF grids -> per-level latents [B, c_n, r_n^3].

    Inputs are scaled by 1/truncation so activations start well-conditioned.
    """
    if grids.ndim != 5 or grids.shape[1] != 1:
        raise DimensionError(f"encoder wants [B,1,R,R,R], got {grids.shape}")
    if grids.shape[2:] != (cfg.input_res,) * 3:
        raise DimensionError(
            f"encoder resolution mismatch: got {grids.shape[2:]}, config wants {cfg.input_res}^3"
        )
    h = grids * (1.0 / SDF_TRUNCATION)
    trunk_caches = []
    for i, (_, _, _, k, s, p) in enumerate(cfg.trunk_plan()):
        h, cc = conv3d_fwd(
            h, params.tensors[f"trunk.{i}.kernel"], params.tensors[f"trunk.{i}.bias"], s, p
        )
        h, ac = leaky_relu_fwd(h, cfg.alpha)
        trunk_caches.append((cc, ac))
    feat = h
    z_levels = []
    head_caches = []
    for n in range(cfg.num_levels):
        plan = cfg.head_plan(n)
        hh = feat
        caches = []
        for j, (kind, _, _, _, s, p) in enumerate(plan):
            op = conv3d_fwd if kind == "conv" else tconv3d_fwd
            hh, cc = op(
                hh,
                params.tensors[f"head.{n}.{j}.kernel"],
                params.tensors[f"head.{n}.{j}.bias"],
                s,
                p,
            )
            ac = None
            if j < len(plan) - 1:
                hh, ac = leaky_relu_fwd(hh, cfg.alpha)
            caches.append((kind, cc, ac))
        head_caches.append(caches)
        z_levels.append(hh)
    return z_levels, (trunk_caches, head_caches, cfg)


def encode_bwd(cache: tuple, g_levels: list[Array]) -> dict[str, Array]:
    trunk_caches, head_caches, cfg = cache
    grads: dict[str, Array] = {}
    gfeat: Array | None = None
    for n in range(cfg.num_levels):
        g = g_levels[n]
        for j in range(len(head_caches[n]) - 1, -1, -1):
            kind, cc, ac = head_caches[n][j]
            if ac is not None:
                g = leaky_relu_bwd(ac, g)
            op = conv3d_bwd if kind == "conv" else tconv3d_bwd
            g, gk, gb = op(cc, g)
            _acc(grads, f"head.{n}.{j}.kernel", gk)
            _acc(grads, f"head.{n}.{j}.bias", gb)
        gfeat = g if gfeat is None else gfeat + g
    g = gfeat
    for i in range(len(trunk_caches) - 1, -1, -1):
        cc, ac = trunk_caches[i]
        g = leaky_relu_bwd(ac, g)
        g, gk, gb = conv3d_bwd(cc, g)
        _acc(grads, f"trunk.{i}.kernel", gk)
        _acc(grads, f"trunk.{i}.bias", gb)
    return grads


# ---------------------------------------------------------------------------
# per-level decoder MLPs


def decoder_layers(params: ModelParams, cfg: ModelConfig, n: int) -> list[tuple[Array, Array]]:
    count = len(cfg.decoder_layer_dims(n))
    return [
        (params.tensors[f"dec.{n}.{j}.weight"], params.tensors[f"dec.{n}.{j}.bias"])
        for j in range(count)
    ]


def mlp_fwd(x: Array, layers: list[tuple[Array, Array]], alpha: float) -> tuple[Array, tuple]:
    """IM-Net style stack: raw input re-concatenated into the inputs of the
    second and third hidden layers; final layer is a linear scalar head."""
    h = x
    caches = []
    last = len(layers) - 1
    for j, (w, b) in enumerate(layers):
        cat = j in (1, 2) and j < last
        if cat:
            h = np.concatenate([h, x], axis=1)
        h, lc = linear_fwd(h, w, b)
        ac = None
        if j < last:
            h, ac = leaky_relu_fwd(h, alpha)
        caches.append((lc, ac, cat))
    return h[:, 0], (caches, x.shape[1])


def mlp_bwd(cache: tuple, gout: Array) -> tuple[Array, list[tuple[Array, Array]]]:
    caches, x_dim = cache
    g = gout[:, None]
    gx_total: Array | None = None
    layer_grads: list[tuple[Array, Array]] = [None] * len(caches)  # type: ignore[list-item]
    for j in range(len(caches) - 1, -1, -1):
        lc, ac, cat = caches[j]
        if ac is not None:
            g = leaky_relu_bwd(ac, g)
        g, gw, gb = linear_bwd(lc, g)
        layer_grads[j] = (gw, gb)
        if cat:
            part = g[:, -x_dim:]
            gx_total = part if gx_total is None else gx_total + part
            g = g[:, :-x_dim]
    gx_total = g if gx_total is None else gx_total + g
    return gx_total, layer_grads


# ---------------------------------------------------------------------------
# point decoding over the hierarchy


def hat_grids_fwd(
    z0: Array, params: ModelParams, cfg: ModelConfig
) -> tuple[list[Array | None], list]:
    """Upsampled global-context grid per level (None at level 0).

    With the global connection disabled the grids are zeros and carry no
    cache (nothing to backpropagate)."""
    hats: list[Array | None] = [None]
    caches: list = [None]
    for n in range(1, cfg.num_levels):
        r_n, c_n = cfg.levels[n]
        if not cfg.uses_global_connection():
            hats.append(np.zeros((c_n, r_n, r_n, r_n), dtype=z0.dtype))
            caches.append(None)
            continue
        chain = [
            (params.tensors[f"gchain.{n}.{j}.kernel"], params.tensors[f"gchain.{n}.{j}.bias"])
            for j in range(len(global_chain_shapes(cfg.levels[0][1], c_n, r_n)))
        ]
        hat, cc = global_connection_fwd(z0, chain, cfg.alpha)
        hats.append(hat)
        caches.append(cc)
    return hats, caches


def hat_grids_bwd(
    caches: list, ghats: list[Array | None], cfg: ModelConfig
) -> tuple[Array | None, dict[str, Array]]:
    """Accumate hat-grid gradients back into z0 and the chain weights."""
    gz0: Array | None = None
    grads: dict[str, Array] = {}
    for n in range(1, cfg.num_levels):
        if caches[n] is None or ghats[n] is None:
            continue
        g0, layer_grads = global_connection_bwd(caches[n], ghats[n])
        gz0 = g0 if gz0 is None else gz0 + g0
        for j, (gk, gb) in enumerate(layer_grads):
            _acc(grads, f"gchain.{n}.{j}.kernel", gk)
            _acc(grads, f"gchain.{n}.{j}.bias", gb)
    return gz0, grads


def forward_shape(
    z_grids: list[Array],
    x: Array,
    params: ModelParams,
    cfg: ModelConfig,
    masks: list[Array | None] | None = None,
    m: int | None = None,
) -> tuple[list[Array], tuple]:
    """Per-level field estimates s_0..s_m at points x for one shape.

    `masks` (from dropout) zero whole latent cells; the global-context
    grids always come from the unmasked z0.
    """
    n_levels = cfg.num_levels
    m = n_levels - 1 if m is None else m
    if not 0 <= m < n_levels:
        raise ArgumentError(f"level {m} out of range")
    used = []
    for n, z in enumerate(z_grids):
        if masks is not None and masks[n] is not None:
            used.append(z * masks[n])
        else:
            used.append(z)
    hats, hat_caches = hat_grids_fwd(used[0], params, cfg) if n_levels > 1 else ([None], [None])

    s_levels: list[Array] = []
    level_caches = []
    prev = None
    for n in range(m + 1):
        codes, ccache = trilinear_sample(used[n], x)
        hcache = None
        if n == 0:
            inp = codes if cfg.local_only else np.concatenate([codes, x], axis=1)
        else:
            hcodes, hcache = trilinear_sample(hats[n], x)
            inp = np.concatenate([codes, hcodes], axis=1)
        y, mcache = mlp_fwd(inp, decoder_layers(params, cfg, n), cfg.alpha)
        if cfg.no_residual or n == 0:
            s = y
        else:
            s = prev + y
        s_levels.append(s)
        prev = s
        level_caches.append((ccache, hcache, mcache))
    cache = (level_caches, hat_caches, masks, m, cfg, [z.shape for z in z_grids], x.shape)
    return s_levels, cache


@dataclass
class ShapeGrads:
    z_grads: list[Array]
    param_grads: dict[str, Array]


def backward_shape(cache: tuple, gs_levels: list[Array]) -> ShapeGrads:
    """Gradients of sum_n <gs_n, s_n> w.r.t. latent grids and decoder/chain
    weights for one shape."""
    level_caches, hat_caches, masks, m, cfg, z_shapes, _ = cache
    c_n = cfg.level_spec.channels

    # in residual mode s_n feeds every later estimate, so each decoder output
    # receives the suffix sum of the per-level gradients
    gy = list(gs_levels)
    if not cfg.no_residual:
        for n in range(m - 1, -1, -1):
            gy[n] = gy[n] + gy[n + 1]

    grads: dict[str, Array] = {}
    gz: list[Array | None] = [None] * len(z_shapes)
    ghats: list[Array | None] = [None] * cfg.num_levels
    for n in range(m, -1, -1):
        ccache, hcache, mcache = level_caches[n]
        ginp, layer_grads = mlp_bwd(mcache, gy[n])
        for j, (gw, gb) in enumerate(layer_grads):
            _acc(grads, f"dec.{n}.{j}.weight", gw)
            _acc(grads, f"dec.{n}.{j}.bias", gb)
        if n == 0:
            gcodes = ginp if cfg.local_only else ginp[:, : c_n[0]]
        else:
            gcodes = ginp[:, : c_n[n]]
            ghcodes = ginp[:, c_n[n] :]
            ghats[n], _ = trilinear_sample_bwd(hcache, ghcodes)
        gz[n], _ = trilinear_sample_bwd(ccache, gcodes)

    if cfg.num_levels > 1:
        gz0_from_hats, chain_grads = hat_grids_bwd(hat_caches, ghats, cfg)
        grads.update(chain_grads)
        if gz0_from_hats is not None:
            gz[0] = gz0_from_hats if gz[0] is None else gz[0] + gz0_from_hats

    out: list[Array] = []
    for n, shape in enumerate(z_shapes):
        g = gz[n]
        if g is None:
            g = np.zeros(shape)
        elif masks is not None and masks[n] is not None:
            # dropped cells contributed nothing forward (z0/hat path is
            # mask-free), so their gradient is zero
            g = g * masks[n]
        out.append(g)
    return ShapeGrads(out, grads)


# ---------------------------------------------------------------------------
# losses


def multilevel_loss(s_levels: list[Array], gt: Array) -> tuple[float, list[float]]:
    """Sum over levels of the mean absolute error against the full truncated
    ground truth (every level is supervised by the same target)."""
    if len(gt) == 0:
        raise ArgumentError("empty point batch")
    per_level = [float(np.mean(np.abs(s - gt))) for s in s_levels]
    return float(sum(per_level)), per_level


def multilevel_loss_grads(s_levels: list[Array], gt: Array) -> list[Array]:
    n = len(gt)
    return [np.sign(s - gt) / n for s in s_levels]


# ---------------------------------------------------------------------------
# prediction helpers


def predict_levels(
    z_grids: list[Array],
    params: ModelParams,
    cfg: ModelConfig,
    x: Array,
    m: int | None = None,
) -> list[Array]:
    """Per-level field estimates without dropout (inference path)."""
    return forward_shape(z_grids, x, params, cfg, masks=None, m=m)[0]


def predict_sdf(
    z_grids: list[Array],
    params: ModelParams,
    cfg: ModelConfig,
    x: Array,
    m: int | None = None,
) -> Array:
    return predict_levels(z_grids, params, cfg, x, m)[-1]


def decode_residual_at(
    z_grids: list[Array], params: ModelParams, cfg: ModelConfig, n: int, x: Array
) -> Array:
    """The level-n decoder output alone (the residual for n >= 1)."""
    if not 0 <= n < cfg.num_levels:
        raise ArgumentError(f"level {n} out of range")
    hats, _ = hat_grids_fwd(z_grids[0], params, cfg) if cfg.num_levels > 1 else ([None], [None])
    codes, _ = trilinear_sample(z_grids[n], x)
    if n == 0:
        inp = codes if cfg.local_only else np.concatenate([codes, x], axis=1)
    else:
        hcodes, _ = trilinear_sample(hats[n], x)
        inp = np.concatenate([codes, hcodes], axis=1)
    return mlp_fwd(inp, decoder_layers(params, cfg, n), cfg.alpha)[0]


def encode_hierarchy(
    grid: ScalarGrid3 | Array, params: ModelParams, cfg: ModelConfig
) -> LatentHierarchy:
    """One-shape convenience wrapper around the batched encoder."""
    values = grid.values if isinstance(grid, ScalarGrid3) else np.asarray(grid)
    dtype = next(iter(params.tensors.values())).dtype
    z_levels, _ = encode_fwd(values[None, None].astype(dtype), params, cfg)
    return LatentHierarchy(cfg.level_spec, [z[0] for z in z_levels])


# ---------------------------------------------------------------------------
# training


@dataclass
class ShapeSample:
    """Training record for one shape: baked input grid plus point pools."""

    grid: ScalarGrid3
    uniform: PointBatch
    near_surface: PointBatch


@dataclass
class TrainResult:
    params: ModelParams
    states: dict[str, AdamState]
    config: ModelConfig
    loss_history: Array
    level_history: Array  # [iterations, num_levels]


def fresh_adam_states(params: ModelParams, cfg: ModelConfig) -> dict[str, AdamState]:
    return {
        k: AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
        for k in params.tensors
    }


def draw_points(sample: ShapeSample, n_per_set: int, rng: np.random.Generator) -> tuple[Array, Array]:
    """n uniform + n near-surface draws (with replacement) from the pools."""
    iu = rng.integers(0, len(sample.uniform), size=n_per_set)
    isf = rng.integers(0, len(sample.near_surface), size=n_per_set)
    x = np.concatenate([sample.uniform.positions[iu], sample.near_surface.positions[isf]])
    gt = np.concatenate([sample.uniform.gt_sdf[iu], sample.near_surface.gt_sdf[isf]])
    return x, gt


def train_step(
    batch: list[ShapeSample],
    params: ModelParams,
    states: dict[str, AdamState],
    cfg: ModelConfig,
    rng: np.random.Generator,
) -> tuple[float, list[float]]:
    """One optimization step over a batch of shapes.

    Per-shape decode gradients accumulate in a fixed order so runs with the
    same seed are bit-identical.
    """
    dtype = next(iter(params.tensors.values())).dtype
    grids = np.stack([s.grid.values[None] for s in batch]).astype(dtype)
    z_levels, enc_cache = encode_fwd(grids, params, cfg)

    grads: dict[str, Array] = {}
    gz_batched = [np.zeros_like(z) for z in z_levels]
    total = 0.0
    per_level_total = np.zeros(cfg.num_levels)
    for b, sample in enumerate(batch):
        x, gt = draw_points(sample, cfg.points_per_set, rng)
        x = x.astype(dtype)
        gt = gt.astype(dtype)
        z_b = [z[b] for z in z_levels]
        masks: list[Array | None] | None = None
        if cfg.dropout_rate > 0:
            masks = [
                dropout_cells(z, cfg.dropout_rate, rng)[1] if z.shape[1] > 1 else None
                for z in z_b
            ]
        s_levels, cache = forward_shape(z_b, x, params, cfg, masks=masks)
        loss, per_level = multilevel_loss(s_levels, gt)
        total += loss
        per_level_total += per_level
        sg = backward_shape(cache, multilevel_loss_grads(s_levels, gt))
        for n, g in enumerate(sg.z_grads):
            gz_batched[n][b] = g
        for k, v in sg.param_grads.items():
            _acc(grads, k, v)

    for k, v in encode_bwd(enc_cache, gz_batched).items():
        _acc(grads, k, v)

    bsz = len(batch)
    total /= bsz
    per_level_total /= bsz
    if not np.isfinite(total):
        raise NumericError(
            f"non-finite training loss {total} (per level: {per_level_total.tolist()})"
        )
    for name in sorted(grads):
        adam_step(params.tensors[name], (grads[name] / bsz).astype(dtype), states[name])
    return total, per_level_total.tolist()


def train(
    dataset: list[ShapeSample],
    cfg: ModelConfig,
    params: ModelParams | None = None,
    states: dict[str, AdamState] | None = None,
    start_iteration: int = 0,
    log_every: int = 0,
) -> TrainResult:
    """Full training loop; resumable via (params, states, start_iteration)."""
    if len(dataset) == 0:
        raise ArgumentError("training needs at least one shape")
    if params is None:
        params = init_params(cfg)
    if states is None:
        states = fresh_adam_states(params, cfg)
    # the stream is keyed by (seed, start iteration): fresh runs are
    # reproducible and resumed runs continue without replaying history
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, start_iteration))))
    losses = []
    levels = []
    for it in range(start_iteration, cfg.iterations):
        pick = rng.integers(0, len(dataset), size=cfg.batch_size)
        batch = [dataset[i] for i in pick]
        loss, per_level = train_step(batch, params, states, cfg, rng)
        losses.append(loss)
        levels.append(per_level)
        if log_every and (it + 1) % log_every == 0:
            print(f"iter {it + 1:6d}  loss {loss:.5f}")
    return TrainResult(
        params, states, cfg, np.asarray(losses), np.asarray(levels).reshape(len(losses), -1)
    )

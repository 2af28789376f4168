"""Decoder-only latent optimization.

Fits a latent hierarchy to observations of a single shape while every
network weight stays frozen: auto-decoding against a fully observed point
set, and completion from one depth image where occluded-region residuals
are suppressed by a distance-weighted consistency term.
"""

from dataclasses import dataclass

import numpy as np

from .constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    COMPLETION_OCCLUDED_PER_STEP,
    COMPLETION_VISIBLE_PER_STEP,
    CONSISTENCY_SIGMA,
    CONSISTENCY_WEIGHT,
    FIT_LR,
    FIT_POINTS_PER_STEP,
    FIT_STEPS,
)
from .errors import ArgumentError, DimensionError, NumericError
from .fields import (
    DepthObservation,
    PointBatch,
    Shape,
    SpatialHash,
    completion_point_sets,
)
from .hierarchy import LatentHierarchy
from .kernels import AdamState, adam_step
from .model import (
    ModelConfig,
    ModelParams,
    backward_shape,
    forward_shape,
    multilevel_loss,
    multilevel_loss_grads,
)

Array = np.ndarray


@dataclass(frozen=True)
class LatentOptConfig:
    """Hyperparameters of a latent fit; the defaults are the published ones."""

    steps: int = FIT_STEPS
    lr: float = FIT_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    points_per_step: int = FIT_POINTS_PER_STEP
    visible_per_step: int = COMPLETION_VISIBLE_PER_STEP
    occluded_per_step: int = COMPLETION_OCCLUDED_PER_STEP
    consistency_weight: float = CONSISTENCY_WEIGHT
    consistency_sigma: float = CONSISTENCY_SIGMA
    visible_pool: int = 8192
    occluded_pool: int = 4096
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ArgumentError(f"steps must be >= 0, got {self.steps}")
        if self.consistency_weight < 0:
            raise ArgumentError("consistency weight must be >= 0")
        if self.consistency_sigma <= 0:
            raise ArgumentError("consistency sigma must be > 0")
        for name in ("points_per_step", "visible_per_step", "occluded_per_step",
                     "visible_pool", "occluded_pool"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")


def occlusion_weight(d, sigma: float = CONSISTENCY_SIGMA):
    """Residual-penalty weight 1 - exp(-d^2 / (2 sigma^2)) for a point at
    distance d from the nearest visible point: zero at the visibility
    frontier, saturating to one deep inside the occluded region."""
    if sigma <= 0:
        raise ArgumentError(f"sigma must be > 0, got {sigma}")
    d = np.asarray(d)
    if np.any(d < 0):
        raise ArgumentError("occlusion_weight expects non-negative distances")
    return 1.0 - np.exp(-(d * d) / (2.0 * sigma * sigma))


@dataclass
class OcclusionSet:
    """Occluded query points with their cached consistency weights."""

    positions: Array  # [M, 3]
    weight: Array  # [M]

    def __post_init__(self):
        p = np.asarray(self.positions)
        w = np.asarray(self.weight)
        if p.ndim != 2 or p.shape[1] != 3 or w.shape != (p.shape[0],):
            raise DimensionError(
                f"occlusion set wants positions [M,3] and weight [M], got {p.shape} / {w.shape}"
            )
        self.positions = p
        self.weight = w

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass
class CompletionLoss:
    total: float
    level_terms: Array  # [num_levels] visible + weighted occluded per level
    visible_terms: Array  # [num_levels]
    occluded_terms: Array  # [num_levels], already scaled by the weight sum


@dataclass
class FitResult:
    hierarchy: LatentHierarchy
    loss_history: Array  # [steps]
    visible_history: Array | None = None  # completion: visible-only part


def _check_residual_mode(cfg: ModelConfig, lam: float) -> None:
    if cfg.no_residual and lam > 0:
        raise ArgumentError(
            "consistency weighting needs per-level residuals; decoders that "
            "regress the full field directly have none (set the weight to 0)"
        )


def _completion_eval(
    z_grids: list[Array],
    visible: PointBatch,
    occluded: OcclusionSet | None,
    params: ModelParams,
    cfg: ModelConfig,
    lam: float,
    with_grads: bool,
) -> tuple[CompletionLoss, list[Array] | None]:
    if len(visible) == 0:
        raise ArgumentError("completion loss needs at least one visible point")
    _check_residual_mode(cfg, lam)
    num = cfg.num_levels
    gt = visible.gt_sdf

    sv, cache_v = forward_shape(z_grids, visible.positions, params, cfg)
    visible_terms = np.array([float(np.mean(np.abs(s - gt))) for s in sv])

    occluded_terms = np.zeros(num)
    use_occ = (
        lam > 0 and occluded is not None and len(occluded) > 0 and num > 1
    )
    so = cache_o = None
    if use_occ:
        so, cache_o = forward_shape(z_grids, occluded.positions, params, cfg)
        for n in range(1, num):
            res = so[n] - so[n - 1]
            occluded_terms[n] = float(np.mean(occluded.weight * np.abs(res)))

    level_terms = visible_terms + lam * occluded_terms
    total = float(sum(float(t) for t in level_terms))
    loss = CompletionLoss(total, level_terms, visible_terms, occluded_terms)
    if not with_grads:
        return loss, None

    nv = len(visible)
    gy_v = [np.sign(s - gt) / nv for s in sv]
    sg = backward_shape(cache_v, gy_v)
    gz = list(sg.z_grads)
    if use_occ:
        m = len(occluded)
        gy_o = [np.zeros(m) for _ in range(num)]
        for n in range(1, num):
            c = lam * occluded.weight * np.sign(so[n] - so[n - 1]) / m
            gy_o[n] = gy_o[n] + c
            gy_o[n - 1] = gy_o[n - 1] - c
        sg_o = backward_shape(cache_o, gy_o)
        gz = [a + b for a, b in zip(gz, sg_o.z_grads)]
    return loss, gz


def completion_loss(
    z_grids: list[Array],
    visible: PointBatch,
    occluded: OcclusionSet | None,
    params: ModelParams,
    cfg: ModelConfig,
    lam: float = CONSISTENCY_WEIGHT,
) -> CompletionLoss:
    """Visible-data loss at every level plus, for refinement levels, the
    weighted mean |residual| over occluded points.  Level 0 sees visible
    points only."""
    loss, _ = _completion_eval(z_grids, visible, occluded, params, cfg, lam, False)
    return loss


def completion_loss_grads(
    z_grids: list[Array],
    visible: PointBatch,
    occluded: OcclusionSet | None,
    params: ModelParams,
    cfg: ModelConfig,
    lam: float = CONSISTENCY_WEIGHT,
) -> tuple[CompletionLoss, list[Array]]:
    """Completion loss together with its gradient w.r.t. each latent grid."""
    loss, gz = _completion_eval(z_grids, visible, occluded, params, cfg, lam, True)
    return loss, gz


def _zero_grids(cfg: ModelConfig, dtype) -> list[Array]:
    return [np.zeros((c, r, r, r), dtype=dtype) for r, c in cfg.levels]


def _grid_states(z_grids: list[Array], opt: LatentOptConfig) -> list[AdamState]:
    return [
        AdamState(lr=opt.lr, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)
        for _ in z_grids
    ]


def _fit_dtype(params: ModelParams):
    return next(iter(params.tensors.values())).dtype


def autodecode_fit(
    params: ModelParams,
    cfg: ModelConfig,
    points: PointBatch,
    opt: LatentOptConfig | None = None,
) -> FitResult:
    """Fit a zero-initialized hierarchy to a fully observed point set.

    Weights are never touched; every step draws points with replacement,
    evaluates the multi-level data loss and follows its gradient through
    the grid sampler (and the global-context chains) into the latents.
    """
    opt = LatentOptConfig() if opt is None else opt
    if len(points) == 0:
        raise ArgumentError("autodecode_fit needs a non-empty point set")
    z = _zero_grids(cfg, _fit_dtype(params))
    states = _grid_states(z, opt)
    rng = np.random.Generator(np.random.PCG64(opt.seed))
    history = np.zeros(opt.steps)
    for step in range(opt.steps):
        idx = rng.integers(0, len(points), size=opt.points_per_step)
        x = points.positions[idx]
        gt = points.gt_sdf[idx]
        sv, cache = forward_shape(z, x, params, cfg)
        loss, _ = multilevel_loss(sv, gt)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite fit loss at step {step}")
        sg = backward_shape(cache, multilevel_loss_grads(sv, gt))
        for g, grad, st in zip(z, sg.z_grads, states):
            adam_step(g, grad.astype(g.dtype, copy=False), st)
        history[step] = loss
        if opt.log_every and (step % opt.log_every == 0 or step == opt.steps - 1):
            print(f"fit step {step:5d}  loss {loss:.6f}")
    return FitResult(LatentHierarchy(cfg.level_spec, z), history)


def complete_from_depth(
    params: ModelParams,
    cfg: ModelConfig,
    obs: DepthObservation,
    shape: Shape,
    opt: LatentOptConfig | None = None,
) -> FitResult:
    """Recover a full hierarchy from a single depth image.

    Visible points carry ground truth from the observed surface; occluded
    points only constrain refinement residuals, weighted by distance to the
    nearest visible point (weights cached once against the full pool).
    """
    opt = LatentOptConfig() if opt is None else opt
    _check_residual_mode(cfg, opt.consistency_weight)
    rng = np.random.Generator(np.random.PCG64(opt.seed))
    visible, occluded = completion_point_sets(
        obs, shape, opt.visible_pool, opt.occluded_pool, rng
    )
    occ_set = None
    if len(occluded) > 0 and opt.consistency_weight > 0 and cfg.num_levels > 1:
        dists = SpatialHash(visible.positions).query_many(occluded.positions)
        occ_set = OcclusionSet(occluded.positions, occlusion_weight(dists, opt.consistency_sigma))

    z = _zero_grids(cfg, _fit_dtype(params))
    states = _grid_states(z, opt)
    history = np.zeros(opt.steps)
    vis_history = np.zeros(opt.steps)
    for step in range(opt.steps):
        iv = rng.integers(0, len(visible), size=opt.visible_per_step)
        batch_v = PointBatch(visible.positions[iv], visible.gt_sdf[iv], "visible")
        batch_o = None
        if occ_set is not None:
            io = rng.integers(0, len(occ_set), size=opt.occluded_per_step)
            batch_o = OcclusionSet(occ_set.positions[io], occ_set.weight[io])
        loss, gz = _completion_eval(
            z, batch_v, batch_o, params, cfg, opt.consistency_weight, True
        )
        if not np.isfinite(loss.total):
            raise NumericError(f"non-finite completion loss at step {step}")
        for g, grad, st in zip(z, gz, states):
            adam_step(g, grad.astype(g.dtype, copy=False), st)
        history[step] = loss.total
        vis_history[step] = float(sum(float(t) for t in loss.visible_terms))
        if opt.log_every and (step % opt.log_every == 0 or step == opt.steps - 1):
            print(
                f"completion step {step:5d}  loss {loss.total:.6f}"
                f"  visible {vis_history[step]:.6f}"
            )
    return FitResult(LatentHierarchy(cfg.level_spec, z), history, vis_history)

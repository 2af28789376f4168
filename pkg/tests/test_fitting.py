import numpy as np
import pytest

from mrsdf.constants import (
    CONSISTENCY_SIGMA,
    CONSISTENCY_WEIGHT,
    FIT_LR,
    FIT_STEPS,
)
from mrsdf.errors import ArgumentError, NumericError
from mrsdf.fields import (
    PointBatch,
    Sphere,
    look_at_camera,
    render_depth,
    sample_near_surface,
    sample_uniform,
)
from mrsdf.fitting import (
    CompletionLoss,
    FitResult,
    LatentOptConfig,
    OcclusionSet,
    autodecode_fit,
    complete_from_depth,
    completion_loss,
    completion_loss_grads,
    occlusion_weight,
)
from mrsdf.kernels import grad_check
from mrsdf.model import (
    ModelConfig,
    ModelParams,
    init_params,
    multilevel_loss,
    predict_levels,
)

MINI = ModelConfig(
    levels=((1, 4), (2, 2)),
    input_res=4,
    decoder_widths=(8, 8),
    trunk_channels=(4,),
    dropout_rate=0.0,
)


@pytest.fixture(scope="module")
def mini_params() -> ModelParams:
    return init_params(MINI, seed=3, dtype=np.float64)


def merged_sphere_points(n: int = 1500, seed: int = 11) -> PointBatch:
    shape = Sphere(0.3)
    uni = sample_uniform(shape, n, seed)
    near = sample_near_surface(shape, n, seed=seed + 1)
    return PointBatch(
        np.concatenate([uni.positions, near.positions]),
        np.concatenate([uni.gt_sdf, near.gt_sdf]),
        "uniform",
    )


def random_latents(cfg: ModelConfig, seed: int, scale: float = 1.0):
    rng = np.random.default_rng(seed)
    return [scale * rng.standard_normal((c, r, r, r)) for r, c in cfg.levels]


class TestOcclusionWeight:
    def test_zero_distance(self):
        assert occlusion_weight(0.0) == 0.0

    def test_saturates(self):
        assert occlusion_weight(100.0, 0.1) == pytest.approx(1.0, abs=1e-15)

    def test_one_sigma(self):
        # closed form 1 - exp(-1/2)
        assert occlusion_weight(0.1, 0.1) == pytest.approx(0.3934693402873666, abs=1e-12)

    def test_monotone(self):
        d = np.linspace(0.0, 1.0, 200)
        w = occlusion_weight(d, 0.1)
        assert np.all(np.diff(w) >= 0)
        assert w[0] == 0.0 and w[-1] <= 1.0

    def test_array_shape(self):
        assert occlusion_weight(np.zeros((5,)), 0.2).shape == (5,)

    def test_bad_sigma(self):
        with pytest.raises(ArgumentError):
            occlusion_weight(0.1, 0.0)
        with pytest.raises(ArgumentError):
            occlusion_weight(0.1, -1.0)

    def test_negative_distance(self):
        with pytest.raises(ArgumentError):
            occlusion_weight(-0.1)


class TestLatentOptConfig:
    def test_defaults(self):
        opt = LatentOptConfig()
        assert opt.steps == FIT_STEPS
        assert opt.lr == FIT_LR
        assert opt.consistency_weight == CONSISTENCY_WEIGHT
        assert opt.consistency_sigma == CONSISTENCY_SIGMA

    @pytest.mark.parametrize(
        "kw",
        [
            {"steps": -1},
            {"consistency_weight": -0.5},
            {"consistency_sigma": 0.0},
            {"points_per_step": 0},
            {"occluded_pool": 0},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ArgumentError):
            LatentOptConfig(**kw)


class TestAutodecode:
    def test_zero_steps_returns_zero_hierarchy(self, mini_params):
        pts = merged_sphere_points(200)
        res = autodecode_fit(mini_params, MINI, pts, LatentOptConfig(steps=0, seed=1))
        assert all(np.all(g == 0) for g in res.hierarchy.grids)
        assert res.loss_history.shape == (0,)

    def test_params_frozen(self, mini_params):
        before = mini_params.copy()
        pts = merged_sphere_points(400)
        autodecode_fit(
            mini_params, MINI, pts, LatentOptConfig(steps=5, points_per_step=64, seed=2)
        )
        assert mini_params.bit_equal(before)

    def test_loss_decreases(self, mini_params):
        pts = merged_sphere_points(1200)
        opt = LatentOptConfig(steps=80, points_per_step=256, seed=3)
        res = autodecode_fit(mini_params, MINI, pts, opt)
        assert res.loss_history[-1] < res.loss_history[0]

    def test_deterministic(self, mini_params):
        pts = merged_sphere_points(300)
        opt = LatentOptConfig(steps=6, points_per_step=64, seed=9)
        a = autodecode_fit(mini_params, MINI, pts, opt)
        b = autodecode_fit(mini_params, MINI, pts, opt)
        assert all(np.array_equal(x, y) for x, y in zip(a.hierarchy.grids, b.hierarchy.grids))
        assert np.array_equal(a.loss_history, b.loss_history)

    def test_empty_points(self, mini_params):
        with pytest.raises(ArgumentError):
            autodecode_fit(
                mini_params, MINI, PointBatch(np.zeros((0, 3)), np.zeros(0), "uniform")
            )

    def test_nan_raises(self, mini_params):
        broken = mini_params.copy()
        broken.tensors["dec.0.0.weight"] = np.full_like(
            broken.tensors["dec.0.0.weight"], np.nan
        )
        pts = merged_sphere_points(100)
        with pytest.raises(NumericError):
            autodecode_fit(broken, MINI, pts, LatentOptConfig(steps=1, points_per_step=16))


def visible_batch(seed: int, n: int = 32) -> PointBatch:
    rng = np.random.default_rng(seed)
    return PointBatch(
        rng.uniform(-0.5, 0.5, (n, 3)),
        rng.uniform(-0.04, 0.04, n),
        "visible",
    )


class TestCompletionLoss:
    def test_no_occluded_matches_data_loss(self, mini_params):
        z = random_latents(MINI, 21)
        vis = visible_batch(22)
        expect, _ = multilevel_loss(
            [s for s in _predict_all(z, mini_params, vis.positions)], vis.gt_sdf
        )
        got = completion_loss(z, vis, None, mini_params, MINI, lam=10.0)
        assert got.total == expect
        empty = OcclusionSet(np.zeros((0, 3)), np.zeros(0))
        assert completion_loss(z, vis, empty, mini_params, MINI, lam=10.0).total == expect

    def test_lambda_zero_matches_data_loss(self, mini_params):
        z = random_latents(MINI, 23)
        vis = visible_batch(24)
        occ = OcclusionSet(np.random.default_rng(25).uniform(-0.5, 0.5, (16, 3)), np.ones(16))
        expect, _ = multilevel_loss(
            [s for s in _predict_all(z, mini_params, vis.positions)], vis.gt_sdf
        )
        assert completion_loss(z, vis, occ, mini_params, MINI, lam=0.0).total == expect

    def test_zero_latents_zero_residuals(self, mini_params):
        # zero codes and zero biases make every decoder emit exactly zero
        z = [np.zeros((c, r, r, r)) for r, c in MINI.levels]
        vis = visible_batch(26)
        occ = OcclusionSet(np.random.default_rng(27).uniform(-0.5, 0.5, (8, 3)), np.ones(8))
        got = completion_loss(z, vis, occ, mini_params, MINI)
        assert np.all(got.occluded_terms == 0.0)

    def test_single_point_hand_value(self, mini_params):
        z = random_latents(MINI, 28)
        vis = visible_batch(29)
        x = np.array([[0.2, -0.1, 0.3]])
        s = predict_levels(z, mini_params, MINI, x)
        r1 = abs(float(s[1][0] - s[0][0]))
        w = occlusion_weight(0.1, 0.1)  # 1 - exp(-1/2)
        occ = OcclusionSet(x, np.array([w]))
        got = completion_loss(z, vis, occ, mini_params, MINI, lam=10.0)
        assert got.occluded_terms[1] == pytest.approx(w * r1, rel=1e-12)
        assert got.level_terms[1] == pytest.approx(
            got.visible_terms[1] + 10.0 * w * r1, rel=1e-12
        )
        # the published operating point: |R|=0.1 at one sigma costs ~0.3935
        assert 10.0 * occlusion_weight(0.1, 0.1) * 0.1 == pytest.approx(0.3935, abs=5e-5)

    def test_empty_visible(self, mini_params):
        z = random_latents(MINI, 30)
        with pytest.raises(ArgumentError):
            completion_loss(
                z, PointBatch(np.zeros((0, 3)), np.zeros(0), "visible"),
                None, mini_params, MINI,
            )

    def test_no_residual_rejected(self, mini_params):
        cfg = ModelConfig(
            levels=MINI.levels, input_res=4, decoder_widths=(8, 8),
            trunk_channels=(4,), no_residual=True,
        )
        p = init_params(cfg, seed=1, dtype=np.float64)
        z = random_latents(cfg, 31)
        vis = visible_batch(32)
        occ = OcclusionSet(np.zeros((2, 3)), np.ones(2))
        with pytest.raises(ArgumentError):
            completion_loss(z, vis, occ, p, cfg, lam=10.0)
        # with the consistency term disabled the direct regressor is fine
        completion_loss(z, vis, occ, p, cfg, lam=0.0)

    def test_gradients(self, mini_params):
        z = random_latents(MINI, 33)
        vis = visible_batch(34, n=12)
        rng = np.random.default_rng(35)
        xo = rng.uniform(-0.5, 0.5, (9, 3))
        s = predict_levels(z, mini_params, MINI, xo)
        keep = np.abs(s[1] - s[0]) > 0.05  # stay away from the |R| kink
        occ = OcclusionSet(xo[keep], rng.uniform(0.3, 1.0, int(keep.sum())))
        base = predict_levels(z, mini_params, MINI, vis.positions)
        gt = np.minimum.reduce(base) - rng.uniform(0.1, 0.3, len(vis))
        vis = PointBatch(vis.positions, gt, "visible")

        def f(*zz):
            loss, gz = completion_loss_grads(list(zz), vis, occ, mini_params, MINI, lam=10.0)
            return loss.total, tuple(gz)

        assert grad_check(f, z) < 1e-4


def _predict_all(z, params, x):
    return predict_levels(z, params, MINI, x)


@pytest.fixture(scope="module")
def depth_setup():
    shape = Sphere(0.3)
    rot, trans = look_at_camera(np.array([0.9, 0.25, 0.55]))
    obs = render_depth(shape, rot, trans, 48, 48)
    return shape, obs


SMALL_OPT = dict(
    steps=30, visible_per_step=192, occluded_per_step=96,
    visible_pool=1500, occluded_pool=700,
)


class TestCompleteFromDepth:
    def test_histories_and_frozen_params(self, mini_params, depth_setup):
        shape, obs = depth_setup
        before = mini_params.copy()
        res = complete_from_depth(
            mini_params, MINI, obs, shape, LatentOptConfig(seed=4, **SMALL_OPT)
        )
        assert isinstance(res, FitResult)
        assert res.loss_history.shape == (30,)
        assert res.visible_history is not None
        assert res.visible_history[-1] < res.visible_history[0]
        assert mini_params.bit_equal(before)

    def test_deterministic(self, mini_params, depth_setup):
        shape, obs = depth_setup
        opt = LatentOptConfig(seed=5, **{**SMALL_OPT, "steps": 8})
        a = complete_from_depth(mini_params, MINI, obs, shape, opt)
        b = complete_from_depth(mini_params, MINI, obs, shape, opt)
        assert all(np.array_equal(x, y) for x, y in zip(a.hierarchy.grids, b.hierarchy.grids))

    def test_consistency_suppresses_residuals(self, mini_params, depth_setup):
        # same seed with and without the occluded term: the weighted mean
        # refinement magnitude over the box must come out lower with it on
        shape, obs = depth_setup
        from mrsdf.fields import completion_point_sets
        from mrsdf.fitting import SpatialHash

        on = complete_from_depth(
            mini_params, MINI, obs, shape, LatentOptConfig(seed=6, **SMALL_OPT)
        )
        off = complete_from_depth(
            mini_params, MINI, obs, shape,
            LatentOptConfig(seed=6, consistency_weight=0.0, **SMALL_OPT),
        )
        vis, occ = completion_point_sets(obs, shape, 1500, 700, 123)
        w = occlusion_weight(
            SpatialHash(vis.positions).query_many(occ.positions), CONSISTENCY_SIGMA
        )

        def weighted_residual(grids):
            s = predict_levels(grids, mini_params, MINI, occ.positions)
            return float(np.mean(w * np.abs(s[1] - s[0])))

        assert weighted_residual(on.hierarchy.grids) < weighted_residual(off.hierarchy.grids)

    def test_no_residual_rejected(self, depth_setup):
        shape, obs = depth_setup
        cfg = ModelConfig(
            levels=MINI.levels, input_res=4, decoder_widths=(8, 8),
            trunk_channels=(4,), no_residual=True,
        )
        p = init_params(cfg, seed=1)
        with pytest.raises(ArgumentError):
            complete_from_depth(p, cfg, obs, shape, LatentOptConfig(seed=1, **SMALL_OPT))

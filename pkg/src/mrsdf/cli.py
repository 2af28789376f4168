"""Operator front door: one-process subcommands over the library modules.

    python -m mrsdf gen-data     procedural shapes -> grids + point pools
    python -m mrsdf train        dataset -> checkpoint + loss log
    python -m mrsdf reconstruct  checkpoint + shape -> per-level mesh + report
    python -m mrsdf complete     checkpoint + depth view -> mesh + reports
    python -m mrsdf mesh         grid or fitted latents -> mesh file
    python -m mrsdf eval         mesh/grid pair -> evaluation report

Every command is deterministic for a fixed seed (the kernels are
single-threaded numpy; `--deterministic` is accepted for interface
stability but changes nothing).  Failures exit nonzero after printing a
single `error-class: message` line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .constants import (
    CONSISTENCY_SIGMA,
    CONSISTENCY_WEIGHT,
    DESK_INPUT_RES,
    EVAL_SAMPLES,
    F_SCORE_TAU,
    FIT_LR,
    FIT_STEPS,
)
from .containers import (
    Checkpoint,
    build_id,
    config_digest,
    config_from_dict,
    file_digest,
    load_checkpoint,
    load_grid,
    load_point_batch,
    load_shape,
    save_checkpoint,
    save_grid,
    save_point_batch,
    save_shape,
)
from .errors import ArgumentError, DegenerateShapeError, FormatError, MrsdfError
from .fields import (
    PointBatch,
    ScalarGrid3,
    bake_grid,
    classify_occluded,
    look_at_camera,
    random_shape,
    render_depth,
    sample_near_surface,
    sample_uniform,
)
from .fitting import LatentOptConfig, autodecode_fit, complete_from_depth
from .hierarchy import deserialize, serialize
from .mesher import MESH_GRID_RES, eval_field_grid, export_mesh, import_mesh, marching_cubes
from .metrics import EvalReport, asym_chamfer, chamfer_l2, evaluate_point_sets, f_score, sample_surface
from .model import ModelConfig, ShapeSample, encode_hierarchy, train

Array = np.ndarray


# ---------------------------------------------------------------------------
# argument helpers


def parse_levels(text: str) -> tuple[tuple[int, int], ...]:
    """Level spec syntax: 'RxC,RxC,...', e.g. '1x128,2x32,4x16,8x8'."""
    try:
        levels = tuple(
            tuple(int(v) for v in part.strip().split("x")) for part in text.split(",")
        )
    except ValueError as e:
        raise FormatError(f"bad level spec {text!r}: {e}") from e
    if any(len(lv) != 2 for lv in levels):
        raise FormatError(f"bad level spec {text!r}: each level is RESxCHANNELS")
    return levels


def parse_vec3(text: str) -> tuple[float, float, float]:
    try:
        v = tuple(float(p) for p in text.split(","))
    except ValueError as e:
        raise FormatError(f"bad vector {text!r}: {e}") from e
    if len(v) != 3:
        raise FormatError(f"bad vector {text!r}: want x,y,z")
    return v


def mesh_format(path: Path) -> str:
    fmt = path.suffix.lstrip(".").lower()
    if fmt not in ("obj", "ply"):
        raise FormatError(f"mesh path {path} must end in .obj or .ply")
    return fmt


def write_manifest(path: Path, command: str, cfg_hash: str, seed: int, files: list[Path]) -> None:
    """Plain-text run record: build id, config hash, seed, artifact hashes.
    No timestamps, so identical runs produce identical manifests."""
    lines = [
        "manifest-version 1",
        f"build {build_id()}",
        f"command {command}",
        f"config-hash {cfg_hash}",
        f"seed {seed}",
    ]
    for f in sorted(files):
        lines.append(f"artifact {file_digest(f)} {f.name}")
    path.write_text("\n".join(lines) + "\n")


def dict_digest(d: dict) -> str:
    import hashlib

    return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# ---------------------------------------------------------------------------
# model config resolution (config file < flags < ablation rewrites)

_ABLATIONS = ("no_residual", "no_dropout", "no_global_connection", "global_only", "local_only")


def check_ablation_combo(args: argparse.Namespace) -> None:
    """Only single-knob ablations of the full model are defined; the two
    baselines rewrite the level stack and admit no further ablation."""
    if args.global_only and args.local_only:
        raise ArgumentError("global_only and local_only are mutually exclusive")
    if args.global_only or args.local_only:
        clash = [f for f in ("no_residual", "no_dropout", "no_global_connection") if getattr(args, f)]
        if clash:
            base = "global_only" if args.global_only else "local_only"
            raise ArgumentError(f"{base} cannot be combined with {', '.join(clash)}")


def resolve_model_config(args: argparse.Namespace) -> ModelConfig:
    check_ablation_combo(args)
    d: dict = {}
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as e:
            raise FormatError(f"config file is not valid JSON: {e}") from e
    for key in ("iterations", "batch_size", "points_per_set", "lr", "input_res", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    if args.levels is not None:
        d["levels"] = parse_levels(args.levels)
    if args.no_residual:
        d["no_residual"] = True
    if args.no_dropout:
        d["dropout_rate"] = 0.0
    if args.no_global_connection:
        d["no_global_connection"] = True
    if args.global_only or args.local_only:
        levels = d.get("levels", ModelConfig().levels)
        levels = [tuple(lv) for lv in levels]
        d["levels"] = (levels[0],) if args.global_only else (levels[-1],)
        if args.local_only:
            d["local_only"] = True
    return config_from_dict(d)


# ---------------------------------------------------------------------------
# gen-data


def load_dataset(data_dir: Path, input_res: int) -> list[ShapeSample]:
    """Load every shape_* record; roles and band constraints are re-checked."""
    grids = sorted(data_dir.glob("shape_*.grid"))
    if not grids:
        raise ArgumentError(f"no shape_*.grid files under {data_dir}")
    samples = []
    for gpath in grids:
        stem = gpath.name[: -len(".grid")]
        grid = load_grid(gpath)
        if grid.res != input_res:
            raise ArgumentError(
                f"{gpath.name} has resolution {grid.res}, the model wants {input_res}"
            )
        uniform = load_point_batch(data_dir / f"{stem}.uniform.pts")
        near = load_point_batch(data_dir / f"{stem}.near.pts")
        if uniform.role != "uniform" or near.role != "near_surface":
            raise FormatError(f"{stem}: point batches carry the wrong roles")
        uniform.validate()
        near.validate()
        samples.append(ShapeSample(grid, uniform, near))
    return samples


def cmd_gen_data(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = dict_digest(
        {
            "num_shapes": args.num_shapes,
            "seed": args.seed,
            "input_res": args.input_res,
            "pool_size": args.pool_size,
            "max_primitives": args.max_primitives,
        }
    )
    files: list[Path] = []
    for i in range(args.num_shapes):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((args.seed, i))))
        shape = random_shape(rng, args.max_primitives)
        stem = f"shape_{i:03d}"
        save_shape(out / f"{stem}.shape.json", shape)
        save_grid(out / f"{stem}.grid", bake_grid(shape, args.input_res))
        save_point_batch(out / f"{stem}.uniform.pts", sample_uniform(shape, args.pool_size, rng))
        save_point_batch(
            out / f"{stem}.near.pts", sample_near_surface(shape, args.pool_size, seed=rng)
        )
        files += [
            out / f"{stem}.shape.json",
            out / f"{stem}.grid",
            out / f"{stem}.uniform.pts",
            out / f"{stem}.near.pts",
        ]
    write_manifest(out / "manifest.txt", "gen-data", cfg_hash, args.seed, files)
    print(f"wrote {args.num_shapes} shapes ({len(files)} artifacts) to {out}")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args: argparse.Namespace) -> int:
    if args.resume:
        fixed = [
            k
            for k in ("config", "levels", "lr", "batch_size", "points_per_set", "input_res", "seed")
            if getattr(args, k) is not None
        ] + [k for k in _ABLATIONS if getattr(args, k)]
        if fixed:
            raise ArgumentError(
                f"--resume takes its configuration from the checkpoint; drop {', '.join(fixed)}"
            )
        ckpt = load_checkpoint(args.resume)
        cfg = ckpt.config
        if args.iterations is not None:
            cfg = dataclasses.replace(cfg, iterations=args.iterations)
        params, states, start = ckpt.params, ckpt.states, ckpt.iteration
        old_loss, old_levels = ckpt.loss_history, ckpt.level_history
    else:
        cfg = resolve_model_config(args)
        params = states = None
        start = 0
        old_loss = np.zeros(0)
        old_levels = np.zeros((0, cfg.num_levels))

    dataset = load_dataset(Path(args.data), cfg.input_res)
    res = train(dataset, cfg, params, states, start_iteration=start, log_every=args.log_every)
    loss_hist = np.concatenate([old_loss, res.loss_history])
    level_hist = np.concatenate([old_levels.reshape(-1, cfg.num_levels), res.level_history])

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        out, Checkpoint(cfg, res.params, res.states, cfg.iterations, loss_hist, level_hist)
    )
    log = out.with_suffix(out.suffix + ".loss.txt")
    log.write_text(
        "".join(
            f"{i} {total:.6f} " + " ".join(f"{v:.6f}" for v in lv) + "\n"
            for i, (total, lv) in enumerate(zip(loss_hist, level_hist))
        )
    )
    write_manifest(
        out.with_suffix(out.suffix + ".manifest.txt"),
        "train",
        config_digest(cfg),
        cfg.seed,
        [out, log],
    )
    final = float(loss_hist[-1]) if len(loss_hist) else float("nan")
    print(f"trained to iteration {cfg.iterations} (final loss {final:.5f}) -> {out}")
    return 0


# ---------------------------------------------------------------------------
# reconstruct


def surface_points(grid: ScalarGrid3, n: int, seed: int) -> tuple[Array, "object"]:
    """Mesh a field grid and sample its surface; degenerate fields fail loudly."""
    mesh = marching_cubes(grid)
    if mesh.num_triangles == 0:
        raise DegenerateShapeError("field has no zero crossing; nothing to evaluate")
    return sample_surface(mesh, n, seed=seed), mesh


def cmd_reconstruct(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg, params = ckpt.config, ckpt.params
    shape = load_shape(args.shape)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []

    if args.mode == "encode":
        hier = encode_hierarchy(bake_grid(shape, cfg.input_res), params, cfg)
    else:
        half = args.fit_pool // 2
        rng = np.random.Generator(np.random.PCG64(args.seed))
        uni = sample_uniform(shape, half, rng)
        near = sample_near_surface(shape, args.fit_pool - half, seed=rng)
        # one mixed pool; the optimizer draws from it uniformly, which keeps
        # the same near-surface emphasis as training
        pool = PointBatch(
            np.concatenate([uni.positions, near.positions]),
            np.concatenate([uni.gt_sdf, near.gt_sdf]),
            "uniform",
        )
        opt = LatentOptConfig(steps=args.fit_steps, lr=args.fit_lr, seed=args.seed)
        fit = autodecode_fit(params, cfg, pool, opt)
        hier = fit.hierarchy
        log = out / f"{args.prefix}.fit_loss.txt"
        log.write_text("".join(f"{i} {v:.6f}\n" for i, v in enumerate(fit.loss_history)))
        files.append(log)

    lat = out / f"{args.prefix}.lat"
    lat.write_bytes(serialize(hier))
    files.append(lat)

    if args.level == "all":
        levels = list(range(cfg.num_levels))
    else:
        m = int(args.level)
        if not 0 <= m < cfg.num_levels:
            raise ArgumentError(f"level {m} out of range for {cfg.num_levels} levels")
        levels = [m]

    gt_grid = bake_grid(shape, args.r_out)
    gt_pts, _ = surface_points(gt_grid, args.samples, args.seed)
    for m in levels:
        pred_grid = eval_field_grid(hier.grids, params, cfg, m, args.r_out)
        pred_pts, mesh = surface_points(pred_grid, args.samples, args.seed)
        mpath = out / f"{args.prefix}.level{m}.{args.mesh_fmt}"
        mpath.write_bytes(export_mesh(mesh, args.mesh_fmt))
        rep = evaluate_point_sets(pred_pts, gt_pts, pred_grid, gt_grid)
        rpath = out / f"{args.prefix}.level{m}.report.txt"
        rpath.write_text(rep.to_text())
        files += [mpath, rpath]
        print(f"level {m}: chamfer {rep.chamfer_l2:.4f}  f-score {rep.f_score:.2f}  iou {rep.iou:.4f}")
    write_manifest(out / "manifest.txt", "reconstruct", config_digest(cfg), args.seed, files)
    return 0


# ---------------------------------------------------------------------------
# complete


def region_report(pred: Array, gt_region: Array, tau: float) -> EvalReport:
    """Metrics against one surface region; asym_chamfer runs region -> pred
    (how well that region was reconstructed)."""
    return EvalReport(
        chamfer_l2=chamfer_l2(pred, gt_region),
        asym_chamfer=asym_chamfer(gt_region, pred),
        f_score=f_score(pred, gt_region, tau),
        iou=None,
        n_pred=len(pred),
        n_gt=len(gt_region),
        tau_f=tau,
    )


def cmd_complete(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg, params = ckpt.config, ckpt.params
    shape = load_shape(args.shape)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rot, trans = look_at_camera(np.asarray(parse_vec3(args.eye)))
    obs = render_depth(shape, rot, trans, args.image_size, args.image_size)
    lam = 0.0 if args.no_consistency else args.consistency_weight
    opt = LatentOptConfig(
        steps=args.fit_steps,
        lr=args.fit_lr,
        consistency_weight=lam,
        consistency_sigma=args.sigma,
        visible_pool=args.visible_pool,
        occluded_pool=args.occluded_pool,
        seed=args.seed,
    )
    fit = complete_from_depth(params, cfg, obs, shape, opt)

    files: list[Path] = []
    lat = out / f"{args.prefix}.lat"
    lat.write_bytes(serialize(fit.hierarchy))
    log = out / f"{args.prefix}.fit_loss.txt"
    log.write_text(
        "".join(
            f"{i} {t:.6f} {v:.6f}\n"
            for i, (t, v) in enumerate(zip(fit.loss_history, fit.visible_history))
        )
    )
    files += [lat, log]

    pred_grid = eval_field_grid(fit.hierarchy.grids, params, cfg, None, args.r_out)
    pred_pts, mesh = surface_points(pred_grid, args.samples, args.seed)
    mpath = out / f"{args.prefix}.{args.mesh_fmt}"
    mpath.write_bytes(export_mesh(mesh, args.mesh_fmt))
    files.append(mpath)

    gt_grid = bake_grid(shape, args.r_out)
    gt_pts, _ = surface_points(gt_grid, args.samples, args.seed)
    occluded_mask = classify_occluded(obs, gt_pts)

    full = evaluate_point_sets(pred_pts, gt_pts, pred_grid, gt_grid, tau=args.tau)
    (out / f"{args.prefix}.report.txt").write_text(full.to_text())
    files.append(out / f"{args.prefix}.report.txt")
    print(f"full:     chamfer {full.chamfer_l2:.4f}  f-score {full.f_score:.2f}")
    for name, mask in (("visible", ~occluded_mask), ("occluded", occluded_mask)):
        if not mask.any():
            print(f"{name}: no ground-truth surface samples in this region")
            continue
        rep = region_report(pred_pts, gt_pts[mask], args.tau)
        rpath = out / f"{args.prefix}.{name}.report.txt"
        rpath.write_text(rep.to_text())
        files.append(rpath)
        print(f"{name:8s}: chamfer {rep.chamfer_l2:.4f}  region-asym {rep.asym_chamfer:.4f}")
    write_manifest(out / "manifest.txt", "complete", config_digest(cfg), args.seed, files)
    return 0


# ---------------------------------------------------------------------------
# mesh + eval


def cmd_mesh(args: argparse.Namespace) -> int:
    out = Path(args.out)
    fmt = mesh_format(out)
    if args.grid and (args.checkpoint or args.latents):
        raise ArgumentError("give either --grid or --checkpoint with --latents, not both")
    if args.grid:
        grid = load_grid(args.grid)
    elif args.checkpoint and args.latents:
        ckpt = load_checkpoint(args.checkpoint)
        hier = deserialize(Path(args.latents).read_bytes())
        if hier.spec.levels != ckpt.config.levels:
            raise FormatError(
                f"latent levels {hier.spec.levels} do not match the checkpoint {ckpt.config.levels}"
            )
        m = None if args.level in (None, "all") else int(args.level)
        grid = eval_field_grid(hier.grids, ckpt.params, ckpt.config, m, args.r_out)
    else:
        raise ArgumentError("mesh needs --grid or both --checkpoint and --latents")
    mesh = marching_cubes(grid, iso=args.iso)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(export_mesh(mesh, fmt))
    print(f"{mesh.num_vertices} vertices, {mesh.num_triangles} triangles -> {out}")
    return 0


def load_eval_side(path: Path, samples: int, seed: int) -> tuple[Array, ScalarGrid3 | None]:
    """A grid container is meshed first; a mesh file is sampled directly."""
    if path.suffix == ".grid":
        grid = load_grid(path)
        pts, _ = surface_points(grid, samples, seed)
        return pts, grid
    mesh = import_mesh(path.read_bytes(), mesh_format(path))
    if mesh.num_triangles == 0:
        raise DegenerateShapeError(f"{path} holds an empty mesh")
    return sample_surface(mesh, samples, seed=seed), None


def cmd_eval(args: argparse.Namespace) -> int:
    pred_pts, pred_grid = load_eval_side(Path(args.pred), args.samples, args.seed)
    gt_pts, gt_grid = load_eval_side(Path(args.gt), args.samples, args.seed)
    rep = evaluate_point_sets(pred_pts, gt_pts, pred_grid, gt_grid, tau=args.tau)
    if args.out:
        Path(args.out).write_text(rep.to_text())
    print(rep.to_text(), end="")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrsdf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="rng seed (default 0)")
    common.add_argument(
        "--deterministic",
        action="store_true",
        help="accepted for interface stability; runs are always deterministic per seed",
    )

    p = sub.add_parser("gen-data", parents=[common], help="generate a procedural CSG dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--num-shapes", type=int, default=16)
    p.add_argument("--input-res", type=int, default=DESK_INPUT_RES)
    p.add_argument("--pool-size", type=int, default=20_000, help="points per pool per shape")
    p.add_argument("--max-primitives", type=int, default=4)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train the encoder/decoder model")
    p.add_argument("--data", required=True, help="gen-data output directory")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--config", help="JSON model config file (unknown keys rejected)")
    p.add_argument("--levels", help="level spec, e.g. 1x128,2x32,4x16,8x8")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--points-per-set", type=int, dest="points_per_set")
    p.add_argument("--lr", type=float)
    p.add_argument("--input-res", type=int, dest="input_res")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log-every", type=int, default=0)
    for flag in _ABLATIONS:
        p.add_argument(f"--{flag.replace('_', '-')}", action="store_true", dest=flag)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", parents=[common], help="rebuild a shape from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shape", required=True, help="shape description file")
    p.add_argument("--mode", choices=("encode", "fit"), default="encode")
    p.add_argument("--level", default="all", help="decode level m, or 'all'")
    p.add_argument("--r-out", type=int, default=MESH_GRID_RES, dest="r_out")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--prefix", default="recon")
    p.add_argument("--mesh-fmt", choices=("obj", "ply"), default="obj", dest="mesh_fmt")
    p.add_argument("--samples", type=int, default=EVAL_SAMPLES)
    p.add_argument("--fit-steps", type=int, default=FIT_STEPS, dest="fit_steps")
    p.add_argument("--fit-lr", type=float, default=FIT_LR, dest="fit_lr")
    p.add_argument("--fit-pool", type=int, default=20_000, dest="fit_pool")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("complete", parents=[common], help="complete a shape from one depth view")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shape", required=True)
    p.add_argument("--eye", default="1.6,1.2,1.0", help="camera position x,y,z")
    p.add_argument("--image-size", type=int, default=64, dest="image_size")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--prefix", default="completion")
    p.add_argument("--mesh-fmt", choices=("obj", "ply"), default="obj", dest="mesh_fmt")
    p.add_argument("--r-out", type=int, default=MESH_GRID_RES, dest="r_out")
    p.add_argument("--samples", type=int, default=EVAL_SAMPLES)
    p.add_argument("--tau", type=float, default=F_SCORE_TAU)
    p.add_argument("--fit-steps", type=int, default=FIT_STEPS, dest="fit_steps")
    p.add_argument("--fit-lr", type=float, default=FIT_LR, dest="fit_lr")
    p.add_argument(
        "--consistency-weight", type=float, default=CONSISTENCY_WEIGHT, dest="consistency_weight"
    )
    p.add_argument("--sigma", type=float, default=CONSISTENCY_SIGMA)
    p.add_argument("--visible-pool", type=int, default=8192, dest="visible_pool")
    p.add_argument("--occluded-pool", type=int, default=4096, dest="occluded_pool")
    p.add_argument("--no-consistency", action="store_true", dest="no_consistency")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("mesh", parents=[common], help="extract a mesh from a grid or latents")
    p.add_argument("--grid", help="baked grid container")
    p.add_argument("--checkpoint", help="checkpoint (with --latents)")
    p.add_argument("--latents", help="latent container (with --checkpoint)")
    p.add_argument("--level", default=None, help="decode level m, or 'all' (default)")
    p.add_argument("--r-out", type=int, default=MESH_GRID_RES, dest="r_out")
    p.add_argument("--iso", type=float, default=0.0)
    p.add_argument("--out", required=True, help="mesh path (.obj or .ply)")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("eval", parents=[common], help="compare two meshes or grids")
    p.add_argument("--pred", required=True, help=".obj/.ply mesh or .grid container")
    p.add_argument("--gt", required=True, help=".obj/.ply mesh or .grid container")
    p.add_argument("--samples", type=int, default=EVAL_SAMPLES)
    p.add_argument("--tau", type=float, default=F_SCORE_TAU)
    p.add_argument("--out", help="write the report here as well")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is None:
        args.seed = 0 if args.command != "train" else None  # train: None = config default
    try:
        return args.func(args)
    except MrsdfError as e:
        print(f"{e.tag}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"io-error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

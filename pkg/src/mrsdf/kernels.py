"""Hand-written forward/backward neural-network kernels on numpy arrays.

Every operation comes as a `*_fwd` / `*_bwd` pair: the forward returns
`(output, cache)` and the backward consumes `(cache, grad_output)` and
returns gradients in argument order.  There is no tape; callers compose
backward passes explicitly.  All ops follow the dtype of their inputs, so
the same code runs in float32 for training and float64 for gradient
checks.

Conventions:
  * dense activations are `[N, features]`, row-major
  * 3D tensors are channels-first `[B, C, D, H, W]`
  * conv kernels are `[C_out, C_in, kd, kh, kw]`
  * transposed-conv kernels are `[C_in, C_out, kd, kh, kw]`, which makes
    `tconv3d` the exact adjoint of `conv3d` for the same kernel array
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    BOX_MAX,
    BOX_MIN,
    LEAKY_SLOPE,
    TRAIN_LR,
)
from .errors import ArgumentError, DimensionError, NumericError

Array = np.ndarray


# ---------------------------------------------------------------------------
# dense layer


def linear_fwd(x: Array, weight: Array, bias: Array) -> tuple[Array, tuple]:
    """y = x @ weight.T + bias, x: [N, d_in], weight: [d_out, d_in]."""
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise DimensionError("linear expects x [N,d_in], weight [d_out,d_in], bias [d_out]")
    if x.shape[1] != weight.shape[1] or weight.shape[0] != bias.shape[0]:
        raise DimensionError(
            f"linear shape mismatch: x {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    y = x @ weight.T + bias
    return y, (x, weight)


def linear_bwd(cache: tuple, gy: Array) -> tuple[Array, Array, Array]:
    x, weight = cache
    gx = gy @ weight
    gw = gy.T @ x
    gb = gy.sum(axis=0)
    return gx, gw, gb


# ---------------------------------------------------------------------------
# 3D convolution / transposed convolution


def _check_vol(x: Array, name: str) -> None:
    if x.ndim != 5:
        raise DimensionError(f"{name} expects a [B,C,D,H,W] tensor, got shape {x.shape}")


def _check_conv_args(stride: int, padding: int) -> None:
    if stride < 1:
        raise ArgumentError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ArgumentError(f"padding must be >= 0, got {padding}")


def _windows(xp: Array, kshape: tuple[int, int, int], stride: int) -> Array:
    """Read-only sliding-window view [B,C,od,oh,ow,kd,kh,kw] of a padded volume."""
    b, c, dp, hp, wp = xp.shape
    kd, kh, kw = kshape
    od = (dp - kd) // stride + 1
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    if od < 1 or oh < 1 or ow < 1:
        raise DimensionError(
            f"kernel {kshape} does not fit input of spatial shape {(dp, hp, wp)}"
        )
    sb, sc, sd, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(b, c, od, oh, ow, kd, kh, kw),
        strides=(sb, sc, sd * stride, sh * stride, sw * stride, sd, sh, sw),
        writeable=False,
    )


def _pad_vol(x: Array, padding: int) -> Array:
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))


def conv3d_fwd(
    x: Array, kernel: Array, bias: Array | None = None, stride: int = 1, padding: int = 0
) -> tuple[Array, tuple]:
    """Strided 3D cross-correlation with zero padding.

    x: [B,C_in,D,H,W], kernel: [C_out,C_in,kd,kh,kw] -> y: [B,C_out,od,oh,ow]
    with od = (D + 2*padding - kd) // stride + 1 (likewise h, w).
    """
    _check_vol(x, "conv3d")
    if kernel.ndim != 5:
        raise DimensionError(f"conv3d kernel must be 5D, got shape {kernel.shape}")
    if kernel.shape[1] != x.shape[1]:
        raise DimensionError(
            f"conv3d channel mismatch: input has {x.shape[1]}, kernel expects {kernel.shape[1]}"
        )
    _check_conv_args(stride, padding)
    xp = _pad_vol(x, padding)
    win = _windows(xp, kernel.shape[2:], stride)
    # contract (C_in, kd, kh, kw) in one GEMM; tensordot copies the strided
    # window view into contiguous storage, which is what makes this fast
    y = np.tensordot(win, kernel, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    y = np.ascontiguousarray(np.moveaxis(y, -1, 1))
    if bias is not None:
        y += bias[None, :, None, None, None]
    return y, (xp, x.shape, kernel, stride, padding, bias is not None)


def _scatter_offsets(src: Array, out: Array, stride: int) -> None:
    """Add src[..., i, j, k] (layout [B, d, h, w, C, kd, kh, kw]) into the
    strided positions of out [B, C, D, H, W], one (i, j, k) tap at a time."""
    d, h, w = src.shape[1:4]
    s = stride
    kd, kh, kw = src.shape[-3:]
    for i in range(kd):
        for j in range(kh):
            for k in range(kw):
                out[:, :, i : i + s * d : s, j : j + s * h : s, k : k + s * w : s] += (
                    np.moveaxis(src[..., i, j, k], -1, 1)
                )


def conv3d_bwd(cache: tuple, gy: Array) -> tuple[Array, Array, Array | None]:
    xp, xshape, kernel, stride, padding, has_bias = cache
    win = _windows(xp, kernel.shape[2:], stride)
    gkernel = np.tensordot(gy, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    gfull = np.tensordot(gy, kernel, axes=([1], [0]))  # [B,od,oh,ow,Cin,k,k,k]
    gxp = np.zeros_like(xp)
    _scatter_offsets(gfull, gxp, stride)
    p = padding
    _, _, d, h, w = xshape
    gx = gxp[:, :, p : p + d, p : p + h, p : p + w]
    if p == 0:
        gx = gx.copy()
    gbias = gy.sum(axis=(0, 2, 3, 4)) if has_bias else None
    return gx, gkernel, gbias


def tconv3d_fwd(
    x: Array, kernel: Array, bias: Array | None = None, stride: int = 1, padding: int = 0
) -> tuple[Array, tuple]:
    """Transposed 3D convolution (the adjoint of `conv3d_fwd` in its inputs).

    x: [B,C_in,D,H,W], kernel: [C_in,C_out,kd,kh,kw] -> y: [B,C_out,od,oh,ow]
    with od = (D - 1) * stride + kd - 2*padding.  With kd = 2*stride and
    padding = stride // 2 this doubles the spatial resolution.
    """
    _check_vol(x, "tconv3d")
    if kernel.ndim != 5:
        raise DimensionError(f"tconv3d kernel must be 5D, got shape {kernel.shape}")
    if kernel.shape[0] != x.shape[1]:
        raise DimensionError(
            f"tconv3d channel mismatch: input has {x.shape[1]}, kernel expects {kernel.shape[0]}"
        )
    _check_conv_args(stride, padding)
    b, _, d, h, w = x.shape
    cout = kernel.shape[1]
    kd, kh, kw = kernel.shape[2:]
    s = stride
    fd, fh, fw = (d - 1) * s + kd, (h - 1) * s + kh, (w - 1) * s + kw
    if min(fd, fh, fw) - 2 * padding < 1:
        raise ArgumentError("tconv3d output would be empty; reduce padding")
    yfull = np.zeros((b, cout, fd, fh, fw), dtype=np.result_type(x, kernel))
    yk = np.tensordot(x, kernel, axes=([1], [0]))  # [B,D,H,W,Cout,kd,kh,kw]
    _scatter_offsets(yk, yfull, stride)
    p = padding
    y = yfull[:, :, p : fd - p, p : fh - p, p : fw - p]
    if p > 0:
        y = y.copy()
    if bias is not None:
        y += bias[None, :, None, None, None]
    return y, (x, kernel, stride, padding, bias is not None)


def tconv3d_bwd(cache: tuple, gy: Array) -> tuple[Array, Array, Array | None]:
    x, kernel, stride, padding, has_bias = cache
    gyp = _pad_vol(gy, padding)
    win = _windows(gyp, kernel.shape[2:], stride)
    gx = np.tensordot(win, kernel, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    gx = np.ascontiguousarray(np.moveaxis(gx, -1, 1))
    gkernel = np.tensordot(x, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    gbias = gy.sum(axis=(0, 2, 3, 4)) if has_bias else None
    return gx, gkernel, gbias


# ---------------------------------------------------------------------------
# activation


def leaky_relu_fwd(x: Array, alpha: float = LEAKY_SLOPE) -> tuple[Array, tuple]:
    y = np.where(x >= 0, x, alpha * x)
    return y, (x >= 0, alpha)


def leaky_relu_bwd(cache: tuple, gy: Array) -> Array:
    nonneg, alpha = cache
    return np.where(nonneg, gy, alpha * gy)


# ---------------------------------------------------------------------------
# trilinear sampling of a cubic feature grid


def trilinear_sample(
    grid: Array,
    queries: Array,
    box_min: float = BOX_MIN,
    box_max: float = BOX_MAX,
) -> tuple[Array, tuple]:
    """Sample a node-centered cubic grid at world-space points.

    grid: [C, r, r, r] with node i at box_min + i * (side / (r - 1));
    queries: [N, 3].  Returns values [N, C].  Queries outside the box clamp
    to the border value (and get zero query-gradient).  A 1x1x1 grid is a
    constant field.
    """
    if grid.ndim != 4 or not (grid.shape[1] == grid.shape[2] == grid.shape[3]):
        raise DimensionError(f"grid must be [C,r,r,r], got shape {grid.shape}")
    if queries.ndim != 2 or queries.shape[1] != 3:
        raise DimensionError(f"queries must be [N,3], got shape {queries.shape}")
    c, r = grid.shape[0], grid.shape[1]
    n = queries.shape[0]
    dtype = np.result_type(grid, queries)
    if r == 1:
        vals = np.repeat(grid.reshape(1, c).astype(dtype, copy=False), n, axis=0)
        return vals, ("const", grid.shape, dtype, n)

    h = (box_max - box_min) / (r - 1)
    u_raw = (np.asarray(queries, dtype=dtype) - box_min) / h
    u = np.clip(u_raw, 0.0, r - 1.0)
    i0 = np.minimum(u.astype(np.int64), r - 2)  # u >= 0, so this floors
    t = u - i0  # in [0, 1] per axis
    inside = (u_raw > 0.0) & (u_raw < r - 1.0)  # query-grad defined strictly inside

    flat = grid.reshape(c, -1)
    acc = np.zeros((c, n), dtype=dtype)
    corners: list[tuple[Array, Array]] = []  # (flat index, weight) per corner
    w_axis = (1.0 - t, t)  # weight per axis for corner offset 0 / 1
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = w_axis[dx][:, 0] * w_axis[dy][:, 1] * w_axis[dz][:, 2]
                idx = ((i0[:, 0] + dx) * r + (i0[:, 1] + dy)) * r + (i0[:, 2] + dz)
                acc += flat[:, idx] * w
                corners.append((idx, w))
    vals = np.ascontiguousarray(acc.T)
    return vals, ("tri", grid.shape, dtype, corners, flat, t, inside, h)


def trilinear_sample_bwd(
    cache: tuple, gy: Array, need_query_grad: bool = False
) -> tuple[Array, Array | None]:
    """Gradients of trilinear sampling: scatter into the grid, and optionally
    the spatial derivative at each query (zero where the query clamped)."""
    kind = cache[0]
    if kind == "const":
        _, gshape, dtype, _ = cache
        ggrid = gy.sum(axis=0).reshape(gshape).astype(dtype, copy=False)
        gq = np.zeros((gy.shape[0], 3), dtype=dtype) if need_query_grad else None
        return ggrid, gq

    _, gshape, dtype, corners, flat, t, inside, h = cache
    c, r = gshape[0], gshape[1]
    # one bincount over all 8 corners beats repeated np.add.at scatters
    idx_all = np.stack([idx for idx, _ in corners])  # [8, N]
    w_all = np.stack([w for _, w in corners])  # [8, N]
    keys = (idx_all[:, :, None] * c + np.arange(c)).ravel()
    vals = (gy[None, :, :] * w_all[:, :, None]).ravel()
    gflat = np.bincount(keys, weights=vals, minlength=r * r * r * c)
    ggrid = np.ascontiguousarray(
        gflat.reshape(r * r * r, c).T.astype(dtype, copy=False)
    ).reshape(gshape)

    gq = None
    if need_query_grad:
        n = gy.shape[0]
        gq = np.zeros((n, 3), dtype=dtype)
        w_axis = (1.0 - t, t)
        d_axis = (-1.0, 1.0)
        ci = 0
        gyv = gy  # [N, C]
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    idx, _ = corners[ci]
                    ci += 1
                    v = flat[:, idx].T  # [N, C]
                    s = (gyv * v).sum(axis=1)  # d loss / d weight
                    gq[:, 0] += s * d_axis[dx] * w_axis[dy][:, 1] * w_axis[dz][:, 2]
                    gq[:, 1] += s * w_axis[dx][:, 0] * d_axis[dy] * w_axis[dz][:, 2]
                    gq[:, 2] += s * w_axis[dx][:, 0] * w_axis[dy][:, 1] * d_axis[dz]
        gq *= inside / h
    return ggrid, gq


# ---------------------------------------------------------------------------
# spatial-cell dropout on a latent grid


def dropout_cells(grid: Array, rate: float, rng: np.random.Generator) -> tuple[Array, Array]:
    """Zero whole spatial cells of a [C,r,r,r] grid, all channels at once.

    Survivors are NOT rescaled: a zeroed cell must look identical to an
    absent observation, so the field decoded from partial latents stays in
    distribution.  Returns (masked grid, keep mask [r,r,r]).
    """
    if grid.ndim != 4:
        raise DimensionError(f"dropout_cells expects [C,r,r,r], got shape {grid.shape}")
    if not 0.0 <= rate <= 1.0:
        raise ArgumentError(f"dropout rate must be in [0, 1], got {rate}")
    keep = rng.random(grid.shape[1:]) >= rate
    return grid * keep, keep


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Per-tensor Adam accumulator with its hyperparameters."""

    lr: float = TRAIN_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    t: int = 0
    m: Array | None = field(default=None, repr=False)
    v: Array | None = field(default=None, repr=False)


def adam_step(param: Array, grad: Array, state: AdamState) -> Array:
    """One in-place Adam update with bias correction; returns `param`."""
    if param.shape != grad.shape:
        raise DimensionError(f"adam_step shape mismatch: {param.shape} vs {grad.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("adam_step received a non-finite gradient")
    if state.m is None:
        state.m = np.zeros_like(param)
        state.v = np.zeros_like(param)
    state.t += 1
    state.m += (1.0 - state.beta1) * (grad - state.m)
    state.v += (1.0 - state.beta2) * (grad * grad - state.v)
    mhat = state.m / (1.0 - state.beta1**state.t)
    vhat = state.v / (1.0 - state.beta2**state.t)
    param -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return param


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def grad_check(
    func,
    inputs: list[Array],
    eps: float = 1e-6,
    check_mask: list[bool] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `func(*inputs)` must return `(loss, grads)` where loss is a scalar and
    grads matches `inputs` (entries may be None to skip).  Inputs are
    promoted to float64.  The error for each tensor is
    max|analytic - numeric| / max(|numeric|_inf, |analytic|_inf, 1e-12),
    i.e. normalized by the gradient scale so near-zero components do not
    blow up the ratio; the overall result is the max over tensors.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    _, grads = func(*inputs)
    if check_mask is None:
        check_mask = [g is not None for g in grads]
    worst = 0.0
    for x, g, do in zip(inputs, grads, check_mask):
        if not do or g is None:
            continue
        num = np.zeros_like(x)
        it = np.nditer(x, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            orig = x[ix]
            step = eps * max(1.0, abs(orig))
            x[ix] = orig + step
            lp = float(func(*inputs)[0])
            x[ix] = orig - step
            lm = float(func(*inputs)[0])
            x[ix] = orig
            num[ix] = (lp - lm) / (2.0 * step)
            it.iternext()
        scale = max(float(np.max(np.abs(num))), float(np.max(np.abs(g))), 1e-12)
        worst = max(worst, float(np.max(np.abs(num - g))) / scale)
    return worst

"""Reference pairwise registration by gradient descent on LNCC + diffusion.

The optimizer follows the classic coarse-to-fine recipe: solve on a
factor-2 downsampled pyramid, upsample the running field (values doubled,
trilinear) into each finer level, and refine.  The loss is

    loss(u) = -lncc(fixed, warp(moving, u), window) + lambda * diffusion(u)

with the diffusion term the mean squared forward-difference gradient of u.
The gradient is fully analytic: the LNCC adjoint is accumulated with the
same box sums as the forward pass and chained through the spatial
derivative of the trilinear warp.  Every update passes a halving line
search on the true loss, so the per-level loss trace is non-increasing.

In SVF mode the state is a stationary velocity and the returned field is
its scaling-and-squaring exponential, diffeomorphic up to discretization.
The update direction is the displacement-space gradient evaluated at
exp(v) (exact to first order in the step); the line search on the true
loss keeps descent honest regardless.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from functools import lru_cache

from .errors import DimMismatch, DivergedLoss, NonFiniteData, UnsupportedLayout
from .metrics import LNCC_EPS, _box_count, _box_sum
from .volio import DisplacementField, Volume
from .warp import _corner_flat_indices, _trilinear, identity_grid

DISPLACEMENT = "displacement"
SVF = "svf"


@dataclass(frozen=True)
class RegConfig:
    """Optimizer settings.

    ``iters_per_level`` runs coarsest first and must have ``levels``
    entries.  ``step_size`` is the initial update magnitude in voxels (the
    raw gradient is rescaled once per level so the first step moves at most
    this far).  ``update_smoothing_sigma`` Gaussian-smooths each update.
    """

    levels: int = 3
    iters_per_level: tuple[int, ...] = (100, 100, 50)
    step_size: float = 1.0
    lambda_diffusion: float = 1.0
    lncc_window: int = 9
    parameterization: str = DISPLACEMENT
    squarings: int = 7
    update_smoothing_sigma: float = 1.0
    tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if len(self.iters_per_level) != self.levels:
            raise ValueError(
                f"iters_per_level has {len(self.iters_per_level)} entries for {self.levels} levels"
            )
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.lambda_diffusion < 0:
            raise ValueError("lambda_diffusion must be >= 0")
        if self.lncc_window < 1 or self.lncc_window % 2 == 0:
            raise ValueError("lncc_window must be a positive odd integer")
        if self.parameterization not in (DISPLACEMENT, SVF):
            raise ValueError(f"parameterization must be '{DISPLACEMENT}' or '{SVF}'")
        if self.squarings < 0 or self.update_smoothing_sigma < 0:
            raise ValueError("squarings and update_smoothing_sigma must be >= 0")


# ---------------------------------------------------------------------------
# velocity exponential (optimizer-internal float32 variant)


@lru_cache(maxsize=4)
def _grid32(dims: tuple) -> np.ndarray:
    g = identity_grid(dims).astype(np.float32)
    g.setflags(write=False)
    return g


def _exp_velocity(v: np.ndarray, squarings: int) -> np.ndarray:
    """Scaling-and-squaring in float32: same algorithm as warp.exp_svf,
    narrowed for the optimizer's inner loop where memory bandwidth is the
    bottleneck and 1e-5 voxel noise is far below registration accuracy."""
    dims = v.shape[:3]
    u = (v * float(2.0**-squarings)).astype(np.float32)
    grid = _grid32(dims).reshape(-1, 3)
    for _ in range(squarings):
        pts = grid + u.reshape(-1, 3)
        u = u + _trilinear(u, pts).reshape(u.shape)
    return u.astype(np.float64)


# ---------------------------------------------------------------------------
# warp with spatial gradient


def _warp_with_grad(mdata: np.ndarray, u: np.ndarray):
    """Warped image w(x) = M(x + u(x)) and the trilinear spatial gradient
    dM/dp at the sample positions (zero along axes that were clamped)."""
    dims = u.shape[:3]
    pts = (identity_grid(dims) + u).reshape(-1, 3)
    base, dx, dy, dz, f = _corner_flat_indices(pts, mdata.shape)
    flat = np.ascontiguousarray(mdata).ravel()
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    v000 = flat[base]
    v100 = flat[base + dx]
    v010 = flat[base + dy]
    v110 = flat[base + dx + dy]
    v001 = flat[base + dz]
    v101 = flat[base + dx + dz]
    v011 = flat[base + dy + dz]
    v111 = flat[base + dx + dy + dz]

    c00 = v000 + (v100 - v000) * fx
    c10 = v010 + (v110 - v010) * fx
    c01 = v001 + (v101 - v001) * fx
    c11 = v011 + (v111 - v011) * fx
    c0 = c00 + (c10 - c00) * fy
    c1 = c01 + (c11 - c01) * fy
    warped = c0 + (c1 - c0) * fz

    gx = ((v100 - v000) * (1 - fy) + (v110 - v010) * fy) * (1 - fz) + (
        (v101 - v001) * (1 - fy) + (v111 - v011) * fy
    ) * fz
    gy = ((v010 - v000) * (1 - fx) + (v110 - v100) * fx) * (1 - fz) + (
        (v011 - v001) * (1 - fx) + (v111 - v101) * fx
    ) * fz
    gz = ((v001 - v000) * (1 - fx) + (v101 - v100) * fx) * (1 - fy) + (
        (v011 - v010) * (1 - fx) + (v111 - v110) * fx
    ) * fy

    n = np.asarray(mdata.shape, dtype=np.float64) - 1.0
    inside = (pts >= 0.0) & (pts <= n)
    grad = np.stack([gx, gy, gz], axis=-1)
    grad *= inside
    return warped.reshape(dims), grad.reshape(dims + (3,))


def _warp_only(mdata: np.ndarray, u: np.ndarray) -> np.ndarray:
    dims = u.shape[:3]
    pts = (identity_grid(dims) + u).reshape(-1, 3)
    return _trilinear(mdata, pts).reshape(dims)


# ---------------------------------------------------------------------------
# LNCC similarity with adjoint


class _LnccTerms:
    """Window sums of the fixed image, reused across optimizer iterations."""

    def __init__(self, fdata: np.ndarray, window: int):
        self.fdata = fdata
        self.r = window // 2
        self.n = _box_count(fdata.shape, self.r)
        self.sa = _box_sum(fdata, self.r)
        self.abar = self.sa / self.n
        self.va = _box_sum(fdata * fdata, self.r) - self.sa * self.abar + LNCC_EPS

    def value(self, w: np.ndarray) -> float:
        sb = _box_sum(w, self.r)
        vb = _box_sum(w * w, self.r) - sb * sb / self.n + LNCC_EPS
        cross = _box_sum(self.fdata * w, self.r) - self.abar * sb
        return float(np.mean(cross / np.sqrt(self.va * vb)))

    def value_and_adjoint(self, w: np.ndarray):
        """LNCC mean and its exact derivative with respect to the warped image."""
        sb = _box_sum(w, self.r)
        bbar = sb / self.n
        vb = _box_sum(w * w, self.r) - sb * bbar + LNCC_EPS
        cross = _box_sum(self.fdata * w, self.r) - self.sa * bbar
        inv_sqrt = 1.0 / np.sqrt(self.va * vb)
        ncc = cross * inv_sqrt
        value = float(np.mean(ncc))

        beta = ncc / vb
        dw = (
            self.fdata * _box_sum(inv_sqrt, self.r)
            - _box_sum(inv_sqrt * self.abar, self.r)
            - w * _box_sum(beta, self.r)
            + _box_sum(beta * bbar, self.r)
        ) / self.fdata.size
        return value, dw


# ---------------------------------------------------------------------------
# diffusion regularizer


def _diffusion_terms(dims) -> int:
    total = 0
    for axis in range(3):
        n = dims[axis]
        others = int(np.prod([dims[a] for a in range(3) if a != axis]))
        total += (n - 1) * others
    return 3 * total  # three displacement components


def _diffusion_value_and_grad(u: np.ndarray):
    n_terms = _diffusion_terms(u.shape[:3])
    if n_terms == 0:
        return 0.0, np.zeros_like(u)
    value = 0.0
    grad = np.zeros_like(u)
    for axis in range(3):
        d = np.diff(u, axis=axis)
        value += float(np.sum(d * d))
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        grad[tuple(hi)] += d
        grad[tuple(lo)] -= d
    return value / n_terms, grad * (2.0 / n_terms)


def _diffusion_value(u: np.ndarray) -> float:
    n_terms = _diffusion_terms(u.shape[:3])
    if n_terms == 0:
        return 0.0
    return sum(float(np.sum(np.diff(u, axis=a) ** 2)) for a in range(3)) / n_terms


# ---------------------------------------------------------------------------
# loss


def _loss_only(terms: _LnccTerms, mdata, u, lam) -> float:
    w = _warp_only(mdata, u)
    loss = -terms.value(w)
    if lam > 0:
        loss += lam * _diffusion_value(u)
    return loss


def _loss_and_grad(terms: _LnccTerms, mdata, u, lam):
    w, mgrad = _warp_with_grad(mdata, u)
    value, dw = terms.value_and_adjoint(w)
    grad = -dw[..., None] * mgrad
    loss = -value
    if lam > 0:
        dval, dgrad = _diffusion_value_and_grad(u)
        loss += lam * dval
        grad += lam * dgrad
    return loss, grad


def loss_and_grad(fixed: Volume, moving: Volume, phi: DisplacementField, cfg: RegConfig):
    """Registration loss and its analytic gradient with respect to the
    displacement (the quantity checked against finite differences)."""
    if fixed.dims != moving.dims or fixed.dims != phi.dims:
        raise DimMismatch("fixed, moving, and field must share one grid")
    terms = _LnccTerms(np.asarray(fixed.data, dtype=np.float64), cfg.lncc_window)
    return _loss_and_grad(
        terms,
        np.asarray(moving.data, dtype=np.float64),
        np.asarray(phi.data, dtype=np.float64),
        cfg.lambda_diffusion,
    )


# ---------------------------------------------------------------------------
# pyramid plumbing


def _downsample_data(d: np.ndarray) -> np.ndarray:
    """Block-mean 2x downsampling; odd axes are edge-padded first."""
    pads = [(0, n % 2) for n in d.shape]
    if any(p[1] for p in pads):
        d = np.pad(d, pads, mode="edge")
    sx, sy, sz = d.shape[0] // 2, d.shape[1] // 2, d.shape[2] // 2
    return d.reshape(sx, 2, sy, 2, sz, 2).mean(axis=(1, 3, 5))


def _pyramid(data: np.ndarray, levels: int) -> list[np.ndarray]:
    """Images from coarsest [0] to finest [-1]."""
    out = [np.asarray(data, dtype=np.float64)]
    for _ in range(levels - 1):
        out.append(_downsample_data(out[-1]))
    return out[::-1]


def _upsample_state(state: np.ndarray, fine_dims) -> np.ndarray:
    """Upsample a field/velocity to the next finer grid, doubling values."""
    pts = (identity_grid(tuple(fine_dims)).reshape(-1, 3) - 0.5) / 2.0
    up = _trilinear(state, pts).reshape(tuple(fine_dims) + (3,))
    return 2.0 * up


def _smooth_update(g: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return g
    out = np.empty_like(g)
    for c in range(3):
        gaussian_filter(g[..., c], sigma=sigma, mode="nearest", output=out[..., c])
    return out


# ---------------------------------------------------------------------------
# optimization loop


def _optimize_level(fdata, mdata, state, iters, cfg: RegConfig):
    """Line-searched gradient descent at one pyramid level.

    ``state`` is the displacement itself or, in SVF mode, the velocity.
    Returns (state, losses); the loss sequence is non-increasing because
    updates are only accepted when they do not raise the loss.  The level
    converges early once three consecutive accepted steps each improve the
    loss by less than cfg.tol relative.
    """
    svf = cfg.parameterization == SVF
    terms = _LnccTerms(fdata, cfg.lncc_window)

    def to_field(s):
        return _exp_velocity(s, cfg.squarings) if svf else s

    u = to_field(state)
    loss = _loss_only(terms, mdata, u, cfg.lambda_diffusion)
    if not np.isfinite(loss):
        raise DivergedLoss(f"initial loss is {loss}")
    losses: list[float] = []
    step = None
    stalled = 0
    for _ in range(iters):
        _, grad = _loss_and_grad(terms, mdata, u, cfg.lambda_diffusion)
        direction = _smooth_update(grad, cfg.update_smoothing_sigma)
        peak = float(np.max(np.abs(direction)))
        if peak == 0.0:
            break
        if step is None:
            step = cfg.step_size / peak
        accepted = False
        trial = step
        for _ in range(30):
            cand_state = state - trial * direction
            cand_u = to_field(cand_state)
            cand_loss = _loss_only(terms, mdata, cand_u, cfg.lambda_diffusion)
            if np.isfinite(cand_loss) and cand_loss <= loss:
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            break
        improvement = loss - cand_loss
        state, u, loss = cand_state, cand_u, cand_loss
        step = trial * 1.1
        losses.append(loss)
        stalled = stalled + 1 if improvement <= cfg.tol * (1.0 + abs(loss)) else 0
        if stalled >= 3:
            break
    return state, losses


def register(fixed: Volume, moving: Volume, cfg: RegConfig = RegConfig()):
    """Estimate the displacement aligning ``moving`` to ``fixed``.

    Returns (DisplacementField, trace) where ``trace`` holds one loss list
    per pyramid level, coarsest first.  Deterministic for fixed inputs and
    config.
    """
    if fixed.kind != "scalar" or moving.kind != "scalar":
        raise UnsupportedLayout("register expects scalar volumes")
    if fixed.dims != moving.dims:
        raise DimMismatch(f"fixed dims {fixed.dims} != moving dims {moving.dims}")
    fdata = np.asarray(fixed.data, dtype=np.float64)
    mdata = np.asarray(moving.data, dtype=np.float64)
    if not (np.all(np.isfinite(fdata)) and np.all(np.isfinite(mdata))):
        raise NonFiniteData("image intensities must be finite")

    f_pyr = _pyramid(fdata, cfg.levels)
    m_pyr = _pyramid(mdata, cfg.levels)
    state = np.zeros(f_pyr[0].shape + (3,), dtype=np.float64)
    trace: list[list[float]] = []
    for level in range(cfg.levels):
        state, losses = _optimize_level(
            f_pyr[level], m_pyr[level], state, cfg.iters_per_level[level], cfg
        )
        trace.append(losses)
        if level + 1 < cfg.levels:
            state = _upsample_state(state, f_pyr[level + 1].shape)

    u = _exp_velocity(state, cfg.squarings) if cfg.parameterization == SVF else state
    return DisplacementField(header=fixed.header, data=u), trace


def instance_optimize(
    fixed: Volume,
    moving: Volume,
    init: DisplacementField,
    cfg: RegConfig = RegConfig(),
) -> DisplacementField:
    """Refine an existing field at full resolution only.

    Runs the finest-level loop (the last iters_per_level entry) seeded from
    ``init``; the line search guarantees the final loss does not exceed the
    initial one.  With a zero init this is exactly single-level ``register``.
    In SVF mode the init displacement seeds the velocity directly (exact for
    the zero field, first-order otherwise).
    """
    if fixed.dims != moving.dims or fixed.dims != init.dims:
        raise DimMismatch("fixed, moving, and init must share one grid")
    fdata = np.asarray(fixed.data, dtype=np.float64)
    mdata = np.asarray(moving.data, dtype=np.float64)
    if not (np.all(np.isfinite(fdata)) and np.all(np.isfinite(mdata))):
        raise NonFiniteData("image intensities must be finite")
    state = np.asarray(init.data, dtype=np.float64).copy()
    state, _ = _optimize_level(fdata, mdata, state, cfg.iters_per_level[-1], cfg)
    u = _exp_velocity(state, cfg.squarings) if cfg.parameterization == SVF else state
    return DisplacementField(header=fixed.header, data=u)

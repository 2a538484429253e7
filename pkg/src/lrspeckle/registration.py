"""Rigid frame registration by masked SSD minimisation.

Coordinates are ``(x, y) = (column, row)``. A transform maps a source point
``p`` to ``R(theta) (p - c) + c + (dx, dy)`` where ``c`` is the image centre
and ``R`` rotates by ``theta`` degrees. Warping samples the source at the
inverse-mapped position with bilinear interpolation, so ``dx = 1`` moves the
content one pixel towards larger column indices.

The optimiser is a coarse-to-fine pyramid with cyclic coordinate descent
over ``(dx, dy, theta)`` and a golden-section line search per parameter.
The coarsest level is seeded by an exhaustive integer translation search.
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ParameterError, RegistrationError, ShapeError
from .volume import LogVolume, as_grid, stack_frames

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class RigidTransform:
    dx: float = 0.0
    dy: float = 0.0
    theta: float = 0.0

    def as_tuple(self) -> tuple[float, float, float]:
        return self.dx, self.dy, self.theta


IDENTITY = RigidTransform()


@dataclass(frozen=True)
class RegistrationOptions:
    max_translation: float = 20.0
    max_rotation: float = 5.0
    pyramid_levels: int = 3
    tol: float = 1e-6
    max_sweeps: int = 50
    # Gaussian pre-smoothing (pixels) applied before matching; suppresses the
    # bias bilinear interpolation introduces on noisy frames.
    smooth_sigma: float = 1.5
    translation_tol: float = 1e-3
    rotation_tol: float = 1e-3

    def __post_init__(self):
        for name in ("max_translation", "max_rotation", "tol", "translation_tol", "rotation_tol"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"registration option {name} must be positive")
        if self.pyramid_levels < 1:
            raise ParameterError("registration option pyramid_levels must be >= 1")
        if self.max_sweeps < 1:
            raise ParameterError("registration option max_sweeps must be >= 1")
        if self.smooth_sigma < 0:
            raise ParameterError("registration option smooth_sigma must be >= 0")


def _rotation(theta_deg: float) -> np.ndarray:
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``b`` first, then ``a``."""
    d = _rotation(a.theta) @ np.array([b.dx, b.dy]) + np.array([a.dx, a.dy])
    return RigidTransform(float(d[0]), float(d[1]), a.theta + b.theta)


def inverse(t: RigidTransform) -> RigidTransform:
    d = -(_rotation(-t.theta) @ np.array([t.dx, t.dy]))
    return RigidTransform(float(d[0]), float(d[1]), -t.theta)


def image_center(shape: tuple[int, int]) -> tuple[float, float]:
    return (shape[1] - 1) / 2.0, (shape[0] - 1) / 2.0


@functools.lru_cache(maxsize=8)
def _pixel_grid(m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:m, 0:n].astype(np.float64)
    yy.flags.writeable = False
    xx.flags.writeable = False
    return yy, xx


def _source_coords(shape, t: RigidTransform, center=None):
    cx, cy = image_center(shape) if center is None else center
    yy, xx = _pixel_grid(*shape)
    rad = math.radians(t.theta)
    c, s = math.cos(rad), math.sin(rad)
    # inverse map: R(-theta) (q - c - d) + c
    u = xx - cx - t.dx
    v = yy - cy - t.dy
    xs = c * u + s * v + cx
    ys = -s * u + c * v + cy
    return ys, xs


def warp(img, t: RigidTransform, center=None) -> tuple[np.ndarray, np.ndarray]:
    """Bilinearly resample ``img`` under ``t``.

    Returns the warped frame and a boolean mask that is False wherever the
    sample position falls outside the source. Invalid pixels carry the value
    of the nearest source pixel.
    """
    img = np.asarray(img, dtype=np.float64)
    if t == IDENTITY and center is None:
        return img.copy(), np.ones(img.shape, dtype=bool)
    ys, xs = _source_coords(img.shape, t, center)
    eps = 1e-9
    mask = (
        (xs >= -eps) & (xs <= img.shape[1] - 1 + eps)
        & (ys >= -eps) & (ys <= img.shape[0] - 1 + eps)
    )
    out = ndimage.map_coordinates(img, [ys, xs], order=1, mode="nearest")
    return out, mask


def ssd(a, b, mask=None) -> float:
    """Mean squared difference over the valid pixels of ``mask``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssd needs equal shapes, got {a.shape} and {b.shape}")
    if mask is None:
        mask = np.ones(a.shape, dtype=bool)
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise RegistrationError("no overlap between images")
    diff = (a - b)[mask]
    return float(np.dot(diff, diff) / count)


def _downsample(img: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(img, 1.0, mode="nearest")[::2, ::2]


def _golden_section(f, lo: float, hi: float, tol: float, x0: float, f0: float):
    """Minimise ``f`` on ``[lo, hi]``; never returns worse than ``(x0, f0)``."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    x, fx = (c, fc) if fc <= fd else (d, fd)
    if fx < f0:
        return x, fx
    return x0, f0


class _LevelProblem:
    def __init__(self, moving, fixed, center):
        self.moving = moving
        self.fixed = fixed
        self.center = center

    def cost(self, params) -> float:
        out, mask = warp(self.moving, RigidTransform(*params), self.center)
        # require a reasonable overlap so the cost cannot be gamed by tiny masks
        if np.count_nonzero(mask) < 0.25 * mask.size:
            return math.inf
        return ssd(out, self.fixed, mask)


def register_pair(moving, fixed, opts: RegistrationOptions | None = None) -> RigidTransform:
    """Find the transform ``t`` such that ``warp(moving, t)`` best matches ``fixed``."""
    opts = opts or RegistrationOptions()
    moving = as_grid(moving)
    fixed = as_grid(fixed)
    if moving.shape != fixed.shape:
        raise ShapeError(f"register_pair needs equal shapes, got {moving.shape} and {fixed.shape}")

    if opts.smooth_sigma > 0:
        mov0 = ndimage.gaussian_filter(moving, opts.smooth_sigma, mode="nearest")
        fix0 = ndimage.gaussian_filter(fixed, opts.smooth_sigma, mode="nearest")
    else:
        mov0, fix0 = moving, fixed

    pyramid = [(mov0, fix0)]
    while len(pyramid) < opts.pyramid_levels and min(pyramid[-1][0].shape) >= 16:
        mv, fx = pyramid[-1]
        pyramid.append((_downsample(mv), _downsample(fx)))

    full_center = image_center(moving.shape)
    params = [0.0, 0.0, 0.0]
    for level in range(len(pyramid) - 1, -1, -1):
        scale = 2.0 ** level
        mv, fx = pyramid[level]
        problem = _LevelProblem(mv, fx, (full_center[0] / scale, full_center[1] / scale))
        tmax = opts.max_translation / scale
        bounds = [(-tmax, tmax), (-tmax, tmax), (-opts.max_rotation, opts.max_rotation)]
        if level == len(pyramid) - 1:
            params = _coarse_translation_search(problem, tmax)
            t_half = 1.0
            r_half = opts.max_rotation
        else:
            t_half = 1.0
            r_half = opts.max_rotation / 2.0 ** (len(pyramid) - 1 - level)
        params = _coordinate_descent(
            problem, params, bounds, (t_half, t_half, r_half),
            (opts.translation_tol, opts.translation_tol, opts.rotation_tol),
            opts,
        )
        if level > 0:
            params = [params[0] * 2.0, params[1] * 2.0, params[2]]

    final = RigidTransform(*params)
    base = _LevelProblem(mov0, fix0, full_center)
    f_final = base.cost(params)
    f_identity = base.cost([0.0, 0.0, 0.0])
    if not math.isfinite(f_final) and not math.isfinite(f_identity):
        raise RegistrationError("no overlap between moving and fixed frames")
    if f_identity <= f_final:
        return IDENTITY
    return final


def _coarse_translation_search(problem: _LevelProblem, tmax: float) -> list[float]:
    r = int(math.floor(tmax))
    best, best_f = [0.0, 0.0, 0.0], problem.cost([0.0, 0.0, 0.0])
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            f = problem.cost([float(dx), float(dy), 0.0])
            if f < best_f:
                best, best_f = [float(dx), float(dy), 0.0], f
    if not math.isfinite(best_f):
        raise RegistrationError("no overlap at the coarsest pyramid level")
    return best


def _coordinate_descent(problem, params, bounds, halfwidths, tols, opts) -> list[float]:
    params = list(params)
    half = list(halfwidths)
    f_cur = problem.cost(params)
    if not math.isfinite(f_cur):
        raise RegistrationError("no overlap at pyramid level")
    for _ in range(opts.max_sweeps):
        f_prev = f_cur
        for i in range(3):
            lo = max(bounds[i][0], params[i] - half[i])
            hi = min(bounds[i][1], params[i] + half[i])

            def f1(x, i=i):
                trial = list(params)
                trial[i] = x
                return problem.cost(trial)

            old = params[i]
            params[i], f_cur = _golden_section(f1, lo, hi, tols[i], params[i], f_cur)
            # later sweeps search a bracket scaled to the last move
            half[i] = min(halfwidths[i], max(4.0 * abs(params[i] - old), 8.0 * tols[i]))
        if abs(f_prev - f_cur) <= opts.tol * max(abs(f_prev), 1e-300):
            break
    return params


def register_stack(
    frames: Sequence,
    reference_index: int | None = None,
    opts: RegistrationOptions | None = None,
) -> tuple[list[RigidTransform], LogVolume, np.ndarray]:
    """Register every frame to the reference frame (default: the middle one).

    Returns the per-frame transforms, the warped stack and the mask of pixels
    valid in every warped frame.
    """
    grids = [as_grid(f) for f in frames]
    k = len(grids)
    if k < 2:
        raise ShapeError(f"need at least 2 frames to register, got {k}")
    if reference_index is None:
        reference_index = k // 2
    if not 0 <= reference_index < k:
        raise ParameterError(f"reference index {reference_index} out of range for {k} frames")
    fixed = grids[reference_index]
    transforms, warped = [], []
    combined = np.ones(fixed.shape, dtype=bool)
    for j, g in enumerate(grids):
        if j == reference_index:
            t = IDENTITY
        else:
            try:
                t = register_pair(g, fixed, opts)
            except RegistrationError as exc:
                raise RegistrationError(str(exc), frame_index=j) from exc
        out, mask = warp(g, t)
        transforms.append(t)
        warped.append(out)
        combined &= mask
    return transforms, stack_frames(warped), combined


def save_transforms(transforms: Sequence[RigidTransform], path) -> None:
    records = [
        {"frame": j, "dx": t.dx, "dy": t.dy, "theta": t.theta}
        for j, t in enumerate(transforms)
    ]
    Path(path).write_text(json.dumps({"transforms": records}, indent=2) + "\n")


def load_transforms(path) -> list[RigidTransform]:
    raw = json.loads(Path(path).read_text())
    records = sorted(raw["transforms"], key=lambda r: r["frame"])
    return [RigidTransform(float(r["dx"]), float(r["dy"]), float(r["theta"])) for r in records]

"""Spatially varying log-domain noise level from local MAD statistics.

For each pixel the MAD-based deviation is computed on every inner window
that fits inside an outer window centred there; the most frequent value
(histogram mode) becomes the raw estimate, which is then smoothed with
separable cubic smoothing splines.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import ParameterError, ShapeError
from .volume import LogVolume, SigmaMap, as_grid

MAD_SCALE = 1.4826

# bounds the size of the (rows, cols, window) temporaries
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class NoiseOptions:
    inner: int = 9
    outer: int = 15
    bin_width: float = 0.01
    smoothing: float = 0.5

    def __post_init__(self):
        if self.inner < 1 or self.inner % 2 == 0:
            raise ParameterError(f"inner window must be a positive odd size, got {self.inner}")
        if self.outer % 2 == 0 or self.outer <= self.inner:
            raise ParameterError(
                f"outer window must be odd and larger than the inner one, got {self.outer}"
            )
        if not self.bin_width > 0:
            raise ParameterError("mode bin width must be positive")
        if not 0 < self.smoothing <= 1:
            raise ParameterError("spline smoothing parameter must lie in (0, 1]")


def mad_sigma(grid, center: tuple[int, int], window: int) -> float:
    """``1.4826 * median(|x - median(x)|)`` over a square window at ``center``.

    The frame is replicate-padded so windows may overhang the border.
    """
    g = np.asarray(grid, dtype=np.float64)
    r = window // 2
    padded = np.pad(g, r, mode="edge")
    i, j = center
    x = padded[i:i + window, j:j + window]
    return float(MAD_SCALE * np.median(np.abs(x - np.median(x))))


def mad_map(grid, window: int) -> np.ndarray:
    """MAD deviation for the window centred on every pixel (replicate padding)."""
    g = np.asarray(grid, dtype=np.float64)
    r = window // 2
    padded = np.pad(g, r, mode="edge")
    m, n = g.shape
    out = np.empty((m, n))
    step = max(1, _CHUNK_ELEMENTS // (n * window * window))
    for start in range(0, m, step):
        stop = min(m, start + step)
        block = sliding_window_view(padded[start:stop + 2 * r], (window, window))
        block = block.reshape(stop - start, n, window * window)
        med = np.median(block, axis=-1, keepdims=True)
        out[start:stop] = MAD_SCALE * np.median(np.abs(block - med), axis=-1)
    return out


def mode_sigma(candidates, bin_width: float) -> float:
    """Centre of the most populated histogram bin; ties go to the smaller bin."""
    values = np.asarray(candidates, dtype=np.float64).ravel()
    if values.size == 0:
        raise ParameterError("mode of an empty candidate list")
    bins = np.floor(values / bin_width).astype(np.int64)
    labels, counts = np.unique(bins, return_counts=True)
    return float((labels[np.argmax(counts)] + 0.5) * bin_width)


def mode_filter(values: np.ndarray, size: int, bin_width: float) -> np.ndarray:
    """Histogram mode of ``values`` over each ``size x size`` neighbourhood."""
    r = size // 2
    bins = np.floor(np.asarray(values) / bin_width).astype(np.int64)
    padded = np.pad(bins, r, mode="edge")
    m, n = bins.shape
    w = size * size
    out = np.empty((m, n), dtype=np.int64)
    step = max(1, _CHUNK_ELEMENTS // (n * w * w))
    for start in range(0, m, step):
        stop = min(m, start + step)
        block = sliding_window_view(padded[start:stop + 2 * r], (size, size))
        block = np.sort(block.reshape(stop - start, n, w), axis=-1)
        counts = (block[..., :, None] == block[..., None, :]).sum(axis=-1)
        # sorted ascending, so the first maximal count is the smallest bin
        first = np.argmax(counts, axis=-1)
        out[start:stop] = np.take_along_axis(block, first[..., None], axis=-1)[..., 0]
    return (out + 0.5) * bin_width


@functools.lru_cache(maxsize=16)
def smoothing_spline_matrix(n: int, p: float) -> np.ndarray:
    """Linear smoother of a natural cubic smoothing spline on ``0..n-1``.

    Minimises ``p * sum (y - f)^2 + (1 - p) * int f''^2``; ``p = 1`` interpolates.
    """
    if not 0 < p <= 1:
        raise ParameterError("spline smoothing parameter must lie in (0, 1]")
    lam = (1.0 - p) / p
    if n < 3 or lam == 0.0:
        out = np.eye(n)
        out.flags.writeable = False
        return out
    # unit knot spacing: Q is n x (n-2) second differences, R is the tridiagonal
    # Gram matrix of the hat functions
    Q = np.zeros((n, n - 2))
    idx = np.arange(n - 2)
    Q[idx, idx] = 1.0
    Q[idx + 1, idx] = -2.0
    Q[idx + 2, idx] = 1.0
    R = np.diag(np.full(n - 2, 2.0 / 3.0))
    R[idx[:-1], idx[:-1] + 1] = 1.0 / 6.0
    R[idx[:-1] + 1, idx[:-1]] = 1.0 / 6.0
    K = Q @ np.linalg.solve(R, Q.T)
    out = np.linalg.inv(np.eye(n) + lam * K)
    out.flags.writeable = False
    return out


def spline_smooth(field: np.ndarray, p: float) -> np.ndarray:
    """Separable smoothing: along each row, then along each column."""
    m, n = field.shape
    rows_done = field @ smoothing_spline_matrix(n, p).T
    return smoothing_spline_matrix(m, p) @ rows_done


def _fill_from_nearest_valid(field: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if mask.all() or not mask.any():
        return field
    _, (ii, jj) = ndimage.distance_transform_edt(~mask, return_indices=True)
    return field[ii, jj]


def raw_sigma(grid, opts: NoiseOptions | None = None) -> np.ndarray:
    """Per-pixel mode of inner-window MAD estimates, before spline smoothing."""
    opts = opts or NoiseOptions()
    g = as_grid(grid)
    if g.shape[0] < opts.outer or g.shape[1] < opts.outer:
        raise ShapeError(f"frame {g.shape} smaller than the {opts.outer}x{opts.outer} outer window")
    mads = mad_map(g, opts.inner)
    return mode_filter(mads, opts.outer - opts.inner + 1, opts.bin_width)


def estimate_frame_sigma(grid, mask=None, opts: NoiseOptions | None = None) -> np.ndarray:
    opts = opts or NoiseOptions()
    sigma_bar = raw_sigma(grid, opts)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != sigma_bar.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match frame {sigma_bar.shape}")
        # a pixel's estimate is trustworthy only if its whole outer window is valid
        r = opts.outer // 2
        trusted = ndimage.binary_erosion(mask, np.ones((2 * r + 1, 2 * r + 1), bool),
                                         border_value=1)
        sigma_bar = _fill_from_nearest_valid(sigma_bar, trusted if trusted.any() else mask)
    smooth = spline_smooth(sigma_bar, opts.smoothing)
    # the spline can undershoot next to sharp drops
    return np.maximum(smooth, 0.0)


def estimate_sigma(volume: LogVolume, mask=None, opts: NoiseOptions | None = None) -> SigmaMap:
    """Estimate the noise standard deviation of every frame of ``volume`` independently."""
    opts = opts or NoiseOptions()
    cols = [
        estimate_frame_sigma(volume.frame(j), mask, opts).ravel(order="F")
        for j in range(volume.frames)
    ]
    return SigmaMap(np.stack(cols, axis=1), volume.rows, volume.cols)

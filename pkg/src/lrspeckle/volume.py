"""Multi-frame containers and the forward-difference gradient operator.

A stack of ``k`` frames of size ``m x n`` is stored as an ``(m*n, k)`` matrix
whose column ``j`` is frame ``j`` flattened in column-major (Fortran) order.
The gradient operator ``P = [H1; H2]`` maps such a matrix to a
``(2*m*n, k)`` matrix holding horizontal differences above vertical ones.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ShapeError


def as_grid(values) -> np.ndarray:
    """Validate and return a single frame as a float64 ``(m, n)`` array."""
    grid = np.asarray(values, dtype=np.float64)
    if grid.ndim != 2:
        raise ShapeError(f"expected a 2-D frame, got ndim={grid.ndim}")
    if grid.shape[0] < 2 or grid.shape[1] < 2:
        raise ShapeError(f"frame must be at least 2x2, got {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ShapeError("frame contains non-finite values")
    return grid


@dataclass(frozen=True)
class LogVolume:
    """Registered log-domain stack as an ``(m*n, k)`` matrix."""

    data: np.ndarray
    rows: int
    cols: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeError(f"volume data must be 2-D, got ndim={data.ndim}")
        if data.shape[0] != self.rows * self.cols:
            raise ShapeError(
                f"volume has {data.shape[0]} rows, expected {self.rows}*{self.cols}"
            )
        if self.rows < 2 or self.cols < 2:
            raise ShapeError("frames must be at least 2x2")
        if data.shape[1] < 2:
            raise ShapeError(f"need at least 2 frames, got {data.shape[1]}")
        if not np.all(np.isfinite(data)):
            raise ShapeError("volume contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def geometry(self) -> tuple[int, int, int]:
        return self.rows, self.cols, self.frames

    def frame(self, j: int) -> np.ndarray:
        return unstack(self, j)

    def cube(self) -> np.ndarray:
        """View as an ``(m, n, k)`` array."""
        return self.data.reshape((self.rows, self.cols, self.frames), order="F")

    def with_data(self, data: np.ndarray) -> "LogVolume":
        return type(self)(data, self.rows, self.cols)


@dataclass(frozen=True)
class SigmaMap(LogVolume):
    """Per-pixel log-domain noise standard deviation, same layout as LogVolume."""

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.data < 0):
            raise ShapeError("sigma map has negative entries")


@dataclass(frozen=True)
class GradVolume:
    """``(2*m*n, k)`` matrix: horizontal gradients stacked above vertical ones."""

    data: np.ndarray
    rows: int
    cols: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != 2 * self.rows * self.cols:
            raise ShapeError(
                f"gradient data of shape {data.shape} does not match "
                f"2*{self.rows}*{self.cols} rows"
            )
        object.__setattr__(self, "data", data)

    @property
    def horizontal(self) -> np.ndarray:
        return self.data[: self.rows * self.cols]

    @property
    def vertical(self) -> np.ndarray:
        return self.data[self.rows * self.cols:]


def stack_frames(frames: Sequence) -> LogVolume:
    """Stack equally sized frames into a :class:`LogVolume`."""
    grids = [as_grid(f) for f in frames]
    if len(grids) < 2:
        raise ShapeError(f"need at least 2 frames, got {len(grids)}")
    shape = grids[0].shape
    for j, g in enumerate(grids):
        if g.shape != shape:
            raise ShapeError(f"frame {j} has shape {g.shape}, expected {shape}")
    data = np.stack([g.ravel(order="F") for g in grids], axis=1)
    return LogVolume(data, shape[0], shape[1])


def unstack(volume: LogVolume, j: int) -> np.ndarray:
    """Return frame ``j`` of ``volume`` as an ``(m, n)`` array."""
    return volume.data[:, j].reshape((volume.rows, volume.cols), order="F")


def _grad_cube(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # replicate padding: the last forward difference along each axis is 0
    gh = np.zeros_like(x)
    gv = np.zeros_like(x)
    gh[:, :-1] = x[:, 1:] - x[:, :-1]
    gv[:-1, :] = x[1:, :] - x[:-1, :]
    return gh, gv


def _grad_adjoint_cube(gh: np.ndarray, gv: np.ndarray) -> np.ndarray:
    out = np.zeros_like(gh)
    out[:, :-1] -= gh[:, :-1]
    out[:, 1:] += gh[:, :-1]
    out[:-1, :] -= gv[:-1, :]
    out[1:, :] += gv[:-1, :]
    return out


def grad_matrix(data: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Apply ``P`` to a raw ``(m*n, k)`` matrix."""
    k = data.shape[1]
    x = data.reshape((rows, cols, k), order="F")
    gh, gv = _grad_cube(x)
    return np.concatenate(
        [gh.reshape((rows * cols, k), order="F"), gv.reshape((rows * cols, k), order="F")]
    )


def grad_adjoint_matrix(data: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Apply ``P^T`` to a raw ``(2*m*n, k)`` matrix."""
    mn = rows * cols
    if data.shape[0] != 2 * mn:
        raise ShapeError(f"gradient matrix has {data.shape[0]} rows, expected {2 * mn}")
    k = data.shape[1]
    gh = data[:mn].reshape((rows, cols, k), order="F")
    gv = data[mn:].reshape((rows, cols, k), order="F")
    return _grad_adjoint_cube(gh, gv).reshape((mn, k), order="F")


def grad(volume: LogVolume) -> GradVolume:
    return GradVolume(grad_matrix(volume.data, volume.rows, volume.cols), volume.rows, volume.cols)


def grad_adjoint(g: GradVolume) -> LogVolume:
    return LogVolume(grad_adjoint_matrix(g.data, g.rows, g.cols), g.rows, g.cols)


"""Stage helpers shared by the command line and the acceptance suite.

The denoised image is the per-pixel mean of ``L`` over frames, mapped back to
intensities. Because the log of mean-one speckle has a negative mean (about
``-sigma**2 / 2`` to second order), a plain ``exp`` reads systematically
dark; :func:`reconstruct` adds ``sigma**2 / 2`` back by default.
"""
from __future__ import annotations

import numpy as np

from .errors import ParameterError, ShapeError
from .imageio import RawImage, Roi, from_log
from .volume import LogVolume, SigmaMap


def _check_depth(bit_depth: int) -> int:
    if bit_depth not in (8, 16):
        raise ParameterError(f"bit depth must be 8 or 16, got {bit_depth}")
    return 2 ** bit_depth - 1


def frame_average(volume: LogVolume, bit_depth: int = 8) -> RawImage:
    """Intensity-domain mean of the registered frames (classic frame averaging)."""
    maxval = _check_depth(bit_depth)
    mean = np.exp(volume.data).mean(axis=1).reshape(volume.rows, volume.cols, order="F")
    return RawImage(np.clip(np.rint(mean), 0, maxval), bit_depth)


def log_average(volume: LogVolume, bit_depth: int = 8) -> RawImage:
    """Mean of the registered log frames, exponentiated without bias correction."""
    _check_depth(bit_depth)
    mean = volume.data.mean(axis=1).reshape(volume.rows, volume.cols, order="F")
    return from_log(mean, bit_depth)


def reconstruct(L: LogVolume, sigma: SigmaMap | None = None, bit_depth: int = 8,
                bias_correction: bool = True) -> RawImage:
    """Collapse the low-rank component to one intensity image.

    Parameters
    ----------
    L : LogVolume
        Denoised log-domain stack.
    sigma : SigmaMap, optional
        Noise map used for the ``sigma**2 / 2`` log-bias correction. Required
        when ``bias_correction`` is true.
    bit_depth : int
        Output bit depth (8 or 16).
    bias_correction : bool
        Add the second-order log-bias of mean-one multiplicative noise.
    """
    _check_depth(bit_depth)
    mean = L.data.mean(axis=1)
    if bias_correction:
        if sigma is None:
            raise ParameterError("bias correction needs a sigma map")
        if sigma.geometry != L.geometry:
            raise ShapeError(f"sigma geometry {sigma.geometry} does not match {L.geometry}")
        mean = mean + 0.5 * (sigma.data ** 2).mean(axis=1)
    return from_log(mean.reshape(L.rows, L.cols, order="F"), bit_depth)


def valid_box(mask: np.ndarray, name: str = "valid") -> Roi:
    """Largest rectangle found by greedy shrinking that holds only valid pixels.

    Starts from the bounding box of ``mask`` and repeatedly drops the border
    row or column containing the most invalid pixels.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or not mask.any():
        raise ShapeError("mask must be 2-D with at least one valid pixel")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    top, bottom, left, right = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    while True:
        box = mask[top:bottom, left:right]
        if box.all():
            break
        bad = {
            "top": int((~box[0]).sum()), "bottom": int((~box[-1]).sum()),
            "left": int((~box[:, 0]).sum()), "right": int((~box[:, -1]).sum()),
        }
        side = max(bad, key=bad.get)
        if side == "top":
            top += 1
        elif side == "bottom":
            bottom -= 1
        elif side == "left":
            left += 1
        else:
            right -= 1
    return Roi(name, int(left), int(top), int(right - left), int(bottom - top))


def crop(img: RawImage, roi: Roi) -> RawImage:
    return RawImage(img.pixels[roi.slices()], img.bit_depth)

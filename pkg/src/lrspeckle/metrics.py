"""PSNR, SSIM and Pratt's figure of merit on integer grayscale images."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ParameterError, ShapeError
from .imageio import RawImage, Roi

# identical images: PSNR is reported as this sentinel rather than a capped number
PSNR_INF = math.inf

CSV_COLUMNS = ("image", "region", "psnr_db", "ssim", "fom")


@dataclass(frozen=True)
class MetricsReport:
    region: str
    psnr_db: float
    ssim: float
    fom: float

    def __post_init__(self):
        if not (0.0 <= self.fom <= 1.0 or math.isnan(self.fom)):
            raise ParameterError(f"FOM {self.fom} outside [0, 1]")


@dataclass(frozen=True)
class SSIMOptions:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03


@dataclass(frozen=True)
class CannyOptions:
    sigma: float = math.sqrt(2.0)
    high_percentile: float = 70.0
    low_ratio: float = 0.4


def _pair(recon: RawImage, ref: RawImage) -> tuple[np.ndarray, np.ndarray, int]:
    if recon.pixels.shape != ref.pixels.shape:
        raise ShapeError(f"image shapes differ: {recon.pixels.shape} vs {ref.pixels.shape}")
    if recon.bit_depth != ref.bit_depth:
        raise ShapeError(f"bit depths differ: {recon.bit_depth} vs {ref.bit_depth}")
    return recon.pixels.astype(np.float64), ref.pixels.astype(np.float64), ref.maxval


def psnr(recon: RawImage, ref: RawImage) -> float:
    a, b, maxval = _pair(recon, ref)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(maxval * maxval / mse)


def ssim(recon: RawImage, ref: RawImage, opts: SSIMOptions | None = None) -> float:
    """Mean SSIM over all fully contained Gaussian-weighted windows."""
    opts = opts or SSIMOptions()
    a, b, maxval = _pair(recon, ref)
    w = opts.window
    if a.shape[0] < w or a.shape[1] < w:
        raise ShapeError(f"image {a.shape} smaller than the {w}x{w} SSIM window")
    ax = np.arange(w) - (w - 1) / 2.0
    g1 = np.exp(-0.5 * (ax / opts.sigma) ** 2)
    g1 /= g1.sum()

    def filt(x):
        # separable weighted sums over valid windows only
        x = ndimage.correlate1d(x, g1, axis=0, mode="constant")
        x = ndimage.correlate1d(x, g1, axis=1, mode="constant")
        r = w // 2
        return x[r:x.shape[0] - r, r:x.shape[1] - r]

    c1 = (opts.k1 * maxval) ** 2
    c2 = (opts.k2 * maxval) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def canny(img: RawImage, opts: CannyOptions | None = None) -> np.ndarray:
    """Canny edges with percentile-based hysteresis thresholds.

    The high threshold is the ``high_percentile`` of all nonzero gradient
    magnitudes (taken before thinning); the low one is ``low_ratio`` times it.
    """
    opts = opts or CannyOptions()
    x = img.pixels.astype(np.float64)
    if opts.sigma > 0:
        x = ndimage.gaussian_filter(x, opts.sigma, mode="nearest")
    gx = ndimage.sobel(x, axis=1, mode="nearest")
    gy = ndimage.sobel(x, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    nonzero = mag[mag > 1e-12 * max(1.0, float(mag.max()))]
    if nonzero.size == 0:
        return np.zeros(x.shape, dtype=bool)

    # quantise directions to 0/45/90/135 degrees and compare along the normal
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = (np.floor((angle + 22.5) / 45.0).astype(int)) % 4
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    padded = np.pad(mag, 1, mode="constant")
    m, n = mag.shape
    keep = np.zeros_like(mag, dtype=bool)
    for s, (di, dj) in offsets.items():
        fwd = padded[1 + di:1 + di + m, 1 + dj:1 + dj + n]
        bwd = padded[1 - di:1 - di + m, 1 - dj:1 - dj + n]
        sel = sector == s
        # ">" on one side and ">=" on the other keeps exactly one pixel of a plateau pair
        keep |= sel & (mag > bwd) & (mag >= fwd)
    thin = np.where(keep, mag, 0.0)

    high = float(np.percentile(nonzero, opts.high_percentile))
    low = opts.low_ratio * high
    strong = thin >= high
    weak = thin >= low
    labels, count = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        return np.zeros(x.shape, dtype=bool)
    has_strong = np.zeros(count + 1, dtype=bool)
    has_strong[labels[strong]] = True
    has_strong[0] = False
    return has_strong[labels]


def fom(recon_edges, ref_edges, gamma: float = 1.0 / 9.0) -> float:
    """Pratt's figure of merit of ``recon_edges`` against ``ref_edges``."""
    if not gamma > 0:
        raise ParameterError("FOM scaling constant must be positive")
    recon_edges = np.asarray(recon_edges, dtype=bool)
    ref_edges = np.asarray(ref_edges, dtype=bool)
    if recon_edges.shape != ref_edges.shape:
        raise ShapeError(f"edge maps differ in shape: {recon_edges.shape} vs {ref_edges.shape}")
    n_ref = int(ref_edges.sum())
    if n_ref == 0:
        raise ParameterError("reference edge map is empty")
    n_rec = int(recon_edges.sum())
    if n_rec == 0:
        return 0.0
    dist = ndimage.distance_transform_edt(~ref_edges)
    d = dist[recon_edges]
    # alpha / (alpha + d^2) equals 1 / (1 + gamma d^2) but rounds exactly for
    # the usual gamma = 1/9 (a one-pixel offset scores 0.9, not 0.8999...)
    alpha = 1.0 / gamma
    return float(np.sum(alpha / (alpha + d * d)) / max(n_rec, n_ref))


def _crop(img: RawImage, roi: Roi) -> RawImage:
    return RawImage(img.pixels[roi.slices()], img.bit_depth)


def evaluate_region(recon: RawImage, ref: RawImage, region: str = "entire",
                    ssim_opts: SSIMOptions | None = None,
                    canny_opts: CannyOptions | None = None) -> MetricsReport:
    ref_edges = canny(ref, canny_opts)
    f = fom(canny(recon, canny_opts), ref_edges) if ref_edges.any() else math.nan
    return MetricsReport(region, psnr(recon, ref), ssim(recon, ref, ssim_opts), f)


def evaluate(recon: RawImage, ref: RawImage, rois: Sequence[Roi] = (),
             ssim_opts: SSIMOptions | None = None,
             canny_opts: CannyOptions | None = None) -> list[MetricsReport]:
    """Whole-image report followed by one report per ROI.

    FOM is NaN for a region whose reference has no detected edges.
    """
    _pair(recon, ref)
    m, n = ref.pixels.shape
    for roi in rois:
        if roi.x < 0 or roi.y < 0 or roi.x + roi.w > n or roi.y + roi.h > m:
            raise ParameterError(f"ROI {roi.name!r} lies outside the {m}x{n} image")
    reports = [evaluate_region(recon, ref, "entire", ssim_opts, canny_opts)]
    for roi in rois:
        reports.append(
            evaluate_region(_crop(recon, roi), _crop(ref, roi), roi.name, ssim_opts, canny_opts)
        )
    return reports


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.6f}"


def write_csv(rows: Sequence[tuple[str, MetricsReport]], path) -> None:
    """Write ``(image name, report)`` pairs using :data:`CSV_COLUMNS`."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for image, rep in rows:
            writer.writerow([image, rep.region, _fmt(rep.psnr_db), _fmt(rep.ssim), _fmt(rep.fom)])


def read_csv(path) -> list[tuple[str, MetricsReport]]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ParameterError(f"unexpected metrics CSV columns {reader.fieldnames}")
        return [
            (row["image"], MetricsReport(row["region"], float(row["psnr_db"]),
                                         float(row["ssim"]), float(row["fom"])))
            for row in reader
        ]

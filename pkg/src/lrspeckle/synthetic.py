"""Layered phantoms and multiplicative speckle stacks with known motion.

Random numbers come from ``numpy.random.Generator(PCG64(seed))``; frame ``j``
of a stack uses the child seed ``SeedSequence(seed).spawn(k)[j]`` for its
noise and the parent stream for the jitter, so stacks are reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, special

from .errors import ParameterError
from .imageio import RawImage
from .registration import RigidTransform, warp


@dataclass(frozen=True)
class Layer:
    """Region below ``boundary(x) = offset + amplitude * sin(2 pi freq x / n + phase)``.

    Layers are painted top to bottom; each one overrides everything below
    its boundary with ``intensity``.
    """

    offset: float
    intensity: float
    amplitude: float = 0.0
    freq: float = 1.0
    phase: float = 0.0

    def boundary(self, n: int) -> np.ndarray:
        x = np.arange(n, dtype=np.float64)
        return self.offset + self.amplitude * np.sin(2 * np.pi * self.freq * x / n + self.phase)


@dataclass(frozen=True)
class Spot:
    row: float
    col: float
    radius: float
    delta: float


@dataclass(frozen=True)
class Shadow:
    """Vertical vessel shadow: columns ``[col, col + width)`` below ``top`` scaled by ``factor``."""

    col: float
    width: float
    factor: float
    top: float = 0.0


@dataclass(frozen=True)
class PhantomSpec:
    rows: int = 128
    cols: int = 128
    background: float = 30.0
    layers: tuple[Layer, ...] = ()
    spots: tuple[Spot, ...] = ()
    shadows: tuple[Shadow, ...] = ()
    # Gaussian blur standing in for the system point-spread function
    psf_sigma: float = 1.0
    bit_depth: int = 8

    def __post_init__(self):
        maxval = 2 ** self.bit_depth - 1
        values = [self.background] + [layer.intensity for layer in self.layers]
        for v in values:
            if not 1 <= v <= maxval:
                raise ParameterError(f"phantom intensity {v} outside [1, {maxval}]")
        bounds = [layer.boundary(self.cols) for layer in self.layers]
        for upper, lower in zip(bounds, bounds[1:]):
            if np.any(lower <= upper):
                raise ParameterError("phantom layers must be ordered top to bottom without crossing")
        for shadow in self.shadows:
            if not 0 < shadow.factor <= 1:
                raise ParameterError("shadow factor must lie in (0, 1]")
        if self.psf_sigma < 0:
            raise ParameterError("psf_sigma must be >= 0")


def retina_spec(rows: int = 128, cols: int = 128) -> PhantomSpec:
    """Retina-like default phantom: wavy bands, lesions and vessel shadows."""
    r = rows / 128.0
    c = cols / 128.0
    bands = [
        (18, 120, 3, 1.0, 0.3), (28, 50, 3, 1.0, 0.3), (37, 170, 4, 1.0, 0.5),
        (46, 75, 4, 1.0, 0.5), (55, 210, 3, 1.5, 1.0), (64, 90, 3, 1.5, 1.0),
        (73, 160, 3, 1.5, 1.2), (82, 60, 2, 0.5, 0.0), (92, 130, 2, 0.5, 0.0),
        (104, 45, 2, 0.5, 0.2),
    ]
    layers = tuple(
        Layer(offset=o * r, intensity=v, amplitude=a * r, freq=f, phase=ph)
        for o, v, a, f, ph in bands
    )
    spots = (
        Spot(row=50 * r, col=40 * c, radius=5 * r, delta=50),
        Spot(row=86 * r, col=90 * c, radius=7 * r, delta=-30),
        Spot(row=68 * r, col=70 * c, radius=4 * r, delta=-50),
        Spot(row=112 * r, col=24 * c, radius=6 * r, delta=60),
    )
    shadows = (
        Shadow(col=10 * c, width=4 * c, factor=0.5, top=30 * r),
        Shadow(col=27 * c, width=3 * c, factor=0.6, top=36 * r),
        Shadow(col=48 * c, width=6 * c, factor=0.4, top=30 * r),
        Shadow(col=66 * c, width=3 * c, factor=0.55, top=40 * r),
        Shadow(col=82 * c, width=4 * c, factor=0.5, top=30 * r),
        Shadow(col=101 * c, width=3 * c, factor=0.6, top=35 * r),
        Shadow(col=115 * c, width=5 * c, factor=0.45, top=30 * r),
    )
    return PhantomSpec(
        rows=rows, cols=cols, background=25.0, layers=layers, spots=spots, shadows=shadows
    )


def phantom(spec: PhantomSpec) -> RawImage:
    """Render ``spec`` deterministically."""
    m, n = spec.rows, spec.cols
    img = np.full((m, n), float(spec.background))
    rows = np.arange(m, dtype=np.float64)[:, None]
    for layer in spec.layers:
        below = rows >= layer.boundary(n)[None, :]
        img[below] = layer.intensity
    yy, xx = np.mgrid[0:m, 0:n]
    for spot in spec.spots:
        inside = (yy - spot.row) ** 2 + (xx - spot.col) ** 2 <= spot.radius ** 2
        img[inside] += spot.delta
    for shadow in spec.shadows:
        band = (xx >= shadow.col) & (xx < shadow.col + shadow.width) & (yy >= shadow.top)
        img[band] *= shadow.factor
    if spec.psf_sigma > 0:
        img = ndimage.gaussian_filter(img, spec.psf_sigma, mode="nearest")
    maxval = 2 ** spec.bit_depth - 1
    return RawImage(np.clip(np.rint(img), 1, maxval), spec.bit_depth)


@dataclass(frozen=True)
class SpeckleSpec:
    frames: int = 8
    looks: float = 4.0
    max_translation: float = 5.0
    max_rotation: float = 2.0
    seed: int = 0
    # frame that keeps the identity transform; None means no frame is special
    reference_index: int | None = None
    # pixels cropped from every side after warping, so frames hold no
    # replicated border content; the truth must be 2*margin larger than a frame
    margin: int = 0

    def __post_init__(self):
        if self.frames < 2:
            raise ParameterError("speckle stack needs at least 2 frames")
        if not self.looks > 0:
            raise ParameterError("gamma shape (looks) must be positive")
        if self.max_translation < 0 or self.max_rotation < 0:
            raise ParameterError("jitter bounds must be nonnegative")
        if self.margin < 0:
            raise ParameterError("margin must be nonnegative")


def log_gamma_sigma(looks: float) -> float:
    """Standard deviation of ``log X`` for ``X ~ Gamma(looks, scale=1/looks)``."""
    return float(np.sqrt(special.polygamma(1, looks)))


def log_gamma_mean(looks: float) -> float:
    return float(special.digamma(looks) - np.log(looks))


@dataclass
class SpeckleStack:
    frames: list[RawImage]
    transforms: list[RigidTransform]
    sigma: float
    clean: list[np.ndarray] = field(repr=False, default_factory=list)


def speckle_stack(truth: RawImage, spec: SpeckleSpec) -> SpeckleStack:
    """Warp ``truth`` by random rigid jitter and multiply by mean-1 Gamma noise.

    Frames are cropped by ``spec.margin`` on every side after warping; the
    returned transforms are expressed in cropped-frame coordinates (the crop
    is symmetric, so the rotation centre is unchanged).
    """
    ss = np.random.SeedSequence(spec.seed)
    jitter_rng = np.random.Generator(np.random.PCG64(ss))
    children = ss.spawn(spec.frames)
    base = truth.pixels.astype(np.float64)
    c = spec.margin
    if min(base.shape) <= 2 * c + 2:
        raise ParameterError(f"margin {c} too large for a {base.shape} truth image")
    crop = (slice(c, base.shape[0] - c), slice(c, base.shape[1] - c))
    frames, transforms, clean = [], [], []
    for j in range(spec.frames):
        dx, dy = jitter_rng.uniform(-spec.max_translation, spec.max_translation, size=2)
        theta = jitter_rng.uniform(-spec.max_rotation, spec.max_rotation)
        t = RigidTransform(float(dx), float(dy), float(theta))
        if j == spec.reference_index:
            t = RigidTransform()
        warped = warp(base, t)[0][crop]
        noise_rng = np.random.Generator(np.random.PCG64(children[j]))
        noise = noise_rng.gamma(spec.looks, 1.0 / spec.looks, size=warped.shape)
        px = np.clip(np.rint(warped * noise), 0, truth.maxval)
        frames.append(RawImage(px, truth.bit_depth))
        transforms.append(t)
        clean.append(warped)
    return SpeckleStack(frames, transforms, log_gamma_sigma(spec.looks), clean)

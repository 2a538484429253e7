"""Multi-frame speckle reduction for OCT-like image stacks.

Frames are log transformed, rigidly registered, given a per-pixel noise
level estimate, and split into a low-rank, gradient-sparse component ``L``
and a bounded noise component ``N`` by an augmented Lagrangian solver.
"""
from importlib.metadata import PackageNotFoundError, version as _version

from .errors import (
    CorruptHeaderError,
    DivergenceError,
    ImageFormatError,
    ManifestError,
    ParameterError,
    RegistrationError,
    ShapeError,
    SolverError,
    SpeckleError,
    TruncatedDataError,
)
from .imageio import DatasetManifest, RawImage, Roi, from_log, read_image, to_log, write_image
from .metrics import MetricsReport, evaluate, fom, psnr, ssim
from .noise import NoiseOptions, estimate_sigma
from .registration import RegistrationOptions, RigidTransform, register_pair, register_stack, warp
from .solver import SolveReport, SolverParams, SolverState, denoise, svt, soft_threshold
from .volume import GradVolume, LogVolume, SigmaMap, grad, grad_adjoint, stack_frames

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source checkout
    __version__ = "0.1.0"

__all__ = [
    "CorruptHeaderError", "DatasetManifest", "DivergenceError", "GradVolume",
    "ImageFormatError", "LogVolume", "ManifestError", "MetricsReport", "NoiseOptions",
    "ParameterError", "RawImage", "RegistrationError", "RegistrationOptions",
    "RigidTransform", "Roi", "ShapeError", "SigmaMap", "SolveReport", "SolverError",
    "SolverParams", "SolverState", "SpeckleError", "TruncatedDataError", "denoise",
    "estimate_sigma", "evaluate", "fom", "from_log", "grad", "grad_adjoint", "psnr",
    "read_image", "register_pair", "register_stack", "soft_threshold", "ssim",
    "stack_frames", "svt", "to_log", "warp", "write_image",
]

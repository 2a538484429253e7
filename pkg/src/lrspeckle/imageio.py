"""Grayscale image I/O, the log transform, and dataset manifests.

PGM (binary ``P5``) is the canonical interchange format: maxval 255 gives
8-bit images, maxval 65535 gives 16-bit images with big-endian samples.
8/16-bit grayscale PNG is read and written through Pillow.

Manifest schema (JSON)::

    {
      "frames": ["frame_00.pgm", "frame_01.pgm", ...],   # >= 2, distinct
      "reference": "truth.pgm",                           # optional
      "rois": [{"name": "layer", "x": 10, "y": 20, "w": 30, "h": 40}]  # optional
    }

Relative paths are resolved against the manifest's directory. ``x``/``w``
index columns, ``y``/``h`` index rows.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    CorruptHeaderError,
    ImageFormatError,
    ManifestError,
    ParameterError,
    TruncatedDataError,
)
from .volume import as_grid

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


@dataclass(frozen=True)
class RawImage:
    pixels: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        if self.bit_depth not in (8, 16):
            raise ParameterError(f"bit depth must be 8 or 16, got {self.bit_depth}")
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ParameterError(f"image must be 2-D, got ndim={px.ndim}")
        if px.size and (px.min() < 0 or px.max() > self.maxval):
            raise ParameterError(
                f"pixel values must lie in [0, {self.maxval}] for {self.bit_depth}-bit images"
            )
        dtype = np.uint8 if self.bit_depth == 8 else np.uint16
        object.__setattr__(self, "pixels", px.astype(dtype))

    @property
    def maxval(self) -> int:
        return 2 ** self.bit_depth - 1

    @property
    def rows(self) -> int:
        return self.pixels.shape[0]

    @property
    def cols(self) -> int:
        return self.pixels.shape[1]


def _read_pgm(data: bytes) -> RawImage:
    pos = 2
    fields = []
    for _ in range(3):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise CorruptHeaderError("PGM header ended early")
        try:
            fields.append(int(m.group(1)))
        except ValueError:
            raise CorruptHeaderError(f"bad PGM header field {m.group(1)!r}") from None
        pos = m.end()
    width, height, maxval = fields
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise CorruptHeaderError("missing whitespace after PGM header")
    pos += 1
    if width <= 0 or height <= 0:
        raise CorruptHeaderError(f"bad PGM size {width}x{height}")
    if maxval == 255:
        bit_depth, dtype = 8, np.dtype(np.uint8)
    elif maxval == 65535:
        bit_depth, dtype = 16, np.dtype(">u2")
    else:
        raise ImageFormatError(f"unsupported PGM maxval {maxval} (need 255 or 65535)")
    nbytes = width * height * dtype.itemsize
    raster = data[pos:pos + nbytes]
    if len(raster) < nbytes:
        raise TruncatedDataError(f"PGM raster has {len(raster)} of {nbytes} bytes")
    pixels = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return RawImage(pixels.astype(np.uint8 if bit_depth == 8 else np.uint16), bit_depth)


def _read_png(path: Path) -> RawImage:
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "L":
                return RawImage(np.array(im, dtype=np.uint8), 8)
            if mode in ("I;16", "I;16B", "I;16L"):
                return RawImage(np.array(im, dtype=np.uint16), 16)
            if mode == "I" and im.info.get("bitdepth", 16) == 16:
                # Pillow decodes some 16-bit grayscale PNGs to 32-bit mode "I"
                arr = np.array(im, dtype=np.int64)
                if arr.min() >= 0 and arr.max() <= 65535:
                    return RawImage(arr.astype(np.uint16), 16)
            raise ImageFormatError(f"unsupported PNG mode {mode!r}; need 8/16-bit grayscale")
    except OSError as exc:
        raise TruncatedDataError(f"cannot decode PNG {path}: {exc}") from exc


def read_image(path) -> RawImage:
    """Read an 8/16-bit grayscale PGM (P5) or PNG file."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"P5":
        return _read_pgm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _read_png(path)
    if len(data) >= 2 and data[:1] == b"P" and data[1:2] in b"1234567":
        raise ImageFormatError(f"{path}: only binary greyscale PGM (P5) is supported")
    raise ImageFormatError(f"{path}: unrecognised image format")


def write_image(img: RawImage, path, format: str | None = None) -> None:
    """Write ``img`` as PGM or PNG. Format defaults to the file suffix."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".") or "pgm").lower()
    if fmt == "pgm":
        header = f"P5\n{img.cols} {img.rows}\n{img.maxval}\n".encode("ascii")
        if img.bit_depth == 8:
            raster = img.pixels.astype(np.uint8).tobytes()
        else:
            raster = img.pixels.astype(">u2").tobytes()
        path.write_bytes(header + raster)
    elif fmt == "png":
        if img.bit_depth == 8:
            im = Image.fromarray(img.pixels.astype(np.uint8))
        else:
            im = Image.fromarray(img.pixels.astype(np.uint16))
        im.save(path, format="PNG")
    else:
        raise ImageFormatError(f"cannot write format {fmt!r}; use 'pgm' or 'png'")


def to_log(img: RawImage, floor: float = 1.0) -> np.ndarray:
    """Natural log of pixel intensities, clamped from below at ``floor``."""
    if not floor >= 1:
        raise ParameterError(f"log floor must be >= 1, got {floor}")
    return np.log(np.maximum(img.pixels.astype(np.float64), floor))


def from_log(grid, bit_depth: int = 8) -> RawImage:
    """Exponentiate, round and clamp a log-domain frame back to integer pixels."""
    g = as_grid(grid)
    maxval = 2 ** bit_depth - 1
    # clip before exp so huge log values cannot overflow
    px = np.rint(np.exp(np.minimum(g, np.log(maxval) + 1.0)))
    return RawImage(np.clip(px, 0, maxval), bit_depth)


@dataclass(frozen=True)
class Roi:
    name: str
    x: int
    y: int
    w: int
    h: int

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)


@dataclass
class DatasetManifest:
    frames: list[Path]
    reference: Path | None = None
    rois: list[Roi] = field(default_factory=list)

    def __post_init__(self):
        self.frames = [Path(p) for p in self.frames]
        if len(self.frames) < 2:
            raise ManifestError(f"manifest needs at least 2 frames, got {len(self.frames)}")
        if len(set(self.frames)) != len(self.frames):
            raise ManifestError("manifest frame paths must be distinct")
        if self.reference is not None:
            self.reference = Path(self.reference)

    def to_dict(self, relative_to=None) -> dict:
        def rel(p: Path) -> str:
            if relative_to is not None:
                try:
                    return str(p.relative_to(relative_to))
                except ValueError:
                    pass
            return str(p)

        out = {"frames": [rel(p) for p in self.frames]}
        if self.reference is not None:
            out["reference"] = rel(self.reference)
        if self.rois:
            out["rois"] = [vars(r).copy() for r in self.rois]
        return out


def _parse_roi(i: int, entry) -> Roi:
    if not isinstance(entry, dict):
        raise ManifestError(f"rois[{i}]: expected an object, got {type(entry).__name__}")
    missing = [k for k in ("name", "x", "y", "w", "h") if k not in entry]
    if missing:
        raise ManifestError(f"rois[{i}]: missing field(s) {', '.join(missing)}")
    for k in ("x", "y", "w", "h"):
        v = entry[k]
        if not isinstance(v, int) or isinstance(v, bool):
            raise ManifestError(f"rois[{i}].{k}: expected an integer, got {v!r}")
    if entry["x"] < 0 or entry["y"] < 0:
        raise ManifestError(f"rois[{i}]: x and y must be >= 0")
    if entry["w"] <= 0 or entry["h"] <= 0:
        raise ManifestError(f"rois[{i}]: w and h must be > 0")
    return Roi(str(entry["name"]), entry["x"], entry["y"], entry["w"], entry["h"])


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ManifestError(f"{path}: top level must be an object")
    unknown = set(raw) - {"frames", "reference", "rois"}
    if unknown:
        raise ManifestError(f"{path}: unknown key(s) {', '.join(sorted(unknown))}")
    frames = raw.get("frames")
    if not isinstance(frames, list) or not all(isinstance(f, str) for f in frames):
        raise ManifestError(f"{path}: 'frames' must be a list of paths")
    base = path.parent
    reference = raw.get("reference")
    if reference is not None and not isinstance(reference, str):
        raise ManifestError(f"{path}: 'reference' must be a path string")
    rois = raw.get("rois", [])
    if not isinstance(rois, list):
        raise ManifestError(f"{path}: 'rois' must be a list")
    return DatasetManifest(
        frames=[base / f for f in frames],
        reference=None if reference is None else base / reference,
        rois=[_parse_roi(i, r) for i, r in enumerate(rois)],
    )


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.write_text(json.dumps(manifest.to_dict(relative_to=path.parent), indent=2) + "\n")

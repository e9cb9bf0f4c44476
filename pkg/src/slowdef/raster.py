"""Grid value types and the FGR / PGM file formats.

FGR layout: one ASCII header line ``FGR1 <rows> <cols> <pixel_spacing_m>\\n``
followed by ``rows * cols`` little-endian float32 values in row-major order.
NaN marks a missing (incoherent) pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, DomainError, FormatError, TruncationError

MAGIC = "FGR1"
_MAX_HEADER = 256


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    """2D raster of phase (radians) or displacement (meters) with a validity mask.

    ``mask`` is True where the pixel is valid. Arrays are made read-only on
    construction.
    """

    values: np.ndarray
    mask: np.ndarray
    pixel_spacing_m: float

    def __post_init__(self):
        values = np.array(self.values, copy=True)
        if values.dtype.kind != "f":
            values = values.astype(np.float64)
        mask = np.array(self.mask, dtype=bool, copy=True)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DimensionError(f"grid values must be a non-empty 2D array, got shape {values.shape}")
        if mask.shape != values.shape:
            raise DimensionError(f"mask shape {mask.shape} != values shape {values.shape}")
        if not (self.pixel_spacing_m > 0 and math.isfinite(self.pixel_spacing_m)):
            raise DomainError(f"pixel_spacing_m must be positive, got {self.pixel_spacing_m}")
        values[~mask] = 0.0
        values.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "pixel_spacing_m", float(self.pixel_spacing_m))

    @classmethod
    def from_array(cls, values, pixel_spacing_m: float, mask=None) -> "PhaseGrid":
        """Build a grid, treating NaN entries as masked unless a mask is given."""
        values = np.asarray(values)
        if mask is None:
            mask = np.isfinite(values)
        return cls(np.where(mask, values, 0.0).astype(values.dtype if values.dtype.kind == "f" else np.float64),
                   mask, pixel_spacing_m)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values, mask=None) -> "PhaseGrid":
        return PhaseGrid(values, self.mask if mask is None else mask, self.pixel_spacing_m)

    def as_nan_array(self) -> np.ndarray:
        out = np.array(self.values, dtype=np.float64)
        out[~self.mask] = np.nan
        return out

    def equals(self, other: "PhaseGrid") -> bool:
        """Bit-exact comparison of values, mask and spacing."""
        return (
            self.shape == other.shape
            and self.pixel_spacing_m == other.pixel_spacing_m
            and np.array_equal(self.mask, other.mask)
            and self.values.dtype == other.values.dtype
            and self.values.tobytes() == other.values.tobytes()
        )


@dataclass(frozen=True, eq=False)
class GrayImage:
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2:
            raise DimensionError(f"gray image must be 2D, got shape {pixels.shape}")
        if pixels.size and (pixels.min() < 0 or pixels.max() > 255):
            raise DomainError("gray pixels must lie in [0, 255]")
        pixels = pixels.astype(np.uint8)
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)

    @property
    def rows(self) -> int:
        return self.pixels.shape[0]

    @property
    def cols(self) -> int:
        return self.pixels.shape[1]


def _parse_header(line: str) -> tuple[int, int, float]:
    parts = line.split()
    if not parts or parts[0] != MAGIC:
        raise FormatError(f"magic: expected {MAGIC!r}, got {parts[0] if parts else ''!r}")
    if len(parts) != 4:
        raise FormatError(f"header: expected 4 fields, got {len(parts)}")
    fields = {}
    for name, text, conv in (("rows", parts[1], int), ("cols", parts[2], int),
                             ("pixel_spacing_m", parts[3], float)):
        try:
            fields[name] = conv(text)
        except ValueError:
            raise FormatError(f"{name}: cannot parse {text!r}") from None
    for name in ("rows", "cols"):
        if fields[name] <= 0:
            raise FormatError(f"{name}: must be positive, got {fields[name]}")
    spacing = fields["pixel_spacing_m"]
    if not (spacing > 0 and math.isfinite(spacing)):
        raise FormatError(f"pixel_spacing_m: must be positive, got {parts[3]}")
    return fields["rows"], fields["cols"], spacing


def read_fgr(path) -> PhaseGrid:
    data = Path(path).read_bytes()
    newline = data.find(b"\n", 0, _MAX_HEADER)
    if newline < 0:
        raise FormatError("header: no newline-terminated FGR1 header found")
    try:
        header = data[:newline].decode("ascii")
    except UnicodeDecodeError:
        raise FormatError("header: not ASCII") from None
    rows, cols, spacing = _parse_header(header)
    payload = data[newline + 1:]
    need = rows * cols * 4
    if len(payload) < need:
        raise TruncationError(f"payload has {len(payload)} bytes, expected {need}")
    values = np.frombuffer(payload[:need], dtype="<f4").reshape(rows, cols).astype(np.float32)
    mask = ~np.isnan(values)
    values = np.where(mask, values, np.float32(0.0))
    return PhaseGrid(values, mask, spacing)


def write_fgr(grid: PhaseGrid, path) -> None:
    out = np.asarray(grid.values, dtype="<f4").copy()
    out[~grid.mask] = np.nan
    header = f"{MAGIC} {grid.rows} {grid.cols} {grid.pixel_spacing_m!r}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(out.tobytes())


def to_gray(grid: PhaseGrid) -> GrayImage:
    """Map wrapped phase [-pi, pi) linearly onto [0, 255]; masked pixels become 0."""
    v = np.asarray(grid.values, dtype=np.float64)
    valid = grid.mask
    bad = valid & ~((v >= -np.pi) & (v < np.pi))
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DomainError(f"pixel ({r}, {c}) value {v[r, c]!r} outside [-pi, pi)")
    scaled = 255.0 * (v + np.pi) / (2.0 * np.pi)
    # round half away from zero; scaled is non-negative
    pixels = np.floor(scaled + 0.5)
    pixels = np.clip(pixels, 0, 255)
    pixels[~valid] = 0
    return GrayImage(pixels.astype(np.uint8))


def write_pgm(image: GrayImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.cols} {image.rows}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image.pixels, dtype=np.uint8).tobytes())


def read_pgm(path) -> GrayImage:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    if tokens[0] != "P5" or tokens[3] != "255":
        raise FormatError(f"unsupported PGM header {tokens}")
    cols, rows = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1:pos + 1 + rows * cols], dtype=np.uint8)
    if pixels.size < rows * cols:
        raise TruncationError("PGM payload truncated")
    return GrayImage(pixels.reshape(rows, cols))

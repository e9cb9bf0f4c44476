"""Whole-image detection: tiling, probability maps, wrap-gain ensembles, flags."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .classify.network import PATCH_SIZE
from .errors import ConfigError, DimensionError, DomainError, SlowdefError
from .raster import GrayImage, PhaseGrid, to_gray
from .rewrap import C_BAND_WAVELENGTH_M, WrapParams, displacement_to_wrapped

STRIDE = 28
KERNEL_SIZE = 20
KERNEL_SIGMA = 5.0


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    values: np.ndarray
    date: object = None
    mu: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DimensionError(f"probability map must be 2D, got {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise DomainError("probabilities must lie in [0, 1]")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    values: np.ndarray
    gains: tuple
    maps: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class FlagResult:
    flagged: bool
    peak: tuple
    value: float


class ClassifierFailure(SlowdefError):
    def __init__(self, message, row_offset, col_offset):
        super().__init__(f"{message} (patch at row {row_offset}, col {col_offset})")
        self.row_offset, self.col_offset = row_offset, col_offset


def _gaussian_1d(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-ax**2 / (2.0 * sigma**2))
    return g / g.sum()


def gaussian_kernel(size: int = KERNEL_SIZE, sigma: float = KERNEL_SIGMA) -> np.ndarray:
    """Rotationally symmetric Gaussian, size x size, normalised to unit sum."""
    g = _gaussian_1d(size, sigma)
    return np.outer(g, g)


def smooth(field, size: int = KERNEL_SIZE, sigma: float = KERNEL_SIGMA) -> np.ndarray:
    """Correlate with ``gaussian_kernel`` under edge replication.

    The kernel is separable, so this runs as two 1D passes.
    """
    g = _gaussian_1d(size, sigma)
    out = ndimage.correlate1d(np.asarray(field, dtype=np.float64), g, axis=0, mode="nearest")
    return ndimage.correlate1d(out, g, axis=1, mode="nearest")


def _offsets(n: int, size: int = PATCH_SIZE, stride: int = STRIDE):
    offs = list(range(0, n - size + 1, stride))
    if offs[-1] != n - size:
        offs.append(n - size)
    return offs


def _pad_to_patch(pixels):
    rows, cols = pixels.shape
    pr, pc = max(0, PATCH_SIZE - rows), max(0, PATCH_SIZE - cols)
    if pr or pc:
        pixels = np.pad(pixels, ((0, pr), (0, pc)), mode="edge")
    return pixels


def tile(image: GrayImage):
    """Overlapping 224x224 patches at a 28-pixel stride, last row/col clamped to the edge.

    Images smaller than a patch are edge-replicated up to 224 first.
    Returns a list of (patch, row_offset, col_offset) in row-major offset order.
    """
    pixels = _pad_to_patch(np.asarray(image.pixels))
    rows, cols = pixels.shape
    return [(pixels[r:r + PATCH_SIZE, c:c + PATCH_SIZE], r, c)
            for r in _offsets(rows) for c in _offsets(cols)]


def _predict(classifier, patches, offsets):
    try:
        if hasattr(classifier, "predict_batch"):
            probs = np.asarray(classifier.predict_batch(patches), dtype=np.float64)
        else:
            probs = np.array([float(classifier(p)) for p in patches])
    except SlowdefError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with patch location
        raise ClassifierFailure(f"classifier failed: {exc}", *offsets[0]) from exc
    if probs.shape != (len(patches),):
        raise ClassifierFailure(f"classifier returned shape {probs.shape}", *offsets[0])
    bad = ~((probs >= 0.0) & (probs <= 1.0))
    if bad.any():
        i = int(np.argmax(bad))
        raise ClassifierFailure(f"classifier returned {probs[i]!r}", *offsets[i])
    return probs


def merge_patch_probabilities(shape, probs, offsets, smoothed: bool = True) -> np.ndarray:
    """Paint each patch probability over its footprint, average by coverage, smooth."""
    acc = np.zeros(shape, dtype=np.float64)
    cnt = np.zeros(shape, dtype=np.float64)
    for p, (r, c) in zip(probs, offsets):
        acc[r:r + PATCH_SIZE, c:c + PATCH_SIZE] += p
        cnt[r:r + PATCH_SIZE, c:c + PATCH_SIZE] += 1.0
    avg = acc / cnt
    if smoothed:
        avg = smooth(avg)
    return np.clip(avg, 0.0, 1.0)


def probability_maps(images, classifier, dates=None, gains=None) -> list[ProbabilityMap]:
    """Probability maps for several images with a single batched classifier call."""
    images = list(images)
    all_patches, spans, metas = [], [], []
    for image in images:
        tiles = tile(image)
        spans.append((len(all_patches), len(all_patches) + len(tiles)))
        all_patches.extend(t[0] for t in tiles)
        metas.append([(t[1], t[2]) for t in tiles])
    offsets_flat = [o for m in metas for o in m]
    probs = _predict(classifier, np.stack(all_patches), offsets_flat) if all_patches else np.empty(0)
    out = []
    for k, (image, (a, b), offs) in enumerate(zip(images, spans, metas)):
        padded_shape = _pad_to_patch(np.zeros((image.rows, image.cols), np.uint8)).shape
        merged = merge_patch_probabilities(padded_shape, probs[a:b], offs)
        out.append(ProbabilityMap(merged[:image.rows, :image.cols],
                                  None if dates is None else dates[k],
                                  None if gains is None else gains[k]))
    return out


def probability_map(image: GrayImage, classifier, date=None, mu=None) -> ProbabilityMap:
    return probability_maps([image], classifier, [date], [mu])[0]


def _validate_gains(gains):
    n = len(gains)
    expected = [2**i for i in range(n)]
    if n == 0 or sorted(gains) != expected:
        raise ConfigError(f"ensemble gains must be exactly {{1, 2, ..., 2^(N-1)}}, got {sorted(gains)}")


def ensemble(maps) -> EnsembleResult:
    """Pixel-wise mean over maps at wrap gains 1, 2, 4, ..., 2^(N-1).

    ``maps`` is a dict gain -> map or a sequence of ProbabilityMaps carrying
    ``mu``. Summation runs in ascending gain order, so the result does not
    depend on the input order.
    """
    if isinstance(maps, dict):
        by_gain = {int(g): m for g, m in maps.items()}
    else:
        by_gain = {}
        for m in maps:
            if m.mu is None or int(m.mu) in by_gain:
                raise ConfigError("each map needs a distinct wrap gain mu")
            by_gain[int(m.mu)] = m
    _validate_gains(list(by_gain))
    gains = tuple(sorted(by_gain))
    arrays = [np.asarray(getattr(by_gain[g], "values", by_gain[g]), dtype=np.float64) for g in gains]
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise DimensionError("ensemble maps differ in shape")
    total = np.zeros(shape)
    for a in arrays:
        total += a
    return EnsembleResult(total / len(arrays), gains, by_gain)


def flag(prob, threshold: float = 0.5, region=None) -> FlagResult:
    """Strict ``max > threshold`` test over the map or a region of it.

    ``region`` is a boolean mask or an iterable of (row, col) pixels. Ties for
    the maximum resolve to the smallest (row, col).
    """
    if not 0.0 < threshold < 1.0:
        raise DomainError(f"threshold must lie in (0, 1), got {threshold}")
    values = np.asarray(getattr(prob, "values", prob), dtype=np.float64)
    if region is None:
        sel = np.ones(values.shape, bool)
    else:
        region_arr = np.asarray(region)
        if region_arr.dtype == bool and region_arr.shape == values.shape:
            sel = region_arr
        else:
            sel = np.zeros(values.shape, bool)
            for r, c in region:
                if not (0 <= r < values.shape[0] and 0 <= c < values.shape[1]):
                    raise DomainError(f"region pixel ({r}, {c}) outside map {values.shape}")
                sel[r, c] = True
    if not sel.any():
        raise DomainError("empty region")
    masked = np.where(sel, values, -np.inf)
    k = int(np.argmax(masked))
    peak = divmod(k, values.shape[1])
    value = float(values[peak])
    return FlagResult(value > threshold, (int(peak[0]), int(peak[1])), value)


def wrapped_gray(disp: PhaseGrid, mu: int, tau: float = 0.0,
                 wavelength_m: float = C_BAND_WAVELENGTH_M) -> GrayImage:
    return to_gray(displacement_to_wrapped(disp, WrapParams(mu, tau, wavelength_m)))


@dataclass
class TimeseriesResult:
    dates: list
    gains: tuple
    points: dict
    # point -> gain -> list of probabilities, one per date
    point_probabilities: dict
    # point -> list of ensemble probabilities, one per date (None when not ensembled)
    ensemble_series: dict | None
    # point -> first date with ensemble probability > threshold, or None
    first_crossing: dict
    # point -> gain -> first date with P > threshold, or None
    first_crossing_by_gain: dict

    def rows(self):
        """(date, point, gain, probability) records."""
        for i, d in enumerate(self.dates):
            for name in self.points:
                for g in self.gains:
                    yield d, name, g, self.point_probabilities[name][g][i]


def _first_crossing(dates, series, threshold):
    for d, v in zip(dates, series):
        if v > threshold:
            return d
    return None


def run_timeseries(stack, gains=(1, 2, 4, 8), classifier=None, points=None, *,
                   wavelength_m: float = C_BAND_WAVELENGTH_M, threshold: float = 0.5,
                   combine: bool = True, on_map=None) -> TimeseriesResult:
    """Rewrap and classify each epoch of a cumulative displacement stack.

    ``stack`` is a sequence of (date, PhaseGrid) with strictly increasing
    dates; ``points`` maps names to (row, col). ``on_map(date, gain, map)`` is
    called for every per-gain probability map.
    """
    if classifier is None:
        from .classify.baseline import BaselineClassifier
        classifier = BaselineClassifier()
    stack = list(stack)
    points = dict(points or {})
    gains = tuple(int(g) for g in gains)
    if combine:
        _validate_gains(list(gains))
    dates = [d for d, _ in stack]
    if any(b <= a for a, b in zip(dates, dates[1:])):
        raise DomainError("stack dates must be strictly increasing")
    if stack:
        rows, cols = stack[0][1].shape
        for name, (r, c) in points.items():
            if not (0 <= r < rows and 0 <= c < cols):
                raise DomainError(f"point {name}=({r}, {c}) outside grid {rows}x{cols}")
    per_point = {name: {g: [] for g in gains} for name in points}
    ens = {name: [] for name in points} if combine else None
    for date, grid in stack:
        images = [wrapped_gray(grid, g, 0.0, wavelength_m) for g in gains]
        maps = probability_maps(images, classifier, [date] * len(gains), list(gains))
        for g, pm in zip(gains, maps):
            if on_map is not None:
                on_map(date, g, pm)
            for name, (r, c) in points.items():
                per_point[name][g].append(float(pm.values[r, c]))
        if combine:
            mean = ensemble(maps)
            if on_map is not None:
                on_map(date, "mean", ProbabilityMap(mean.values, date, None))
            for name, (r, c) in points.items():
                ens[name].append(float(mean.values[r, c]))
    first = {name: _first_crossing(dates, ens[name], threshold) if combine else None for name in points}
    first_by_gain = {name: {g: _first_crossing(dates, per_point[name][g], threshold) for g in gains}
                     for name in points}
    return TimeseriesResult(dates, gains, points, per_point, ens, first, first_by_gain)


def parse_points(text: str) -> dict:
    """Parse ``"A=r,c;B=r,c"`` into {"A": (r, c), "B": (r, c)}."""
    out = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        name, _, coords = part.partition("=")
        try:
            r, c = (int(v) for v in coords.split(","))
        except ValueError:
            raise ConfigError(f"bad point specification {part!r}; expected NAME=row,col") from None
        out[name.strip()] = (r, c)
    if not out:
        raise ConfigError("no points given")
    return out


def is_power_of_two_set(gains) -> bool:
    return len(gains) > 0 and sorted(gains) == [2**i for i in range(len(gains))]

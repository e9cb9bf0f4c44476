"""Synthetic interferogram components and the composed evaluation dataset.

Components (all in meters of line-of-sight displacement or delay):

* deformation from a Mogi point pressure source,
* stratified delay, linear in the elevation of a DEM,
* turbulent delay, a Gaussian random field with exponential covariance
  ``sigma2_max * exp(-d / efold)``.

The dataset is the cartesian product depth x incidence x volume x (alpha, beta)
composed as ``X = D + alpha * S + beta * T``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft

from .errors import DimensionError, DomainError, NumericalError
from .raster import PhaseGrid, write_fgr

POISSON_RATIO = 0.25
# dense factorization limit for turbulent_cholesky (pixels)
CHOLESKY_MAX_PIXELS = 4096
# delay per km of elevation above the scene minimum; negative so a hill
# co-located with an uplift source partly masks it
STRAT_COEFF_M_PER_KM = -0.01

PAPER_DEPTHS_M = (3000.0, 4000.0, 5000.0)
PAPER_INCIDENCES_DEG = (1.0, 23.0, 44.0)
PAPER_LOG10_VOLUMES = (5.0, 5.5, 6.0, 6.5, 7.0)
PAPER_WEIGHT_LEVELS = (0.0, 0.5, 1.0)

MANIFEST_COLUMNS = [
    "item_id", "depth_m", "incidence_deg", "log10_volume", "alpha", "beta", "seed",
    "max_displacement_m", "path", "source_row", "source_col",
]


@dataclass(frozen=True)
class SourceParams:
    depth_m: float
    volume_change_m3: float
    incidence_deg: float
    source_row: float
    source_col: float
    look_azimuth_deg: float = 90.0

    def __post_init__(self):
        if not self.depth_m > 0:
            raise DomainError(f"depth_m must be positive, got {self.depth_m}")
        if not 0.0 <= self.incidence_deg < 90.0:
            raise DomainError(f"incidence_deg must lie in [0, 90), got {self.incidence_deg}")


@dataclass(frozen=True)
class AtmosphereParams:
    sigma2_max_mm2: float = 7.5
    efold_km: float = 8.0
    strat_coeff_m_per_km: float = STRAT_COEFF_M_PER_KM
    dem: PhaseGrid | None = None

    def __post_init__(self):
        if not self.sigma2_max_mm2 > 0:
            raise DomainError(f"sigma2_max_mm2 must be positive, got {self.sigma2_max_mm2}")
        if not self.efold_km > 0:
            raise DomainError(f"efold_km must be positive, got {self.efold_km}")

    def covariance_mm2(self, distance_km):
        return self.sigma2_max_mm2 * np.exp(-np.asarray(distance_km, dtype=np.float64) / self.efold_km)


@dataclass(frozen=True)
class CompositionWeights:
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise DomainError(f"composition weights must be non-negative, got ({self.alpha}, {self.beta})")


def _check_dims(rows, cols, pixel_spacing_m):
    if int(rows) < 1 or int(cols) < 1:
        raise DimensionError(f"grid dimensions must be positive, got {rows}x{cols}")
    if not pixel_spacing_m > 0:
        raise DomainError(f"pixel_spacing_m must be positive, got {pixel_spacing_m}")


def mogi_los(params: SourceParams, rows: int, cols: int, pixel_spacing_m: float) -> PhaseGrid:
    """Line-of-sight displacement (m) of a Mogi source in an elastic half-space.

    Positive values are motion towards the satellite for uplift at zero
    incidence. Rows increase southwards, columns eastwards.
    """
    _check_dims(rows, cols, pixel_spacing_m)
    d = params.depth_m
    c = (1.0 - POISSON_RATIO) * params.volume_change_m3 / np.pi
    r_idx, c_idx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    east = (c_idx - params.source_col) * pixel_spacing_m
    north = (params.source_row - r_idx) * pixel_spacing_m
    r2 = east**2 + north**2
    denom = (r2 + d * d) ** 1.5
    uz = c * d / denom
    # u_r * (unit radial . look) == c * (radial vector . look) / denom
    az = np.deg2rad(params.look_azimuth_deg)
    u_look = c * (east * np.sin(az) + north * np.cos(az)) / denom
    theta = np.deg2rad(params.incidence_deg)
    los = uz * np.cos(theta) + u_look * np.sin(theta)
    return PhaseGrid(los, np.ones((rows, cols), bool), pixel_spacing_m)


def stratified(atm: AtmosphereParams, rows: int, cols: int, pixel_spacing_m: float) -> PhaseGrid:
    """Delay linear in elevation, zero at the lowest valid DEM pixel."""
    _check_dims(rows, cols, pixel_spacing_m)
    dem = atm.dem
    if dem is None:
        return PhaseGrid(np.zeros((rows, cols)), np.ones((rows, cols), bool), pixel_spacing_m)
    if dem.shape != (rows, cols):
        raise DimensionError(f"DEM shape {dem.shape} != grid shape {(rows, cols)}")
    elev_km = np.asarray(dem.values, dtype=np.float64) / 1000.0
    lowest = elev_km[dem.mask].min() if dem.mask.any() else 0.0
    s = atm.strat_coeff_m_per_km * (elev_km - lowest)
    return PhaseGrid(s, dem.mask, pixel_spacing_m)


def synthetic_dem(rows: int, cols: int, pixel_spacing_m: float, peak_height_m: float = 1500.0,
                  peak_radius_m: float = 5000.0, seed: int = 0, roughness_m: float = 20.0,
                  center=None) -> PhaseGrid:
    """Gaussian hill plus seeded roughness; elevations clipped at zero."""
    _check_dims(rows, cols, pixel_spacing_m)
    if not peak_height_m > 0 or not peak_radius_m > 0 or roughness_m < 0:
        raise DomainError("peak height and radius must be positive, roughness non-negative")
    if center is None:
        center = ((rows - 1) / 2.0, (cols - 1) / 2.0)
    r_idx, c_idx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    r2 = ((r_idx - center[0]) ** 2 + (c_idx - center[1]) ** 2) * pixel_spacing_m**2
    elev = peak_height_m * np.exp(-r2 / (2.0 * peak_radius_m**2))
    if roughness_m > 0:
        rough = spectral_field(rows, cols, pixel_spacing_m, efold_m=2000.0, seed=seed)
        elev = elev + roughness_m * rough
    elev = np.maximum(elev, 0.0)
    return PhaseGrid(elev, np.ones((rows, cols), bool), pixel_spacing_m)


def _pixel_distances_km(rows, cols, pixel_spacing_m):
    r_idx, c_idx = np.divmod(np.arange(rows * cols), cols)
    dr = r_idx[:, None] - r_idx[None, :]
    dc = c_idx[:, None] - c_idx[None, :]
    return np.hypot(dr, dc) * pixel_spacing_m / 1000.0


@lru_cache(maxsize=8)
def _cholesky_factor(rows, cols, pixel_spacing_m, sigma2_max_mm2, efold_km):
    cov = sigma2_max_mm2 * np.exp(-_pixel_distances_km(rows, cols, pixel_spacing_m) / efold_km)
    jitter = 0.0
    step = 1e-12 * sigma2_max_mm2
    for _ in range(8):
        try:
            factor = np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
            factor.flags.writeable = False
            return factor
        except np.linalg.LinAlgError:
            jitter = step if jitter == 0.0 else jitter * 100.0
    raise NumericalError(f"covariance not positive definite after jitter {jitter:g} mm^2")


def turbulent_cholesky(atm: AtmosphereParams, rows: int, cols: int, pixel_spacing_m: float,
                       seed: int) -> PhaseGrid:
    """Exact sample of the exponential-covariance field via dense Cholesky.

    Limited to ``CHOLESKY_MAX_PIXELS`` pixels (64x64); use
    :func:`turbulent_spectral` for scene-sized grids.
    """
    _check_dims(rows, cols, pixel_spacing_m)
    if rows * cols > CHOLESKY_MAX_PIXELS:
        raise DimensionError(f"{rows}x{cols} exceeds the dense Cholesky limit of {CHOLESKY_MAX_PIXELS} pixels")
    factor = _cholesky_factor(int(rows), int(cols), float(pixel_spacing_m),
                              float(atm.sigma2_max_mm2), float(atm.efold_km))
    z = np.random.default_rng(seed).standard_normal(rows * cols)
    field_mm = (factor @ z).reshape(rows, cols)
    return PhaseGrid(field_mm / 1000.0, np.ones((rows, cols), bool), pixel_spacing_m)


def cholesky_covariance_mm2(atm: AtmosphereParams, rows: int, cols: int, pixel_spacing_m: float) -> np.ndarray:
    """Covariance actually realised by :func:`turbulent_cholesky`, ``L @ L.T``.

    Shape (rows, cols, rows, cols), in mm^2; equals the model up to jitter.
    """
    _check_dims(rows, cols, pixel_spacing_m)
    if rows * cols > CHOLESKY_MAX_PIXELS:
        raise DimensionError(f"{rows}x{cols} exceeds the dense Cholesky limit of {CHOLESKY_MAX_PIXELS} pixels")
    factor = _cholesky_factor(int(rows), int(cols), float(pixel_spacing_m),
                              float(atm.sigma2_max_mm2), float(atm.efold_km))
    return (factor @ factor.T).reshape(rows, cols, rows, cols)


@lru_cache(maxsize=16)
def _spectral_amplitude(rows, cols, pixel_spacing_m, efold_m):
    # circulant embedding on a torus large enough that the covariance has decayed
    pad = int(math.ceil(4.0 * efold_m / pixel_spacing_m))
    m = sp_fft.next_fast_len(max(2 * rows, rows + pad))
    n = sp_fft.next_fast_len(max(2 * cols, cols + pad))
    i = np.minimum(np.arange(m), m - np.arange(m))
    j = np.minimum(np.arange(n), n - np.arange(n))
    dist = np.hypot(i[:, None], j[None, :]) * pixel_spacing_m
    eig = np.real(sp_fft.fft2(np.exp(-dist / efold_m)))
    eig = np.maximum(eig, 0.0)
    # rescale so the clipped spectrum still has unit pixel variance
    eig *= m * n / eig.sum()
    amp = np.sqrt(eig)
    amp.flags.writeable = False
    return amp


def spectral_field(rows, cols, pixel_spacing_m, efold_m, seed):
    """Unit-variance stationary field with covariance approximately exp(-d/efold)."""
    amp = _spectral_amplitude(int(rows), int(cols), float(pixel_spacing_m), float(efold_m))
    m, n = amp.shape
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
    f = sp_fft.fft2(amp * noise) / math.sqrt(m * n)
    # real and imaginary parts are independent samples; keep the real one
    return np.real(f[:rows, :cols])


def turbulent_spectral(atm: AtmosphereParams, rows: int, cols: int, pixel_spacing_m: float,
                       seed: int) -> PhaseGrid:
    """Fast FFT sampler of the turbulent delay for scene-sized grids."""
    _check_dims(rows, cols, pixel_spacing_m)
    unit = spectral_field(rows, cols, pixel_spacing_m, atm.efold_km * 1000.0, seed)
    field_mm = math.sqrt(atm.sigma2_max_mm2) * unit
    return PhaseGrid(field_mm / 1000.0, np.ones((rows, cols), bool), pixel_spacing_m)


def compose(d: PhaseGrid, s: PhaseGrid, t: PhaseGrid, w: CompositionWeights) -> PhaseGrid:
    if not d.shape == s.shape == t.shape:
        raise DimensionError(f"component shapes differ: {d.shape}, {s.shape}, {t.shape}")
    x = (np.asarray(d.values, np.float64) + w.alpha * np.asarray(s.values, np.float64)
         + w.beta * np.asarray(t.values, np.float64))
    return PhaseGrid(x, d.mask & s.mask & t.mask, d.pixel_spacing_m)


@dataclass(frozen=True)
class DatasetConfig:
    """Parameter grid and scene geometry for the evaluation dataset."""

    rows: int = 280
    cols: int = 280
    pixel_spacing_m: float = 100.0
    depths_m: tuple = PAPER_DEPTHS_M
    incidences_deg: tuple = PAPER_INCIDENCES_DEG
    log10_volumes: tuple = PAPER_LOG10_VOLUMES
    alphas: tuple = PAPER_WEIGHT_LEVELS
    betas: tuple = PAPER_WEIGHT_LEVELS
    look_azimuth_deg: float = 90.0
    sigma2_max_mm2: float = 7.5
    efold_km: float = 8.0
    strat_coeff_m_per_km: float = STRAT_COEFF_M_PER_KM
    dem_peak_height_m: float = 1500.0
    dem_peak_radius_m: float = 5000.0
    dem_roughness_m: float = 20.0
    base_seed: int = 0
    source_row: float | None = None
    source_col: float | None = None

    def source_position(self) -> tuple[float, float]:
        row = (self.rows - 1) / 2.0 if self.source_row is None else self.source_row
        col = (self.cols - 1) / 2.0 if self.source_col is None else self.source_col
        return row, col

    def atmosphere(self) -> AtmosphereParams:
        dem = synthetic_dem(self.rows, self.cols, self.pixel_spacing_m, self.dem_peak_height_m,
                            self.dem_peak_radius_m, seed=self.base_seed, roughness_m=self.dem_roughness_m)
        return AtmosphereParams(self.sigma2_max_mm2, self.efold_km, self.strat_coeff_m_per_km, dem)


@dataclass
class DatasetItem:
    item_id: int
    grid: PhaseGrid
    source: SourceParams
    weights: CompositionWeights
    seed: int
    max_displacement_m: float
    log10_volume: float = field(default=float("nan"))

    def manifest_row(self, path="") -> dict:
        return {
            "item_id": self.item_id,
            "depth_m": self.source.depth_m,
            "incidence_deg": self.source.incidence_deg,
            "log10_volume": self.log10_volume,
            "alpha": self.weights.alpha,
            "beta": self.weights.beta,
            "seed": self.seed,
            "max_displacement_m": repr(self.max_displacement_m),
            "path": str(path),
            "source_row": self.source.source_row,
            "source_col": self.source.source_col,
        }


def enumerate_dataset(config: DatasetConfig):
    """Yield (item_id, depth, incidence, log10_volume, alpha, beta) in manifest order."""
    weights = list(itertools.product(config.alphas, config.betas))
    combos = itertools.product(config.depths_m, config.incidences_deg, config.log10_volumes, weights)
    for item_id, (depth, inc, logv, (alpha, beta)) in enumerate(combos):
        yield item_id, depth, inc, logv, alpha, beta


def build_dataset(config: DatasetConfig = DatasetConfig()) -> list[DatasetItem]:
    """Compose every item of the parameter grid; item i uses seed ``base_seed + i``."""
    return list(iter_dataset(config))


def iter_dataset(config: DatasetConfig = DatasetConfig()):
    atm = config.atmosphere()
    rows, cols, spacing = config.rows, config.cols, config.pixel_spacing_m
    strat = stratified(atm, rows, cols, spacing)
    src_row, src_col = config.source_position()
    deformation = {}
    for item_id, depth, inc, logv, alpha, beta in enumerate_dataset(config):
        key = (depth, inc, logv)
        if key not in deformation:
            src = SourceParams(depth, 10.0**logv, inc, src_row, src_col, config.look_azimuth_deg)
            d = mogi_los(src, rows, cols, spacing)
            deformation[key] = (src, d, float(np.max(np.abs(d.values))))
        src, d, max_disp = deformation[key]
        seed = config.base_seed + item_id
        turb = turbulent_spectral(atm, rows, cols, spacing, seed)
        w = CompositionWeights(alpha, beta)
        yield DatasetItem(item_id, compose(d, strat, turb, w), src, w, seed, max_disp, logv)


def write_dataset(config: DatasetConfig, out_dir) -> Path:
    """Write every item as FGR plus ``manifest.csv``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "items").mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for item in iter_dataset(config):
            rel = Path("items") / f"item_{item.item_id:04d}.fgr"
            write_fgr(item.grid, out_dir / rel)
            writer.writerow(item.manifest_row(rel.as_posix()))
    return manifest


def read_manifest(path) -> list[dict]:
    """Rows of a dataset manifest with numeric fields converted and paths resolved."""
    path = Path(path)
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = dict(row)
            for key in ("depth_m", "incidence_deg", "log10_volume", "alpha", "beta",
                        "max_displacement_m", "source_row", "source_col"):
                if rec.get(key) not in (None, ""):
                    rec[key] = float(rec[key])
            for key in ("item_id", "seed"):
                if rec.get(key) not in (None, ""):
                    rec[key] = int(rec[key])
            rec["path"] = (path.parent / rec["path"]).resolve()
            out.append(rec)
    return out


def with_overrides(config: DatasetConfig, **kwargs) -> DatasetConfig:
    return replace(config, **kwargs)

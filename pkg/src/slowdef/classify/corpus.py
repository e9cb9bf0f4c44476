"""Labelled training patches cut from synthetic scenes.

Positives hold a Mogi source whose epicenter lies in the central half of the
patch, scaled so that the deformation spans 1 to 8 fringes after the wrap gain.
Negatives are atmosphere-only composites. Each scene is wrapped at a gain drawn
from ``gains``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import synthgen
from ..raster import PhaseGrid, to_gray
from ..rewrap import C_BAND_WAVELENGTH_M, WrapParams, displacement_to_wrapped
from .network import PATCH_SIZE


@dataclass(frozen=True)
class CorpusConfig:
    pixel_spacing_m: float = 100.0
    gains: tuple = (1, 2, 4, 8)
    wavelength_m: float = C_BAND_WAVELENGTH_M
    depth_range_m: tuple = (2000.0, 6000.0)
    incidence_range_deg: tuple = (0.0, 45.0)
    fringe_range: tuple = (1.0, 8.0)
    look_azimuth_deg: float = 90.0
    sigma2_max_mm2: float = 7.5
    efold_km: float = 8.0
    strat_coeff_m_per_km: float = synthgen.STRAT_COEFF_M_PER_KM
    dem_height_range_m: tuple = (500.0, 2000.0)
    dem_radius_range_m: tuple = (3000.0, 8000.0)
    colocated_fraction: float = 0.5


def _scene(cfg: CorpusConfig, rng, positive: bool):
    n = PATCH_SIZE
    spacing = cfg.pixel_spacing_m
    mu = int(rng.choice(cfg.gains))
    alpha, beta = rng.uniform(0.0, 1.0, size=2)
    src_rc = rng.uniform(n / 4.0, 3.0 * n / 4.0, size=2)
    if positive and rng.uniform() < cfg.colocated_fraction:
        hill_rc = src_rc
    else:
        hill_rc = rng.uniform(0.0, n - 1.0, size=2)
    dem = synthgen.synthetic_dem(n, n, spacing, rng.uniform(*cfg.dem_height_range_m),
                                 rng.uniform(*cfg.dem_radius_range_m), seed=int(rng.integers(2**31)),
                                 center=tuple(hill_rc))
    atm = synthgen.AtmosphereParams(cfg.sigma2_max_mm2, cfg.efold_km, cfg.strat_coeff_m_per_km, dem)
    s = synthgen.stratified(atm, n, n, spacing)
    t = synthgen.turbulent_spectral(atm, n, n, spacing, int(rng.integers(2**31)))
    if positive:
        src = synthgen.SourceParams(rng.uniform(*cfg.depth_range_m), 1.0, rng.uniform(*cfg.incidence_range_deg),
                                    src_rc[0], src_rc[1], cfg.look_azimuth_deg)
        unit = synthgen.mogi_los(src, n, n, spacing)
        fringes = rng.uniform(*cfg.fringe_range)
        peak = fringes * cfg.wavelength_m / 2.0 / mu
        d = unit.with_values(unit.values * (peak / np.max(np.abs(unit.values))))
    else:
        d = PhaseGrid(np.zeros((n, n)), np.ones((n, n), bool), spacing)
    x = synthgen.compose(d, s, t, synthgen.CompositionWeights(alpha, beta))
    wrapped = displacement_to_wrapped(x, WrapParams(mu, 0.0, cfg.wavelength_m))
    return to_gray(wrapped).pixels


def make_corpus(n_per_class: int, seed: int = 0, config: CorpusConfig = CorpusConfig()):
    """Return (patches uint8 (2n, 224, 224), labels int64) in interleaved order."""
    rng = np.random.default_rng(seed)
    patches = np.empty((2 * n_per_class, PATCH_SIZE, PATCH_SIZE), dtype=np.uint8)
    labels = np.empty(2 * n_per_class, dtype=np.int64)
    for i in range(n_per_class):
        for label in (1, 0):
            k = 2 * i + (1 - label)
            patches[k] = _scene(config, rng, positive=bool(label))
            labels[k] = label
    return patches, labels

"""Deterministic fringe-density classifier used when no trained model is given."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError

# a pixel counts as fringe activity when its wrapped phase gradient corresponds
# to a fringe period between 4 and 64 pixels
GRADIENT_FLOOR = 2.0 * np.pi / 64.0
GRADIENT_CEIL = np.pi / 2.0
LOGISTIC_SLOPE = 100.0
LOGISTIC_CENTER = 0.05


def _wrap(x):
    return np.mod(x + np.pi, 2.0 * np.pi) - np.pi


def fringe_fraction(patch) -> float:
    """Fraction of pixels whose wrapped gradient magnitude lies in the fringe band."""
    g = np.asarray(patch, dtype=np.float64)
    if g.ndim != 2 or min(g.shape) < 2:
        raise DimensionError(f"patch must be 2D and at least 2x2, got {g.shape}")
    phase = g * (2.0 * np.pi / 255.0)
    dr = _wrap(np.diff(phase, axis=0))[:, :-1]
    dc = _wrap(np.diff(phase, axis=1))[:-1, :]
    mag = np.hypot(dr, dc)
    active = (mag > GRADIENT_FLOOR) & (mag < GRADIENT_CEIL)
    return float(active.mean())


def baseline_predict(patch) -> float:
    f = fringe_fraction(patch)
    return float(1.0 / (1.0 + np.exp(-LOGISTIC_SLOPE * (f - LOGISTIC_CENTER))))


class BaselineClassifier:
    name = "baseline"

    def predict_batch(self, patches):
        patches = np.asarray(patches)
        if patches.ndim == 2:
            patches = patches[None]
        return np.array([baseline_predict(p) for p in patches], dtype=np.float64)

    def predict(self, patch) -> float:
        return baseline_predict(patch)

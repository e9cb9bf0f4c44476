"""Phase (re)wrapping: wrap gain, wrap-boundary shift and displacement to phase."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .raster import PhaseGrid

TWO_PI = 2.0 * np.pi
C_BAND_WAVELENGTH_M = 0.0554658


@dataclass(frozen=True)
class WrapParams:
    mu: int = 1
    tau: float = 0.0
    wavelength_m: float = C_BAND_WAVELENGTH_M

    def __post_init__(self):
        if int(self.mu) != self.mu or self.mu < 1:
            raise DomainError(f"wrap gain mu must be a positive integer, got {self.mu}")
        if not 0.0 <= self.tau < TWO_PI:
            raise DomainError(f"tau must lie in [0, 2pi), got {self.tau}")
        if not self.wavelength_m > 0:
            raise DomainError(f"wavelength must be positive, got {self.wavelength_m}")


def wrap(phase):
    """Reduce phase into [-pi, pi)."""
    phase = np.asarray(phase, dtype=np.float64)
    out = np.mod(phase + np.pi, TWO_PI) - np.pi
    # mod can return exactly 2pi after rounding for tiny negative inputs
    return np.where(out >= np.pi, out - TWO_PI, out)


_LOWEST_F32 = np.nextafter(np.float32(-np.pi), np.float32(0.0))


def wrap_float32(phase):
    """float32 copy of wrapped phase that still lies in [-pi, pi).

    Casting can round a value just below pi up to float32(pi) > pi, and -pi
    itself down below -pi; both land on the smallest float32 not below -pi.
    """
    out = np.asarray(phase, dtype=np.float32)
    wide = out.astype(np.float64)
    bad = (wide >= np.pi) | (wide < -np.pi)
    return np.where(bad, _LOWEST_F32, out).astype(np.float32)


def wrap_gain(unwrapped: PhaseGrid, mu: int) -> PhaseGrid:
    if int(mu) != mu or mu < 1:
        raise DomainError(f"wrap gain mu must be a positive integer, got {mu}")
    return unwrapped.with_values(wrap(int(mu) * np.asarray(unwrapped.values, dtype=np.float64)))


def wrap_shift(unwrapped: PhaseGrid, tau: float) -> PhaseGrid:
    tau = float(np.mod(tau, TWO_PI))
    return unwrapped.with_values(wrap(np.asarray(unwrapped.values, dtype=np.float64) + tau))


def displacement_to_phase(disp, wavelength_m: float = C_BAND_WAVELENGTH_M):
    if not wavelength_m > 0:
        raise DomainError(f"wavelength must be positive, got {wavelength_m}")
    return -4.0 * np.pi / wavelength_m * np.asarray(disp, dtype=np.float64)


def rewrap_phase(unwrapped: PhaseGrid, params: WrapParams) -> PhaseGrid:
    """Gain first, then offset: (mu * psi + tau) reduced into [-pi, pi)."""
    phase = params.mu * np.asarray(unwrapped.values, dtype=np.float64) + params.tau
    return unwrapped.with_values(wrap(phase))


def displacement_to_wrapped(disp: PhaseGrid, params: WrapParams) -> PhaseGrid:
    phase = displacement_to_phase(disp.values, params.wavelength_m)
    return rewrap_phase(disp.with_values(phase), params)


def count_wrap_discontinuities(profile, jump: float = np.pi) -> int:
    """Number of wrap boundaries crossed along a 1D wrapped profile.

    A boundary is a step whose magnitude exceeds ``jump`` (a sign flip
    between roughly +pi and -pi).
    """
    d = np.diff(np.asarray(profile, dtype=np.float64))
    return int(np.count_nonzero(np.abs(d) > jump))

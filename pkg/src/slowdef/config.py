"""Run configuration: line-based ``key = value`` files.

``#`` starts a comment, lists are comma-separated, unknown keys are rejected
and path values are resolved relative to the config file.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .rewrap import C_BAND_WAVELENGTH_M
from .synthgen import DatasetConfig


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _angle(text):
    text = text.strip().lower().replace(" ", "")
    if "pi" not in text:
        return float(text)
    num, _, den = text.partition("/")
    coeff = num.replace("*", "").replace("pi", "")
    value = (float(coeff) if coeff not in ("", "+") else 1.0) * math.pi
    return value / float(den) if den else value


def _angles(text):
    return tuple(_angle(v) for v in text.split(",") if v.strip())


# key -> (parser, is_path)
_KEYS = {
    "rows": (int, False),
    "cols": (int, False),
    "pixel_spacing_m": (float, False),
    "wavelength_m": (float, False),
    "gains": (_ints, False),
    "taus": (_angles, False),
    "seed": (int, False),
    "depths_m": (_floats, False),
    "incidences_deg": (_floats, False),
    "log10_volumes": (_floats, False),
    "alphas": (_floats, False),
    "betas": (_floats, False),
    "look_azimuth_deg": (float, False),
    "sigma2_max_mm2": (float, False),
    "efold_km": (float, False),
    "strat_coeff_m_per_km": (float, False),
    "dem_peak_height_m": (float, False),
    "dem_peak_radius_m": (float, False),
    "dem_roughness_m": (float, False),
    "source_row": (float, False),
    "source_col": (float, False),
    "classifier": (str, True),
    "output_dir": (str, True),
    "threads": (int, False),
    "corpus_per_class": (int, False),
    "epochs": (int, False),
    "lr": (float, False),
    "momentum": (float, False),
    "batch_size": (int, False),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    source: Path | None = None
    text: str = ""

    def get(self, key, default=None):
        return self.values.get(key, default)

    def digest(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def dataset_config(self, seed: int | None = None) -> DatasetConfig:
        cfg = DatasetConfig()
        names = {f.name for f in fields(DatasetConfig)}
        overrides = {k: v for k, v in self.values.items() if k in names}
        if "seed" in self.values:
            overrides["base_seed"] = self.values["seed"]
        if seed is not None:
            overrides["base_seed"] = seed
        return replace(cfg, **overrides)

    @property
    def wavelength_m(self) -> float:
        return self.values.get("wavelength_m", C_BAND_WAVELENGTH_M)


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser, is_path = _KEYS[key]
        try:
            parsed = parser(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
        if is_path and base_dir is not None and parsed != "baseline":
            parsed = str((base_dir / parsed).resolve())
        values[key] = parsed
    return RunConfig(values, None, text)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except UnicodeDecodeError:
        raise ConfigError(f"config file is not ASCII: {path}") from None
    cfg = parse_config(text, path.resolve().parent)
    cfg.source = path
    return cfg

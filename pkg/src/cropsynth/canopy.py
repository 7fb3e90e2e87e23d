"""Band-level canopy reflectance and NDVI.

A two-flux mixing surrogate: the canopy gap fraction ``exp(-k * LAI)`` blends
a fixed leaf reflectance with moisture-darkened soil reflectance, separately
in the MODIS red (620-670 nm) and NIR (841-876 nm) bands.
"""
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .seasons import doy_of_index

SOIL_REFLECTANCE_FLOOR = 0.01


@dataclass(frozen=True)
class CanopyOptics:
    leaf_refl_red: float = 0.06
    leaf_refl_nir: float = 0.46
    extinction_red: float = 0.66
    extinction_nir: float = 0.45
    wetness_darkening: float = 0.4

    def __post_init__(self):
        for r in (self.leaf_refl_red, self.leaf_refl_nir):
            if not 0 < r < 1:
                raise ValidationError("leaf reflectance must be in (0, 1)")
        if self.leaf_refl_nir <= self.leaf_refl_red:
            raise ValidationError("leaf NIR reflectance must exceed red")
        if self.extinction_red <= 0 or self.extinction_nir <= 0:
            raise ValidationError("extinction coefficients must be positive")

    def leaf(self, band):
        return self.leaf_refl_red if band == "red" else self.leaf_refl_nir

    def extinction(self, band):
        return self.extinction_red if band == "red" else self.extinction_nir


# Band averages of a generic green maize leaf; not tied to any specific leaf-model run.
DEFAULT_OPTICS = CanopyOptics()


def wet_soil_reflectance(dry_refl, soil_moisture_fraction, darkening):
    """Dry reflectance darkened linearly with moisture, floored at 0.01."""
    out = np.asarray(dry_refl) * (1.0 - darkening * np.asarray(soil_moisture_fraction))
    out = np.maximum(out, SOIL_REFLECTANCE_FLOOR)
    return float(out) if out.ndim == 0 else out


def canopy_reflectance(lai, optics, soil_refl_band, band):
    """Gap-fraction mix of leaf and soil reflectance for ``band`` ("red" or "nir")."""
    if band not in ("red", "nir"):
        raise ValueError(f"unknown band {band!r}")
    lai = np.asarray(lai, dtype=float)
    if (lai < 0).any():
        raise ValueError("LAI must be nonnegative")
    gap = np.exp(-optics.extinction(band) * lai)
    out = optics.leaf(band) * (1.0 - gap) + np.asarray(soil_refl_band) * gap
    return float(out) if out.ndim == 0 else out


def ndvi(refl_nir, refl_red):
    nir = np.asarray(refl_nir, dtype=float)
    red = np.asarray(refl_red, dtype=float)
    denom = nir + red
    if (denom == 0).any():
        raise ValueError("NDVI undefined for zero total reflectance")
    out = (nir - red) / denom
    return float(out) if out.ndim == 0 else out


def ndvi_from_state(lai, soil_moisture, profile, optics=DEFAULT_OPTICS):
    """Vectorised NDVI for arrays of LAI and soil moisture on one soil."""
    red_soil = wet_soil_reflectance(profile.dry_reflectance_red, soil_moisture, optics.wetness_darkening)
    nir_soil = wet_soil_reflectance(profile.dry_reflectance_nir, soil_moisture, optics.wetness_darkening)
    red = canopy_reflectance(lai, optics, red_soil, "red")
    nir = canopy_reflectance(lai, optics, nir_soil, "nir")
    return ndvi(nir, red)


def simulate_ndvi_series(season, profile, optics, rng):
    """Daily NDVI for one pixel season.

    Days up to harvest come from the mixing model; each post-harvest day is
    drawn uniformly, with replacement, from that season's pre-planting values.
    """
    out = np.atleast_1d(ndvi_from_state(season.lai, season.soil_moisture, profile, optics)).copy()
    if season.harvest_index is not None:
        pre = out[: max(season.planting_index, 1)]
        n_post = len(out) - season.harvest_index
        out[season.harvest_index:] = pre[rng.integers(len(pre), size=n_post)]
    return out


NDVI_COLUMNS = ("cell_id", "window", "doy", "ndvi")


def write_ndvi_csv(path, rows):
    """``rows`` is an iterable of (cell_id, window, start_doy, ndvi array)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NDVI_COLUMNS)
        for cell_id, window, start_doy, values in rows:
            doys = doy_of_index(np.arange(len(values)), start_doy)
            for d, v in zip(doys, values):
                w.writerow([cell_id, window, int(d), f"{v:.6f}"])

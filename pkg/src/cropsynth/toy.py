"""Procedural inputs for demos, tests and the acceptance harness.

The weather here is produced by a process deliberately unlike the generator in
:mod:`cropsynth.swg`: smooth seasonal cycles instead of monthly steps, gamma
rather than mixed-exponential amounts, and station coupling through shared
latent factors rather than correlated innovations.
"""
import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr
from scipy.stats import gamma as gamma_dist

from . import canopy, phenology, pipeline, swg
from .features import stage_fractions
from .ingest import (
    ProgressReport, SoilProfile, distribution_to_cumulative, make_archive, write_progress_csv, write_soil_csv, write_weather_csv, zone_config_from_dict,
    zone_config_to_dict,
)
from .pipeline import NDVI_OBS_COLUMNS
from .seasons import doy_of_index, week_end_indices


@dataclass(frozen=True)
class ToyClimate:
    tmax_mean: float = 23.0
    tmax_amp: float = 8.0
    diurnal_range: float = 11.0
    srad_mean: float = 220.0
    srad_amp: float = 90.0
    p01_mean: float = 0.22
    p01_amp: float = 0.08
    p11: float = 0.5
    amount_shape: float = 0.8
    amount_scale: float = 12.0
    ar_coef: float = 0.6
    spatial_coupling: float = 0.8
    sd_tmax: float = 3.0
    sd_tmin: float = 2.5
    sd_srad: float = 40.0
    wet_cooling: float = 2.0
    wet_dimming: float = 0.6
    # day of year of the warm-season peak; mid January for the southern hemisphere
    peak_doy: int = 15


def procedural_archives(station_ids, n_years=30, seed=0, climate=ToyClimate(), first_year=1990):
    """Daily weather archives for several coupled stations.

    Returns a list of :class:`~cropsynth.ingest.WeatherArchive`.
    """
    rng = np.random.default_rng(seed)
    k = len(station_ids)
    dates = np.arange(np.datetime64(f"{first_year}-01-01"), np.datetime64(f"{first_year + n_years}-01-01"))
    n = len(dates)
    doy = (dates - dates.astype("datetime64[Y]")).astype(int) + 1
    season = np.cos(2 * np.pi * (doy - climate.peak_doy) / 365.25)

    c = climate.spatial_coupling
    # occurrence: shared plus private gaussian, thresholded through a Markov rule
    shared = rng.standard_normal(n)
    own = rng.standard_normal((n, k))
    u = ndtr(np.sqrt(c) * shared[:, None] + np.sqrt(1 - c) * own)
    p01 = climate.p01_mean + climate.p01_amp * season
    wet = np.zeros((n, k), dtype=bool)
    prev = np.zeros(k, dtype=bool)
    for t in range(n):
        prev = u[t] < np.where(prev, climate.p11, p01[t])
        wet[t] = prev
    v = np.sqrt(c) * rng.standard_normal(n)[:, None] + np.sqrt(1 - c) * rng.standard_normal((n, k))
    amounts = gamma_dist.ppf(ndtr(v), climate.amount_shape, scale=climate.amount_scale) + 0.1
    prcp = np.where(wet, np.round(amounts, 1), 0.0)

    # residuals: AR(1) driven by a shared and a private component per channel
    sd = np.array([climate.sd_tmax, climate.sd_tmin, climate.sd_srad])
    innov_scale = np.sqrt(1 - climate.ar_coef ** 2)
    z = np.zeros((n, k, 3))
    cur = rng.standard_normal((k, 3))
    for t in range(n):
        e = np.sqrt(c) * rng.standard_normal(3)[None, :] + np.sqrt(1 - c) * rng.standard_normal((k, 3))
        cur = climate.ar_coef * cur + innov_scale * e
        z[t] = cur

    archives = []
    for j, sid in enumerate(station_ids):
        tmax = climate.tmax_mean + climate.tmax_amp * season - climate.wet_cooling * wet[:, j] + sd[0] * z[:, j, 0]
        tmin = tmax - climate.diurnal_range + sd[1] * z[:, j, 1] - sd[0] * z[:, j, 0] * 0.5
        srad = (climate.srad_mean + climate.srad_amp * season) * np.where(wet[:, j], climate.wet_dimming, 1.0)
        srad = np.maximum(srad + sd[2] * z[:, j, 2], 5.0)
        lo, hi = np.minimum(tmax, tmin), np.maximum(tmax, tmin) + 0.5
        archives.append(make_archive(sid, dates, np.round(hi, 2), np.round(lo, 2), np.round(srad, 1), prcp[:, j]))
    return archives


TOY_SOILS = (
    SoilProfile("S01", "loam", 0.30, 0.13, 1.0, 0.18, 0.26),
    SoilProfile("S02", "silt loam", 0.33, 0.12, 1.0, 0.20, 0.28),
    SoilProfile("S03", "clay loam", 0.36, 0.20, 1.0, 0.14, 0.21),
    SoilProfile("S04", "sandy loam", 0.22, 0.08, 1.0, 0.24, 0.31),
)


def toy_zone(zone_id, windows, early_fraction, n_cells=12, n_stations=2, lat0=-34.0, lon0=-61.0, seed=0):
    """A small square zone with cells on a regular grid and stations at its corners.

    ``windows`` is a list of (name, earliest_doy, latest_doy).
    """
    rng = np.random.default_rng(seed)
    side = int(np.ceil(np.sqrt(n_cells)))
    cells = []
    for i in range(n_cells):
        r, c = divmod(i, side)
        soil = TOY_SOILS[int(rng.integers(len(TOY_SOILS)))].soil_id
        cells.append([f"{zone_id}-c{i:02d}", lat0 + 0.09 * r, lon0 + 0.11 * c, soil])
    stations = [f"{zone_id}-s{j}" for j in range(n_stations)]
    coords = {s: [lat0 + 0.3 * j, lon0 + 0.3 * j] for j, s in enumerate(stations)}
    return zone_config_from_dict({
        "zone_id": zone_id,
        "latitude_deg": lat0,
        "station_ids": stations,
        "station_coords": coords,
        "grid_cells": cells,
        "planting_windows": [list(w) for w in windows],
        "early_fraction": early_fraction,
    })


# Three zones: one late-only, two with early and late windows.
TOY_ZONE_SPECS = (
    ("Z1", [("late", 335, 360)], 0.0),
    ("Z2", [("early", 258, 285), ("late", 335, 360)], 0.5),
    ("Z3", [("early", 262, 290), ("late", 340, 362)], 0.6),
)


def toy_zones(n_cells=12, n_stations=2):
    return [toy_zone(z, w, f, n_cells=n_cells, n_stations=n_stations, lon0=-61.0 - 1.5 * i, seed=i)
            for i, (z, w, f) in enumerate(TOY_ZONE_SPECS)]



# --- on-disk fixture -----------------------------------------------------------------

def toy_survey(zone, archives, soils, season_year, seed=0, cultivar=None, obs_every=8, obs_noise=0.02):
    """Survey-style records for one toy zone-season driven by historical weather.

    Each grid cell is planted in one window, with the split following the
    zone's early fraction. Returns a :class:`~cropsynth.ingest.ProgressReport`
    and NDVI observation rows ``(zone_id, season_id, pixel_id, doy, ndvi)``.
    """
    cultivar = cultivar or phenology.DEFAULT_CULTIVAR
    key = f"survey{season_year}"
    weather = pipeline.archive_season_weather(zone, archives, season_year)
    rng = np.random.default_rng(swg.stream_seed(seed, zone.zone_id, key, "windows"))
    cells = list(zone.grid_cells)
    n_early = int(round(zone.early_fraction * len(cells)))
    order = rng.permutation(len(cells))
    assign = {cells[i].cell_id: ("early" if k < n_early else "late") for k, i in enumerate(order)}
    stages, obs = [], []
    for w in zone.window_names:
        subset = [c for c in cells if assign[c.cell_id] == w]
        if not subset:
            continue
        sims = pipeline.simulate_windows(zone, weather, soils, cultivar, canopy.DEFAULT_OPTICS, seed, key,
                                         windows=[w], cells=subset)
        seasons, nd = sims[w]
        for cell, s, series in zip(subset, seasons, nd):
            stages.append(s.stage)
            days = np.arange(obs_every // 2, len(series), obs_every)
            noise = np.random.default_rng(swg.stream_seed(seed, zone.zone_id, key, cell.cell_id, "obs"))
            vals = series[days] + obs_noise * noise.standard_normal(len(days))
            for d, v in zip(doy_of_index(days, zone.season_start_doy), vals):
                obs.append((zone.zone_id, str(season_year), cell.cell_id, int(d), round(float(v), 4)))
    weeks = week_end_indices()
    dist = stage_fractions(np.array(stages)[:, weeks])
    cum = np.round(np.array([distribution_to_cumulative(p) for p in dist]), 1)
    report = ProgressReport(zone.zone_id, str(season_year),
                            tuple(int(d) for d in doy_of_index(weeks, zone.season_start_doy)), cum)
    return report, obs


def write_toy_fixture(root, n_years=30, seed=0, survey_years=range(2010, 2019), seasons_per_zone=60,
                      n_cells=12, experiment=None):
    """Write a complete toy experiment: zones, weather, soils, cultivar,
    surveyed progress and NDVI observations, and ``experiment.json``.

    ``experiment`` is merged over the default experiment document.
    Returns the path of ``experiment.json``.
    """
    root = Path(root)
    (root / "zones").mkdir(parents=True, exist_ok=True)
    zones = toy_zones(n_cells=n_cells)
    archives = []
    for i, z in enumerate(zones):
        archives += procedural_archives(list(z.station_ids), n_years=n_years, seed=seed + 101 * i)
        (root / "zones" / f"{z.zone_id}.json").write_text(json.dumps(zone_config_to_dict(z), indent=1, sort_keys=True) + "\n")
    write_weather_csv(root / "weather.csv", archives)
    write_soil_csv(root / "soils.csv", TOY_SOILS)
    phenology.save_cultivar(root / "cultivar.json", phenology.DEFAULT_CULTIVAR)

    by_id = {a.station_id: a for a in archives}
    soils = {s.soil_id: s for s in TOY_SOILS}
    reports, obs = [], []
    for z in zones:
        for y in survey_years:
            r, o = toy_survey(z, by_id, soils, y, seed=seed)
            reports.append(r)
            obs += o
    write_progress_csv(root / "progress.csv", reports)
    with (root / "ndvi_obs.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NDVI_OBS_COLUMNS)
        w.writerows(obs)

    doc = {
        "paths": {"zones": [f"zones/{z.zone_id}.json" for z in zones], "weather": "weather.csv",
                  "soils": "soils.csv", "progress": "progress.csv", "ndvi_obs": "ndvi_obs.csv", "output": "out"},
        "phenology": {"cultivar": "cultivar.json"},
        "swg": {"seasons_per_zone": seasons_per_zone, "seed": seed},
        "network": {"hidden": 32, "time_stride": 7},
        "training": {"combinations": ["Usur", "Asyn", "Asyn1Usur", "AsynUsur"], "epochs": 30, "batch": 256,
                     "lr": 1e-3, "weight_decay": 1e-3, "divergence_mode": "signed", "target_zone": "Z2"},
        "evaluation": {"test_filters": [{"origin": "surveyed", "seasons": [str(y) for y in list(survey_years)[-2:]]}]},
    }
    for k, v in (experiment or {}).items():
        if isinstance(v, dict) and isinstance(doc.get(k), dict):
            doc[k].update(v)
        else:
            doc[k] = v
    path = root / "experiment.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path

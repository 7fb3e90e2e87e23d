"""Loaders and validators for every external input.

All loaders are pure functions of file contents and return frozen objects.
File layouts::

    weather CSV   station_id,date,tmax_c,tmin_c,srad_wm2,prcp_mm
    soil CSV      soil_id,texture_class,dul,ll,depth_m,refl_red,refl_nir
    progress CSV  zone_id,season_id,week_end_doy,cum_emerged,cum_silking,
                  cum_dough,cum_mature,cum_harvested
    zone config   JSON object with the fields of :class:`ZoneConfig`
"""
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GapError, OrderingError, SchemaError, ValidationError
from .seasons import DAYS_PER_YEAR

STAGES = ("pre_emergence", "emerged", "silking", "dough", "mature", "harvested")
SURVEY_STAGES = ("emerged", "silking", "dough", "mature", "harvested")

TEXTURE_CLASSES = (
    "sand", "loamy sand", "sandy loam", "loam", "silt loam", "silt",
    "sandy clay loam", "clay loam", "silty clay loam", "sandy clay",
    "silty clay", "clay",
)

WEATHER_COLUMNS = ("station_id", "date", "tmax_c", "tmin_c", "srad_wm2", "prcp_mm")
SOIL_COLUMNS = ("soil_id", "texture_class", "dul", "ll", "depth_m", "refl_red", "refl_nir")
PROGRESS_COLUMNS = (
    "zone_id", "season_id", "week_end_doy",
    "cum_emerged", "cum_silking", "cum_dough", "cum_mature", "cum_harvested",
)

# Planting begins this many days after the season origin.
SEASON_LEAD_DAYS = 14


@dataclass(frozen=True)
class GridCell:
    cell_id: str
    lat: float
    lon: float
    soil_id: str


@dataclass(frozen=True)
class PlantingWindow:
    name: str
    earliest_doy: int
    latest_doy: int


@dataclass(frozen=True)
class ZoneConfig:
    zone_id: str
    latitude_deg: float
    station_ids: tuple
    grid_cells: tuple
    planting_windows: tuple
    early_fraction: float
    season_start_doy: int
    # station_id -> (lat, lon); needed for nearest-station assignment and
    # distance-based correlation defaults.
    station_coords: dict = field(default_factory=dict)

    @property
    def late_fraction(self):
        return 1.0 - self.early_fraction

    def window(self, name):
        for w in self.planting_windows:
            if w.name == name:
                return w
        raise KeyError(name)

    @property
    def window_names(self):
        return tuple(w.name for w in self.planting_windows)

    def window_weight(self, name):
        return self.early_fraction if name == "early" else self.late_fraction


def _season_start_for(windows):
    first = min(w.earliest_doy for w in windows)
    return (first - SEASON_LEAD_DAYS - 1) % DAYS_PER_YEAR + 1


def zone_config_from_dict(data, source=None):
    """Build and validate a :class:`ZoneConfig` from a decoded JSON object."""
    required = ("zone_id", "latitude_deg", "station_ids", "grid_cells", "planting_windows")
    missing = [k for k in required if k not in data]
    if missing:
        raise SchemaError(f"zone config missing fields {missing}", source)

    windows = []
    for w in data["planting_windows"]:
        if isinstance(w, dict):
            name, lo, hi = w.get("window_name", w.get("name")), w["earliest_doy"], w["latest_doy"]
        else:
            name, lo, hi = w
        if name not in ("early", "late"):
            raise ValidationError(f"planting window name must be early or late, got {name!r}")
        lo, hi = int(lo), int(hi)
        if not (1 <= lo <= DAYS_PER_YEAR and 1 <= hi <= DAYS_PER_YEAR):
            raise ValidationError(f"window {name}: day of year out of range")
        if lo >= hi:
            raise ValidationError(f"window {name}: earliest_doy {lo} must precede latest_doy {hi}")
        windows.append(PlantingWindow(name, lo, hi))
    if not windows:
        raise ValidationError("zone config needs at least one planting window")
    names = [w.name for w in windows]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate planting window names")
    windows.sort(key=lambda w: ("early", "late").index(w.name))

    if "early_fraction" in data:
        early = float(data["early_fraction"])
    else:
        early = 1.0 if names == ["early"] else 0.0
    if not 0.0 <= early <= 1.0:
        raise ValidationError(f"early_fraction {early} outside [0, 1]")
    if "early" not in names and early != 0.0:
        raise ValidationError("early_fraction > 0 but no early window")
    if "late" not in names and early != 1.0:
        raise ValidationError("early_fraction < 1 but no late window")

    start = _season_start_for(windows)
    if "season_start_doy" in data and int(data["season_start_doy"]) != start:
        raise ValidationError(
            f"season_start_doy {data['season_start_doy']} should be {start} "
            f"({SEASON_LEAD_DAYS} days before the earliest planting day)"
        )

    cells = []
    for c in data["grid_cells"]:
        if isinstance(c, dict):
            cells.append(GridCell(str(c["cell_id"]), float(c["lat"]), float(c["lon"]), str(c["soil_id"])))
        else:
            cid, lat, lon, soil = c
            cells.append(GridCell(str(cid), float(lat), float(lon), str(soil)))
    if not cells:
        raise ValidationError("zone config has no grid cells")

    stations = tuple(str(s) for s in data["station_ids"])
    if not stations:
        raise ValidationError("zone config has no stations")
    coords = {str(k): (float(v[0]), float(v[1])) for k, v in data.get("station_coords", {}).items()}
    unknown = set(coords) - set(stations)
    if unknown:
        raise ValidationError(f"station_coords for unknown stations {sorted(unknown)}")
    if len(stations) > 1 and set(coords) != set(stations):
        raise ValidationError("station_coords required for every station when a zone has several")

    return ZoneConfig(
        zone_id=str(data["zone_id"]),
        latitude_deg=float(data["latitude_deg"]),
        station_ids=stations,
        grid_cells=tuple(cells),
        planting_windows=tuple(windows),
        early_fraction=early,
        season_start_doy=start,
        station_coords=coords,
    )


def zone_config_to_dict(zone):
    return {
        "zone_id": zone.zone_id,
        "latitude_deg": zone.latitude_deg,
        "station_ids": list(zone.station_ids),
        "station_coords": {k: list(v) for k, v in zone.station_coords.items()},
        "grid_cells": [[c.cell_id, c.lat, c.lon, c.soil_id] for c in zone.grid_cells],
        "planting_windows": [[w.name, w.earliest_doy, w.latest_doy] for w in zone.planting_windows],
        "early_fraction": zone.early_fraction,
        "season_start_doy": zone.season_start_doy,
    }


def load_zone_config(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(exc.msg, path, exc.lineno) from exc
    if not isinstance(data, dict):
        raise SchemaError("zone config must be a JSON object", path, 1)
    return zone_config_from_dict(data, source=path)


@dataclass(frozen=True, eq=False)
class WeatherArchive:
    """Daily weather for one station, stored column-wise."""

    station_id: str
    dates: np.ndarray  # datetime64[D]
    tmax_c: np.ndarray
    tmin_c: np.ndarray
    srad_wm2: np.ndarray
    prcp_mm: np.ndarray

    def __post_init__(self):
        for name in ("dates", "tmax_c", "tmin_c", "srad_wm2", "prcp_mm"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    def __len__(self):
        return len(self.dates)

    @property
    def months(self):
        return (self.dates.astype("datetime64[M]").astype(int) % 12) + 1

    @property
    def years(self):
        return self.dates.astype("datetime64[Y]").astype(int) + 1970

    def channels(self):
        """(n, 3) array of tmax, tmin, srad."""
        return np.column_stack([self.tmax_c, self.tmin_c, self.srad_wm2])


def make_archive(station_id, dates, tmax_c, tmin_c, srad_wm2, prcp_mm):
    """Validate arrays and build a :class:`WeatherArchive`."""
    dates = np.asarray(dates, dtype="datetime64[D]")
    cols = [np.asarray(a, dtype=float).copy() for a in (tmax_c, tmin_c, srad_wm2, prcp_mm)]
    n = len(dates)
    if any(len(c) != n for c in cols):
        raise ValidationError("weather columns have different lengths")
    tmax, tmin, srad, prcp = cols
    if not all(np.isfinite(c).all() for c in cols):
        raise ValidationError(f"station {station_id}: missing or non-finite weather values")
    if n > 1:
        step = np.diff(dates).astype(int)
        if (step <= 0).any():
            i = int(np.argmax(step <= 0))
            raise OrderingError(f"station {station_id}: dates not strictly increasing at {dates[i + 1]}")
        years = dates.astype("datetime64[Y]")
        same_year = years[1:] == years[:-1]
        gap = same_year & (step != 1)
        if gap.any():
            i = int(np.argmax(gap))
            raise GapError(f"station {station_id}: gap between {dates[i]} and {dates[i + 1]}")
    bad = tmax < tmin
    if bad.any():
        raise ValidationError(f"station {station_id}: tmax < tmin on {dates[np.argmax(bad)]}")
    if (prcp < 0).any():
        raise ValidationError(f"station {station_id}: negative precipitation on {dates[np.argmax(prcp < 0)]}")
    if (srad < 0).any():
        raise ValidationError(f"station {station_id}: negative solar radiation on {dates[np.argmax(srad < 0)]}")
    return WeatherArchive(str(station_id), dates, tmax, tmin, srad, prcp)


def _read_csv(path, columns):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file", path, 1) from None
        header = [h.strip() for h in header]
        if tuple(header) != tuple(columns):
            raise SchemaError(f"expected header {','.join(columns)}, got {','.join(header)}", path, 1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns) or any(v.strip() == "" for v in row):
                raise SchemaError("row has missing fields", path, lineno)
            rows.append((lineno, [v.strip() for v in row]))
    return rows


def load_weather_archives(path):
    """Read a weather CSV that may hold several stations; returns ``{station_id: archive}``."""
    rows = _read_csv(path, WEATHER_COLUMNS)
    grouped = {}
    for lineno, row in rows:
        try:
            rec = (np.datetime64(row[1], "D"), float(row[2]), float(row[3]), float(row[4]), float(row[5]))
        except ValueError as exc:
            raise SchemaError(str(exc), path, lineno) from exc
        grouped.setdefault(row[0], []).append(rec)
    out = {}
    for sid, recs in grouped.items():
        d, tx, tn, sr, pr = zip(*recs)
        out[sid] = make_archive(sid, d, tx, tn, sr, pr)
    return out


def load_weather_archive(path):
    archives = load_weather_archives(path)
    if len(archives) != 1:
        raise SchemaError(f"expected one station, found {len(archives)}", path)
    return next(iter(archives.values()))


def write_weather_csv(path, archives):
    """Write archives (or generated series converted to archives) in the weather CSV layout."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(WEATHER_COLUMNS)
        for a in archives:
            for i in range(len(a)):
                w.writerow([a.station_id, str(a.dates[i]), repr(float(a.tmax_c[i])), repr(float(a.tmin_c[i])),
                            repr(float(a.srad_wm2[i])), repr(float(a.prcp_mm[i]))])


@dataclass(frozen=True)
class SoilProfile:
    soil_id: str
    texture_class: str
    drained_upper_limit: float
    lower_limit: float
    depth_m: float
    dry_reflectance_red: float
    dry_reflectance_nir: float

    def __post_init__(self):
        if self.texture_class not in TEXTURE_CLASSES:
            raise ValidationError(f"soil {self.soil_id}: unknown texture class {self.texture_class!r}")
        if not 0 < self.lower_limit < self.drained_upper_limit < 1:
            raise ValidationError(f"soil {self.soil_id}: need 0 < ll < dul < 1")
        if self.depth_m <= 0:
            raise ValidationError(f"soil {self.soil_id}: depth must be positive")
        for r in (self.dry_reflectance_red, self.dry_reflectance_nir):
            if not 0 < r < 1:
                raise ValidationError(f"soil {self.soil_id}: reflectance {r} outside (0, 1)")

    @property
    def capacity_mm(self):
        return (self.drained_upper_limit - self.lower_limit) * self.depth_m * 1000.0


def load_soil_profiles(path):
    profiles = {}
    for lineno, row in _read_csv(path, SOIL_COLUMNS):
        try:
            nums = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise SchemaError(str(exc), path, lineno) from exc
        p = SoilProfile(row[0], row[1], *nums)
        if p.soil_id in profiles:
            raise SchemaError(f"duplicate soil_id {p.soil_id}", path, lineno)
        profiles[p.soil_id] = p
    return profiles


def write_soil_csv(path, profiles):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SOIL_COLUMNS)
        for p in profiles:
            w.writerow([p.soil_id, p.texture_class, p.drained_upper_limit, p.lower_limit, p.depth_m,
                        p.dry_reflectance_red, p.dry_reflectance_nir])


def match_soil_spectrum(texture_class, library):
    """Pick the spectrum sample for a texture class.

    ``library`` is an iterable of :class:`SoilProfile`-like objects carrying a
    ``texture_class`` and ``soil_id``. Ties go to the lexicographically smallest id.
    """
    hits = sorted((s for s in library if s.texture_class == texture_class), key=lambda s: s.soil_id)
    if not hits:
        raise ValidationError(f"no soil spectrum with texture class {texture_class!r}")
    return hits[0]


@dataclass(frozen=True)
class ProgressReport:
    zone_id: str
    season_id: str
    week_end_doy: tuple
    cumulative_pct: np.ndarray  # (n_weeks, 5) for SURVEY_STAGES

    def distributions(self):
        return np.array([cumulative_to_distribution(row) for row in self.cumulative_pct])


def _check_cumulative(cum, where=""):
    cum = np.asarray(cum, dtype=float)
    if cum.shape[-1] != len(SURVEY_STAGES):
        raise ValidationError(f"{where}expected {len(SURVEY_STAGES)} cumulative stages")
    if (cum < 0).any() or (cum > 100).any():
        raise ValidationError(f"{where}cumulative percentages outside [0, 100]")
    if (np.diff(cum, axis=-1) > 0).any():
        raise ValidationError(f"{where}later stage has a larger cumulative share than an earlier one")
    return cum


def cumulative_to_distribution(cum):
    """Convert cumulative stage percentages into a six-stage distribution.

    Parameters
    ----------
    cum : sequence of 5 floats
        Cumulative percent reaching Emerged, Silking, Dough, Mature, Harvested.

    Returns
    -------
    numpy.ndarray
        Fractions for pre-emergence through harvested, summing to one.
    """
    cum = _check_cumulative(cum) / 100.0
    upper = np.concatenate([[1.0], cum])
    lower = np.concatenate([cum, [0.0]])
    return upper - lower


def distribution_to_cumulative(dist):
    """Inverse of :func:`cumulative_to_distribution` (suffix sums, in percent)."""
    dist = np.asarray(dist, dtype=float)
    suffix = np.cumsum(dist[::-1])[::-1]
    return suffix[1:] * 100.0


def load_progress_reports(path):
    """Read a progress CSV; returns ``{(zone_id, season_id): ProgressReport}``."""
    grouped = {}
    for lineno, row in _read_csv(path, PROGRESS_COLUMNS):
        try:
            doy = int(row[2])
            cum = [float(v) for v in row[3:]]
        except ValueError as exc:
            raise SchemaError(str(exc), path, lineno) from exc
        _check_cumulative(cum, where=f"{path}:{lineno}: ")
        grouped.setdefault((row[0], row[1]), []).append((lineno, doy, cum))
    reports = {}
    for (zone, season), recs in grouped.items():
        doys = tuple(r[1] for r in recs)
        cum = np.array([r[2] for r in recs])
        if (np.diff(cum, axis=0) < 0).any():
            raise ValidationError(f"{path}: {zone}/{season}: cumulative progress decreases between weeks")
        reports[(zone, season)] = ProgressReport(zone, season, doys, cum)
    return reports


def write_progress_csv(path, reports):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROGRESS_COLUMNS)
        for r in reports:
            for doy, row in zip(r.week_end_doy, r.cumulative_pct):
                w.writerow([r.zone_id, r.season_id, doy, *(round(float(v), 6) for v in row)])

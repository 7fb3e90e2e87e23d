"""Thermal-time maize phenology with a single-layer soil bucket.

Stands in for a full process crop model: growth-stage progression is driven
purely by growing degree days, with a daylength-dependent delay between the
end of the juvenile phase and tasseling. Planting dates come from a soil
temperature/moisture gate and harvest follows maturity after a random
dry-down period.
"""
import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .ingest import STAGES
from .seasons import doy_of_index, index_of_doy
from .swg import gdd

PRE_EMERGENCE, EMERGED, SILKING, DOUGH, MATURE, HARVESTED = range(6)

PLANTING_SOIL_TEMP_C = 7.0
PLANTING_MOISTURE = (0.40, 0.90)
PLANTING_CANDIDATES = 10
DOUGH_GRAIN_FRACTION = 0.33
LAI_DECLINE_GRAIN_FRACTION = 0.8
LAI_EMERGENCE = 0.01
LAI_AT_MATURITY = 0.3
DRYDOWN_MEAN_DAYS = 30.0
DRYDOWN_SD_DAYS = 10.0
SOIL_TEMP_MEMORY = 0.8


@dataclass(frozen=True)
class Cultivar:
    gdd_emerge: float
    gdd_juvenile: float
    photoperiod_sensitivity: float  # days of delay per hour of daylength above threshold
    daylength_threshold_h: float
    gdd_tassel_to_silk: float
    gdd_silk_to_mature: float
    lai_max: float
    grainfill_shape: float

    def __post_init__(self):
        for name in ("gdd_emerge", "gdd_juvenile", "gdd_tassel_to_silk", "gdd_silk_to_mature"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"cultivar {name} must be positive")
        if not 0 < self.lai_max <= 8:
            raise ValidationError("cultivar lai_max must be in (0, 8]")
        if not 0 < self.grainfill_shape <= 1:
            raise ValidationError("cultivar grainfill_shape must be in (0, 1]")
        if self.photoperiod_sensitivity < 0:
            raise ValidationError("photoperiod_sensitivity must be nonnegative")


# Plausible full-season maize with an 8 degC base. Illustrative only: not
# calibrated against any named hybrid.
DEFAULT_CULTIVAR = Cultivar(
    gdd_emerge=60.0,
    gdd_juvenile=260.0,
    photoperiod_sensitivity=0.5,
    daylength_threshold_h=12.5,
    gdd_tassel_to_silk=420.0,
    gdd_silk_to_mature=780.0,
    lai_max=5.0,
    grainfill_shape=0.9,
)


def load_cultivar(path):
    try:
        return Cultivar(**json.loads(Path(path).read_text()))
    except TypeError as exc:
        raise ValidationError(f"{path}: bad cultivar fields ({exc})") from exc


def save_cultivar(path, cultivar):
    Path(path).write_text(json.dumps(asdict(cultivar), indent=1, sort_keys=True) + "\n")


def daylength_hours(latitude_deg, doy):
    """Astronomical daylength from solar declination; vectorised over doy."""
    decl = np.radians(23.45) * np.sin(2 * np.pi * (284 + np.asarray(doy)) / 365.0)
    x = -np.tan(np.radians(latitude_deg)) * np.tan(decl)
    return 24.0 / np.pi * np.arccos(np.clip(x, -1.0, 1.0))


# --- soil ----------------------------------------------------------------------

class WeatherDay(NamedTuple):
    tmax_c: float
    tmin_c: float
    srad_wm2: float
    prcp_mm: float


@dataclass(frozen=True)
class SoilState:
    water_mm: float
    temp_c: float
    capacity_mm: float

    def __post_init__(self):
        if not 0 <= self.water_mm <= self.capacity_mm:
            raise ValidationError("soil water outside [0, capacity]")

    @property
    def moisture_fraction(self):
        return self.water_mm / self.capacity_mm


def et_hargreaves(tmax_c, tmin_c, srad_wm2):
    """Reference evapotranspiration (mm/day) from the radiation form of Hargreaves.

    ``srad_wm2`` is the daily mean shortwave flux; it is converted to an
    evaporation equivalent with 0.0864 MJ per W/m2 per day and 0.408 mm per MJ.
    """
    tmean = 0.5 * (tmax_c + tmin_c)
    rs_mm = srad_wm2 * 0.0864 * 0.408
    return max(0.0135 * (tmean + 17.8) * rs_mm, 0.0)


def step_soil(state, day, profile=None):
    """Advance the bucket and the smoothed soil temperature by one day."""
    tmean = 0.5 * (day.tmax_c + day.tmin_c)
    temp = SOIL_TEMP_MEMORY * state.temp_c + (1 - SOIL_TEMP_MEMORY) * tmean
    water = state.water_mm + day.prcp_mm - et_hargreaves(day.tmax_c, day.tmin_c, day.srad_wm2)
    water = min(max(water, 0.0), state.capacity_mm)
    return SoilState(water, temp, state.capacity_mm)


def initial_soil_state(profile, weather, fill=0.5):
    tmean = 0.5 * (weather.tmax_c[0] + weather.tmin_c[0])
    cap = profile.capacity_mm
    return SoilState(fill * cap, float(tmean), cap)


@dataclass(frozen=True, eq=False)
class SoilTrace:
    temp_c: np.ndarray
    water_mm: np.ndarray
    capacity_mm: float

    @property
    def moisture_fraction(self):
        return self.water_mm / self.capacity_mm


def soil_trace(weather, profile, state=None):
    """Run :func:`step_soil` over a whole weather series (bare soil)."""
    state = state or initial_soil_state(profile, weather)
    n = len(weather)
    temp = np.empty(n)
    water = np.empty(n)
    cap = state.capacity_mm
    t, w = state.temp_c, state.water_mm
    tmean = 0.5 * (weather.tmax_c + weather.tmin_c)
    rs_mm = weather.srad_wm2 * 0.0864 * 0.408
    et = np.maximum(0.0135 * (tmean + 17.8) * rs_mm, 0.0)
    inflow = weather.prcp_mm - et
    for i in range(n):
        t = SOIL_TEMP_MEMORY * t + (1 - SOIL_TEMP_MEMORY) * tmean[i]
        w = min(max(w + inflow[i], 0.0), cap)
        temp[i] = t
        water[i] = w
    return SoilTrace(temp, water, cap)


def select_planting_doy(trace, window, rng):
    """Planting day index from the soil gate.

    Parameters
    ----------
    trace : SoilTrace
        Daily soil state indexed from the season origin.
    window : (int, int)
        Earliest and latest permissible day indices (inclusive).
    rng : numpy.random.Generator

    Returns
    -------
    int
        A uniform draw from the first ten qualifying days, or the latest day if
        none qualify.
    """
    first, last = window
    if first > last:
        raise ValueError(f"empty planting window {window}")
    last = min(last, len(trace.temp_c) - 1)
    idx = np.arange(first, last + 1)
    frac = trace.moisture_fraction[idx]
    ok = (trace.temp_c[idx] >= PLANTING_SOIL_TEMP_C) & (frac >= PLANTING_MOISTURE[0]) & (frac <= PLANTING_MOISTURE[1])
    cand = idx[ok][:PLANTING_CANDIDATES]
    if cand.size == 0:
        return int(last)
    return int(cand[rng.integers(cand.size)])


# --- phenology ---------------------------------------------------------------------

@dataclass
class PhenologyState:
    """Running thermal-time state of one crop from planting onwards."""

    cultivar: Cultivar
    latitude_deg: float
    cum_gdd: float = 0.0
    grain_fraction: float = 0.0
    events: dict = field(default_factory=dict)  # event name -> day index
    _juvenile_delay: int = 0
    gdd_at: dict = field(default_factory=dict)

    @property
    def stage(self):
        ev = self.events
        if "maturity" in ev:
            return MATURE
        if "dough" in ev:
            return DOUGH
        if "silking" in ev:
            return SILKING
        if "emergence" in ev:
            return EMERGED
        return PRE_EMERGENCE

    def _mark(self, name, day):
        self.events[name] = day
        self.gdd_at[name] = self.cum_gdd

    def advance(self, day_index, daily_gdd, doy):
        """Accumulate one day of thermal time and fire any stage transitions."""
        c = self.cultivar
        ev = self.events
        self.cum_gdd += daily_gdd
        g = self.cum_gdd
        if "emergence" not in ev and g >= c.gdd_emerge:
            self._mark("emergence", day_index)
        if "emergence" in ev and "juvenile_end" not in ev and g >= c.gdd_emerge + c.gdd_juvenile:
            self._mark("juvenile_end", day_index)
            excess = max(float(daylength_hours(self.latitude_deg, doy)) - c.daylength_threshold_h, 0.0)
            self._juvenile_delay = math.ceil(c.photoperiod_sensitivity * excess)
        if "juvenile_end" in ev and "tassel" not in ev and day_index - ev["juvenile_end"] >= self._juvenile_delay:
            self._mark("tassel", day_index)
        if "tassel" in ev and "silking" not in ev and g - self.gdd_at["tassel"] >= c.gdd_tassel_to_silk:
            self._mark("silking", day_index)
        if "silking" in ev and "maturity" not in ev:
            since = g - self.gdd_at["silking"]
            self.grain_fraction = min(since / (c.grainfill_shape * c.gdd_silk_to_mature), 1.0)
            if "dough" not in ev and self.grain_fraction >= DOUGH_GRAIN_FRACTION:
                self._mark("dough", day_index)
            if "grain80" not in ev and self.grain_fraction >= LAI_DECLINE_GRAIN_FRACTION:
                self._mark("grain80", day_index)
            if since >= c.gdd_silk_to_mature:
                self.grain_fraction = 1.0
                for name in ("dough", "grain80"):
                    if name not in ev:
                        self._mark(name, day_index)
                self._mark("maturity", day_index)
        return self


def advance_phenology(state, day_index, weather_day, doy):
    """Functional wrapper: advance ``state`` by one weather day and return it."""
    return state.advance(day_index, gdd(weather_day.tmax_c, weather_day.tmin_c), doy)


def harvest_doy(maturity_index, rng):
    """Maturity plus a dry-down of round(max(N(30, 10), 0)) days."""
    x = rng.normal(DRYDOWN_MEAN_DAYS, DRYDOWN_SD_DAYS)
    return int(maturity_index + round(max(x, 0.0)))


@dataclass(frozen=True, eq=False)
class PixelSeason:
    cell_id: str
    window: str
    start_doy: int
    planting_index: int
    stage: np.ndarray  # int8, index into STAGES
    lai: np.ndarray
    soil_moisture: np.ndarray  # fraction of bucket capacity
    grain_fraction: np.ndarray
    cum_gdd: np.ndarray  # thermal time since planting
    harvest_index: object  # int or None
    events: dict

    @property
    def complete(self):
        return self.harvest_index is not None

    def __len__(self):
        return len(self.stage)


def lai_curve(cum_gdd, events, gdd_at, cultivar, n_days, harvest_index):
    """Daily LAI from completed phenology.

    Logistic rise in thermal time from 0.01 at emergence to 95% of ``lai_max``
    at silking, centred on the end of the juvenile phase; linear decline from
    the day grain reaches 80% of final weight down to 0.3 at maturity; zero
    after harvest.
    """
    c = cultivar
    lai = np.zeros(n_days)
    if "emergence" not in events:
        return lai
    g_mid = c.gdd_emerge + c.gdd_juvenile
    g_e = gdd_at["emergence"]
    g_s = gdd_at.get("silking", g_mid + c.gdd_tassel_to_silk)
    slope = math.log(19.0) / max(g_s - g_mid, 1e-9)

    def sig(g):
        return 1.0 / (1.0 + np.exp(-slope * (np.asarray(g) - g_mid)))

    s_e, s_s = sig(g_e), 0.95
    top = 0.95 * c.lai_max
    d_e = events["emergence"]
    g = cum_gdd[d_e:]
    rise = LAI_EMERGENCE + (top - LAI_EMERGENCE) * (sig(g) - s_e) / (s_s - s_e)
    rise = np.clip(rise, LAI_EMERGENCE, c.lai_max)
    lai[d_e:] = rise
    if "silking" in events:
        lai[events["silking"]] = max(lai[events["silking"]], top)
    if "grain80" in events:
        d80 = events["grain80"]
        g80 = gdd_at["grain80"]
        l80 = lai[d80]
        g_mat = gdd_at["silking"] + c.gdd_silk_to_mature
        span = max(g_mat - g80, 1e-9)
        tail = np.clip((cum_gdd[d80:] - g80) / span, 0.0, 1.0)
        lai[d80:] = l80 + (LAI_AT_MATURITY - l80) * tail
    if "maturity" in events:
        lai[events["maturity"]:] = LAI_AT_MATURITY
    if harvest_index is not None:
        lai[harvest_index:] = 0.0
    return lai


def lai_at(season, day_index):
    return float(season.lai[day_index])


def simulate_pixel(cell, window, weather, cultivar, profile, zone, rng, trace=None):
    """Simulate one grid cell for one planting window over a season.

    Parameters
    ----------
    cell : GridCell
    window : str
        ``"early"`` or ``"late"``.
    weather : WeatherSeries
        Daily weather indexed from the zone's season origin.
    cultivar : Cultivar
    profile : SoilProfile
    zone : ZoneConfig
    rng : numpy.random.Generator
        Consumed for the planting draw, then the dry-down draw.
    trace : SoilTrace, optional
        Precomputed bare-soil trace for this cell's weather and soil.
    """
    n = len(weather)
    trace = trace if trace is not None else soil_trace(weather, profile)
    w = zone.window(window)
    span = (int(index_of_doy(w.earliest_doy, zone.season_start_doy)),
            int(index_of_doy(w.latest_doy, zone.season_start_doy)))
    planting = select_planting_doy(trace, span, rng)

    daily_gdd = gdd(weather.tmax_c, weather.tmin_c)
    doys = doy_of_index(np.arange(n), zone.season_start_doy)
    state = PhenologyState(cultivar, zone.latitude_deg)
    cum = np.zeros(n)
    grain = np.zeros(n)
    for d in range(planting + 1, n):
        state.advance(d, daily_gdd[d], doys[d])
        cum[d] = state.cum_gdd
        grain[d] = state.grain_fraction
        if "maturity" in state.events:
            cum[d + 1:] = state.cum_gdd + np.cumsum(daily_gdd[d + 1:])
            grain[d + 1:] = 1.0
            break
    ev = dict(state.events)

    harvest = None
    if "maturity" in ev:
        h = harvest_doy(ev["maturity"], rng)
        if h < n:
            harvest = h

    stage = np.full(n, PRE_EMERGENCE, dtype=np.int8)
    for name, code in (("emergence", EMERGED), ("silking", SILKING), ("dough", DOUGH), ("maturity", MATURE)):
        if name in ev:
            stage[ev[name]:] = code
    if harvest is not None:
        stage[harvest:] = HARVESTED
        ev["harvest"] = harvest
    lai = lai_curve(cum, ev, state.gdd_at, cultivar, n, harvest)
    return PixelSeason(
        cell_id=cell.cell_id, window=window, start_doy=zone.season_start_doy,
        planting_index=planting, stage=stage, lai=lai,
        soil_moisture=trace.moisture_fraction.copy(), grain_fraction=grain, cum_gdd=cum,
        harvest_index=harvest, events=ev,
    )


PIXEL_COLUMNS = ("cell_id", "window", "doy", "stage", "lai", "soil_moisture", "grain_frac")


def write_pixel_seasons(path, seasons):
    """Columnar CSV; each pixel's rows are preceded by a ``#`` header row
    carrying its planting and harvest day of year."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PIXEL_COLUMNS)
        for s in seasons:
            harvest = "" if s.harvest_index is None else int(doy_of_index(s.harvest_index, s.start_doy))
            w.writerow([f"# {s.cell_id}", s.window, f"planting_doy={int(doy_of_index(s.planting_index, s.start_doy))}",
                        f"harvest_doy={harvest}", "", "", ""])
            doys = doy_of_index(np.arange(len(s)), s.start_doy)
            for i in range(len(s)):
                w.writerow([s.cell_id, s.window, int(doys[i]), STAGES[s.stage[i]], f"{s.lai[i]:.6g}",
                            f"{s.soil_moisture[i]:.6g}", f"{s.grain_fraction[i]:.6g}"])

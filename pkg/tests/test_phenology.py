from dataclasses import replace

import numpy as np
import pytest

from cropsynth.phenology import (
    DEFAULT_CULTIVAR, HARVESTED, MATURE, PRE_EMERGENCE, PhenologyState, SoilState, SoilTrace, WeatherDay,
    harvest_doy, lai_at, load_cultivar, save_cultivar, select_planting_doy, simulate_pixel, soil_trace, step_soil,
)
from cropsynth.swg import WeatherSeries
from cropsynth.toy import TOY_SOILS

SOIL = TOY_SOILS[0]


def constant_weather(n, tmax=25.0, tmin=15.0, srad=150.0, prcp=3.0, start_doy=244):
    return WeatherSeries("c", start_doy, np.full(n, tmax), np.full(n, tmin), np.full(n, srad), np.full(n, prcp))


class FixedNormal:
    def __init__(self, value):
        self.value = value

    def normal(self, mean, sd):
        return self.value


def test_soil_no_flux():
    s = SoilState(50.0, 15.0, 100.0)
    out = step_soil(s, WeatherDay(-10.0, -10.0, 0.0, 0.0))
    assert out.water_mm == 50.0


def test_soil_overflow_clamps():
    s = SoilState(100.0, 15.0, 100.0)
    assert step_soil(s, WeatherDay(20.0, 10.0, 150.0, 500.0)).water_mm == 100.0


def test_soil_temperature_lag():
    s = SoilState(50.0, 10.0, 100.0)
    day = WeatherDay(20.0, 20.0, 0.0, 0.0)
    for n in range(1, 18):
        s = step_soil(s, day)
        assert s.temp_c == pytest.approx(10 + 10 * (1 - 0.8 ** n))
    assert abs(s.temp_c - 20.0) < 0.5


def test_trace_matches_stepping():
    w = constant_weather(30, prcp=1.0)
    tr = soil_trace(w, SOIL)
    s = SoilState(0.5 * SOIL.capacity_mm, 20.0, SOIL.capacity_mm)
    for i in range(30):
        s = step_soil(s, WeatherDay(25.0, 15.0, 150.0, 1.0))
        assert tr.water_mm[i] == pytest.approx(s.water_mm)
        assert tr.temp_c[i] == pytest.approx(s.temp_c)


def trace(temp, moist):
    return SoilTrace(np.asarray(temp, float), np.asarray(moist, float) * 100.0, 100.0)


def test_planting_uniform_over_first_ten():
    tr = trace(np.full(60, 15.0), np.full(60, 0.6))
    rng = np.random.default_rng(0)
    draws = np.array([select_planting_doy(tr, (10, 40), rng) for _ in range(10000)])
    assert draws.min() >= 10 and draws.max() <= 19
    freq = np.bincount(draws - 10, minlength=10) / len(draws)
    assert np.all(np.abs(freq - 0.1) <= 0.01)


def test_planting_fallback_to_latest():
    tr = trace(np.full(60, 3.0), np.full(60, 0.6))
    assert select_planting_doy(tr, (10, 40), np.random.default_rng(0)) == 40


def test_planting_after_warmup():
    temp = np.where(np.arange(60) >= 15, 9.0, 5.0)
    tr = trace(temp, np.full(60, 0.6))
    rng = np.random.default_rng(1)
    draws = {select_planting_doy(tr, (10, 40), rng) for _ in range(2000)}
    assert draws == set(range(15, 25))


def test_planting_empty_window():
    with pytest.raises(ValueError):
        select_planting_doy(trace(np.full(10, 10.0), np.full(10, 0.5)), (8, 3), np.random.default_rng(0))


def test_emergence_ceiling():
    cv = replace(DEFAULT_CULTIVAR, gdd_emerge=85.0)
    st = PhenologyState(cv, -34.0)
    for d in range(1, 10):
        st.advance(d, 17.0, 100)
    assert st.events["emergence"] == 5


def test_dough_onset_at_one_third_grain():
    st = PhenologyState(DEFAULT_CULTIVAR, -34.0)
    d = 0
    while "maturity" not in st.events:
        d += 1
        before = st.grain_fraction
        st.advance(d, 13.0, 300)
        if "dough" in st.events and st.events["dough"] == d:
            assert before < 0.33 <= st.grain_fraction
    assert st.events["silking"] < st.events["dough"] < st.events["maturity"]


def test_zero_gdd_never_transitions():
    st = PhenologyState(DEFAULT_CULTIVAR, -34.0)
    for d in range(200):
        st.advance(d, 0.0, 100)
    assert st.events == {} and st.stage == PRE_EMERGENCE


def test_harvest_dry_down_distribution():
    rng = np.random.default_rng(3)
    off = np.array([harvest_doy(0, rng) for _ in range(10000)])
    assert abs(off.mean() - 30) <= 0.5
    assert abs(off.std(ddof=1) - 10) <= 0.5


def test_harvest_truncation_and_centre():
    assert harvest_doy(100, FixedNormal(-5.0)) == 100
    assert harvest_doy(100, FixedNormal(30.0)) == 130


def test_benign_season_completes(dual_zone):
    cell = dual_zone.grid_cells[0]
    season = simulate_pixel(cell, "early", constant_weather(364), DEFAULT_CULTIVAR, SOIL, dual_zone,
                            np.random.default_rng(0))
    assert season.complete
    assert np.all(np.diff(season.stage) >= 0)
    assert set(np.unique(season.stage)) == set(range(6))
    assert season.stage[-1] == HARVESTED
    ev = season.events
    assert lai_at(season, ev["emergence"] - 1) == 0.0
    assert lai_at(season, ev["silking"]) >= 0.95 * DEFAULT_CULTIVAR.lai_max
    assert lai_at(season, season.harvest_index) == 0.0
    assert (season.lai >= 0).all()


def test_short_season_incomplete(dual_zone):
    season = simulate_pixel(dual_zone.grid_cells[0], "early", constant_weather(90), DEFAULT_CULTIVAR, SOIL,
                            dual_zone, np.random.default_rng(0))
    assert not season.complete
    assert season.stage.max() < MATURE


def test_pixel_deterministic(dual_zone):
    w = constant_weather(364, prcp=2.0)
    a, b = (simulate_pixel(dual_zone.grid_cells[1], "late", w, DEFAULT_CULTIVAR, SOIL, dual_zone,
                           np.random.default_rng(9)) for _ in range(2))
    for f in ("stage", "lai", "soil_moisture", "grain_fraction", "cum_gdd"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert a.events == b.events and a.harvest_index == b.harvest_index


def test_cultivar_round_trip(tmp_path):
    save_cultivar(tmp_path / "c.json", DEFAULT_CULTIVAR)
    assert load_cultivar(tmp_path / "c.json") == DEFAULT_CULTIVAR

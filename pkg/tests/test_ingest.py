import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cropsynth.errors import GapError, OrderingError, SchemaError, ValidationError
from cropsynth.ingest import (
    SoilProfile, cumulative_to_distribution, distribution_to_cumulative, load_progress_reports,
    load_weather_archive, load_zone_config, make_archive, match_soil_spectrum, write_weather_csv,
    zone_config_to_dict,
)
from conftest import archive_from, zone_dict


def test_zone_ix_split(tmp_path):
    p = tmp_path / "z.json"
    p.write_text(json.dumps(zone_dict()))
    z = load_zone_config(p)
    assert z.early_fraction == 0.51
    assert z.late_fraction == pytest.approx(0.49)
    # two weeks before the earliest planting day
    assert z.season_start_doy == 258 - 14


def test_single_late_window_zone(make_zone):
    z = make_zone(planting_windows=[["late", 335, 360]], early_fraction=0.0)
    assert z.window_names == ("late",)
    assert z.late_fraction == 1.0


def test_season_start_wraps_year(make_zone):
    z = make_zone(planting_windows=[["early", 5, 30]], early_fraction=1.0)
    assert z.season_start_doy == 356


def test_empty_window_rejected(make_zone):
    with pytest.raises(ValidationError):
        make_zone(planting_windows=[["early", 300, 300]], early_fraction=1.0)


def test_early_fraction_inconsistent_with_windows(make_zone):
    with pytest.raises(ValidationError):
        make_zone(planting_windows=[["late", 335, 360]], early_fraction=0.3)


def test_zone_round_trip(make_zone):
    z = make_zone()
    from cropsynth.ingest import zone_config_from_dict

    assert zone_config_from_dict(zone_config_to_dict(z)) == z


def test_zone_json_error_has_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "zone_id": "X",\n  oops\n}')
    with pytest.raises(SchemaError) as ei:
        load_zone_config(p)
    assert ei.value.line == 3


def test_weather_38_years(tmp_path):
    dates = np.arange(np.datetime64("1984-01-01"), np.datetime64("2022-01-01"))
    n = len(dates)
    a = make_archive("P1", dates, np.full(n, 20.0), np.full(n, 10.0), np.full(n, 150.0), np.zeros(n))
    write_weather_csv(tmp_path / "w.csv", [a])
    b = load_weather_archive(tmp_path / "w.csv")
    assert len(b) == 38 * 365 + 10  # 10 leap days 1984..2020
    assert np.array_equal(b.dates, a.dates)


def test_negative_precip_rejected():
    with pytest.raises(ValidationError):
        archive_from([0.0, -1.0, 0.0])


def test_duplicate_date_is_ordering_error():
    d = np.array(["2000-01-01", "2000-01-01"], dtype="datetime64[D]")
    with pytest.raises(OrderingError):
        make_archive("S", d, [20, 20], [10, 10], [100, 100], [0, 0])


def test_gap_within_year():
    d = np.array(["2000-01-01", "2000-01-03"], dtype="datetime64[D]")
    with pytest.raises(GapError):
        make_archive("S", d, [20, 20], [10, 10], [100, 100], [0, 0])


def test_tmax_below_tmin_names_date():
    with pytest.raises(ValidationError, match="2001-01-02"):
        archive_from([0, 0, 0], tmax=[20, 5, 20], tmin=[10, 10, 10])


def test_missing_field_rejected(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("station_id,date,tmax_c,tmin_c,srad_wm2,prcp_mm\nS,2000-01-01,20,10,,0\n")
    with pytest.raises(ValidationError):
        load_weather_archive(p)


@pytest.mark.parametrize("cum,expected", [
    ((0, 0, 0, 0, 0), (1, 0, 0, 0, 0, 0)),
    ((100, 100, 100, 100, 100), (0, 0, 0, 0, 0, 1)),
    ((80, 30, 10, 0, 0), (0.2, 0.5, 0.2, 0.1, 0, 0)),
])
def test_cumulative_to_distribution(cum, expected):
    np.testing.assert_allclose(cumulative_to_distribution(cum), expected, atol=1e-12)


def test_cumulative_not_monotone_rejected():
    with pytest.raises(ValidationError):
        cumulative_to_distribution((30, 80, 0, 0, 0))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=5, max_size=5))
def test_cumulative_round_trip(vals):
    cum = np.sort(vals)[::-1]
    dist = cumulative_to_distribution(cum)
    assert dist.min() >= -1e-12
    assert abs(dist.sum() - 1) < 1e-9
    np.testing.assert_allclose(distribution_to_cumulative(dist), cum, atol=1e-9)


def test_progress_weeks_must_not_decrease(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("zone_id,season_id,week_end_doy,cum_emerged,cum_silking,cum_dough,cum_mature,cum_harvested\n"
                 "Z,2019,300,50,0,0,0,0\nZ,2019,307,40,0,0,0,0\n")
    with pytest.raises(ValidationError):
        load_progress_reports(p)


def test_soil_spectrum_tie_break():
    lib = [SoilProfile(i, "loam", 0.3, 0.1, 1.0, 0.2, 0.3) for i in ("b7", "a2", "c1")]
    assert match_soil_spectrum("loam", lib).soil_id == "a2"
    with pytest.raises(ValidationError):
        match_soil_spectrum("clay", lib)


def test_toy_archives_satisfy_invariants(toy_archives):
    for a in toy_archives:
        assert (a.tmax_c >= a.tmin_c).all()
        assert (a.prcp_mm >= 0).all()

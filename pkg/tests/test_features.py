import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cropsynth.errors import AlignmentError, ConfigError, ValidationError
from cropsynth.features import (
    N_FEATURES, WindowFragment, ZoneDataset, assemble, histogram_day, histogram_series, interpolate_daily,
    mask_input, mask_through_week, split_by_season, stage_fractions, weight_windows, window_fragment,
)
from cropsynth.seasons import SEASON_LENGTH
from conftest import random_dataset


def test_interpolate_midpoint():
    daily = interpolate_daily([100, 108], [0.2, 0.6], n_days=120)
    assert daily[104] == pytest.approx(0.4)
    assert daily[0] == pytest.approx(0.2) and daily[119] == pytest.approx(0.6)


def test_interpolate_clamps_negative():
    daily = interpolate_daily([0, 10], [-0.1, 0.5], n_days=11)
    assert daily[0] == 0.0
    assert (daily >= 0).all()


def test_interpolate_needs_two_points():
    with pytest.raises(ValidationError):
        interpolate_daily([5], [0.3])


def test_histogram_examples():
    h = histogram_day(np.full(100, 0.5), "ndvi")
    assert h[10] == 1.0 and h.sum() == 1.0
    assert histogram_day([1.0], "ndvi")[19] == 1.0
    assert histogram_day([30.0], "gdd")[26] == 1.0
    assert histogram_day([0.0, 25.5], "gdd")[[0, 25]].tolist() == [0.5, 0.5]
    with pytest.raises(ValidationError):
        histogram_day([], "ndvi")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
def test_histogram_is_distribution(vals):
    h = histogram_day(vals, "ndvi")
    assert h.shape == (20,)
    assert h.sum() == pytest.approx(1.0)
    assert (h >= 0).all()


def test_histogram_series_matches_days():
    rng = np.random.default_rng(0)
    v = rng.random((7, 15))
    hs = histogram_series(v, "ndvi")
    for d in range(15):
        np.testing.assert_allclose(hs[d], histogram_day(v[:, d], "ndvi"))


def frag(targets, hist_bin):
    T = 14
    hist = np.zeros((T, 20))
    hist[:, hist_bin] = 1.0
    return WindowFragment(hist, 5, np.array([6, 13]), np.asarray(targets, float))


def test_weight_windows_degenerate_and_convex():
    early = frag([[0, 1, 0, 0, 0, 0]] * 2, 3)
    late = frag([[1, 0, 0, 0, 0, 0]] * 2, 8)
    h, days, t = weight_windows(early, late, 1.0)
    assert np.array_equal(t, early.targets) and np.array_equal(h, early.ndvi_hist)
    _, _, t = weight_windows(early, late, 0.5)
    np.testing.assert_allclose(t, [[0.5, 0.5, 0, 0, 0, 0]] * 2)


def test_weight_windows_zone_ix():
    rng = np.random.default_rng(1)
    te, tl = rng.dirichlet(np.ones(6), 2), rng.dirichlet(np.ones(6), 2)
    early, late = frag(te, 2), frag(tl, 12)
    h, _, t = weight_windows(early, late, 0.51)
    for w in range(2):
        for s in range(6):
            assert t[w, s] == pytest.approx(0.51 * te[w, s] + 0.49 * tl[w, s])
    assert h[0, 2] == pytest.approx(0.51) and h[0, 12] == pytest.approx(0.49)


def test_weight_windows_alignment():
    early = frag([[1, 0, 0, 0, 0, 0]] * 2, 0)
    late = WindowFragment(early.ndvi_hist, 5, np.array([6, 20]), early.targets)
    with pytest.raises(AlignmentError):
        weight_windows(early, late, 0.5)


def test_window_fragment_targets():
    stages = np.array([[0, 0, 1, 1, 2], [0, 1, 1, 2, 2]])
    ndvi = np.full((2, 5), 0.3)
    f = window_fragment(ndvi, stages, np.array([1, 4]), T=5)
    np.testing.assert_allclose(f.targets, [[0.5, 0.5, 0, 0, 0, 0], [0, 0, 1, 0, 0, 0]])
    np.testing.assert_allclose(stage_fractions(stages[:, [2]]), [[0, 1, 0, 0, 0, 0]])


def test_mask_through_week():
    ds = random_dataset(T=SEASON_LENGTH)
    full = mask_through_week(ds, len(ds.target_days) - 1)
    assert np.array_equal(full, ds.inputs())
    first = mask_through_week(ds, 0)
    assert ds.target_days[0] == 6
    assert (first[7:] == 0).all()
    assert np.array_equal(first[:7], ds.inputs()[:7])
    with pytest.raises(IndexError):
        mask_through_week(ds, len(ds.target_days))


def test_mask_does_not_mutate():
    x = np.ones((10, N_FEATURES))
    mask_input(x, 3)
    assert (x == 1).all()


def test_dataset_round_trip(tmp_path):
    ds = random_dataset(seed=4)
    ds.save(tmp_path / "d")
    back = ZoneDataset.load(tmp_path / "d")
    for f in ("ndvi_hist", "gdd_hist", "target_days", "target_weeks", "targets"):
        assert np.array_equal(getattr(ds, f), getattr(back, f))
    assert back.key == ds.key


def test_dataset_rejects_bad_targets():
    ds = random_dataset()
    with pytest.raises(ValidationError):
        ZoneDataset("Z", "1", "synthetic", ds.ndvi_hist, ds.gdd_hist, ds.target_weeks, ds.target_days,
                    ds.targets * 2)


def pools():
    sur = [random_dataset(z, 2000 + s, "surveyed", seed=s) for z in ("IX", "X") for s in range(10)]
    syn = [random_dataset(z, f"{s:03d}", "synthetic", seed=s) for z in ("IX", "X", "XI") for s in range(10)]
    return sur, syn


def test_asyn1usur_uses_target_zone_only():
    sur, syn = pools()
    a = assemble("Asyn1Usur", sur, syn, target_zone="IX")
    used = a.train_synthetic + a.val_synthetic
    assert {d.zone_id for d in used} == {"IX"}
    assert len(used) == 10
    assert len(a.train_surveyed) + len(a.val_surveyed) == len(sur)


def test_split_by_season_80_20():
    sur, _ = pools()
    tr, va = split_by_season(sur, 0.2, np.random.default_rng(0))
    assert len({d.season_id for d in tr}) == 8 and len({d.season_id for d in va}) == 2
    assert not {d.season_id for d in tr} & {d.season_id for d in va}


def test_asynusur_partition():
    sur, syn = pools()
    a = assemble("AsynUsur", sur, syn)
    everything = a.train_surveyed + a.train_synthetic + a.val_surveyed + a.val_synthetic
    assert sorted(map(id, everything)) == sorted(map(id, sur + syn))
    assert a.paired and a.criterion == "divergence"
    assert a.train == a.train_synthetic


def test_assemble_errors():
    sur, syn = pools()
    with pytest.raises(ConfigError):
        assemble("Usur", [], syn)
    with pytest.raises(ConfigError):
        assemble("Asyn1Usur", sur, syn)
    with pytest.raises(ConfigError):
        assemble("Asyn1Usur", sur, syn, target_zone="nowhere")
    with pytest.raises(ConfigError):
        assemble("Both", sur, syn)

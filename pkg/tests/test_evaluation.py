import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cropsynth.errors import AlignmentError, UndefinedScoreError, ValidationError
from cropsynth.evaluation import (
    StageTally, combine_reports, evaluate, f1, net_f1, oracle_estimator, tally_stage,
)
from cropsynth.features import ZoneDataset
from cropsynth.ingest import STAGES
from conftest import random_dataset

weeks = st.integers(1, 30)


def fractions(n):
    # a 1/1000 grid keeps nonzero differences far above rounding noise
    return st.lists(st.integers(0, 1000).map(lambda k: k / 1000), min_size=n, max_size=n)


def test_tally_examples():
    obs = np.array([0.2, 0.5, 0.9])
    t = tally_stage(obs, obs)
    assert (t.fp, t.fn) == (0, 0) and t.tp == pytest.approx(1.6)
    assert tally_stage([1, 0], [0, 1]) == StageTally(0, 1, 1)
    t = tally_stage([0.6, 0.2], [0.4, 0.4])
    assert (t.tp, t.fp, t.fn) == pytest.approx((0.6, 0.2, 0.2))
    with pytest.raises(AlignmentError):
        tally_stage([0.1], [0.1, 0.2])


def test_f1_examples():
    assert f1(StageTally(2, 1, 1)) == pytest.approx(0.6667, abs=1e-4)
    assert f1(StageTally(3, 0, 0)) == 1.0
    assert f1(StageTally(0, 1, 2)) == 0.0
    with pytest.raises(UndefinedScoreError):
        f1(StageTally(0, 0, 0))


def test_net_f1_examples():
    t = StageTally(2, 1, 1)
    assert net_f1([t]) == f1(t)
    assert net_f1([t, t]) == pytest.approx(f1(t))
    assert net_f1([StageTally(1, 1, 0), StageTally(1, 0, 1)]) == pytest.approx(2 / 3)
    a, b = StageTally(3, 1, 0), StageTally(1, 0, 3)
    assert net_f1([a, b]) == pytest.approx(4 / 6)
    assert (f1(a) + f1(b)) / 2 == pytest.approx(0.629, abs=1e-3)
    with pytest.raises(ValidationError):
        net_f1([])


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_tally_matches_bruteforce_and_symmetry(data):
    n = data.draw(weeks)
    est = data.draw(fractions(n))
    obs = data.draw(fractions(n))
    t = tally_stage(est, obs)
    tp = fp = fn = 0.0
    for e, o in zip(est, obs):
        tp += min(e, o)
        fp += e - o if e > o else 0.0
        fn += o - e if o > e else 0.0
    assert (t.tp, t.fp, t.fn) == pytest.approx((tp, fp, fn), abs=1e-12)
    assert t.tp + t.fp == pytest.approx(sum(est))
    assert t.tp + t.fn == pytest.approx(sum(obs))
    s = tally_stage(obs, est)
    assert (s.fp, s.fn) == pytest.approx((t.fn, t.fp))
    if t.tp + t.fp + t.fn > 0:
        assert 0.0 <= f1(t) <= 1.0
        assert f1(s) == pytest.approx(f1(t))
        assert (f1(t) == 1.0) == (t.fp == 0 and t.fn == 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(1, 20)), min_size=2, max_size=8),
       st.randoms())
def test_net_f1_partition_invariant(parts, rnd):
    tallies = [StageTally(*map(float, p)) for p in parts]
    shuffled = list(tallies)
    rnd.shuffle(shuffled)
    k = len(shuffled) // 2
    grouped = [sum(shuffled[:k], StageTally()), sum(shuffled[k:], StageTally())]
    assert net_f1(grouped) == net_f1(tallies)


def pre_emergence_season(W=10):
    base = random_dataset("Z", "2001", "surveyed", T=7 * W)
    t = np.zeros((W, 6))
    t[:, 0] = 1.0
    return ZoneDataset("Z", "2001", "surveyed", base.ndvi_hist, base.gdd_hist, base.target_weeks,
                       base.target_days, t)


def test_oracle_scores_one():
    ds = [random_dataset(z, s, "surveyed", seed=i) for i, (z, s) in enumerate([("A", 1), ("A", 2), ("B", 1)])]
    rep = evaluate(oracle_estimator, ds)
    assert rep.overall() == 1.0
    for z in rep.zones:
        for s in STAGES:
            assert rep.f1(z, s) == pytest.approx(1.0)


def test_uniform_estimator_on_pre_emergence_season():
    ds = pre_emergence_season()
    rep = evaluate(lambda d: np.full(d.targets.shape, 1 / 6), [ds])
    # the stage's own over/under tallies give 2/7
    assert rep.f1("Z", "pre_emergence") == pytest.approx(2 / 7)
    # pooled over all six stages the overestimates land on the other stages: 1/6
    assert rep.net_s("Z") == pytest.approx(1 / 6)
    assert rep.f1("Z", "emerged") == 0.0


def test_report_files_recompute(tmp_path):
    rng = np.random.default_rng(0)
    ds = [random_dataset(z, s, "surveyed", seed=i) for i, (z, s) in enumerate([("A", 1), ("B", 1), ("B", 2)])]
    rep = evaluate(lambda d: rng.dirichlet(np.ones(6), len(d.targets)), ds)
    rep.write(tmp_path)
    doc = json.loads((tmp_path / "report.json").read_text())
    tallies = {k: StageTally(*v) for k, v in doc["tallies"].items()}
    for z in ("A", "B"):
        assert doc["net_s"][z] == pytest.approx(net_f1(tallies[f"{z}/{s}"] for s in STAGES), abs=0)
    for s in STAGES:
        assert doc["net_z"][s] == pytest.approx(net_f1(tallies[f"{z}/{s}"] for z in ("A", "B")), abs=0)
    assert doc["overall"] == net_f1(tallies.values())
    rows = (tmp_path / "report.csv").read_text().splitlines()
    assert rows[0].split(",") == ["zone", *STAGES, "Net_S"]
    assert rows[-1].startswith("Net_Z,")
    series = (tmp_path / "report_series.csv").read_text().splitlines()
    assert len(series) == 1 + 6 * sum(len(d.target_days) for d in ds)
    assert combine_reports([tmp_path / "report.json"])[0]["overall"] == doc["overall"]


def test_missing_targets():
    base = random_dataset(n_weeks=0)
    with pytest.raises(ValidationError):
        evaluate(oracle_estimator, [base])
    with pytest.raises(ValidationError):
        evaluate(oracle_estimator, [])


def test_estimate_shape_mismatch():
    with pytest.raises(AlignmentError):
        evaluate(lambda d: np.full((1, 6), 1 / 6), [random_dataset()])

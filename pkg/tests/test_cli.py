import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from cropsynth import pipeline
from cropsynth.cli import main
from cropsynth.evaluation import evaluate, oracle_estimator
from cropsynth.features import ZoneDataset
from cropsynth.phenology import DEFAULT_CULTIVAR
from cropsynth.swg import calibrate
from cropsynth.toy import TOY_SOILS, procedural_archives, toy_zone, write_toy_fixture

SMALL_EXPERIMENT = {
    "network": {"hidden": 6, "time_stride": 7},
    "training": {"epochs": 3, "batch": 128, "combinations": ["Asyn", "AsynUsur"]},
}


def small_fixture(root, **kw):
    args = dict(n_years=30, survey_years=range(2014, 2019), seasons_per_zone=4, n_cells=4,
                experiment=SMALL_EXPERIMENT)
    args.update(kw)
    return write_toy_fixture(root, **args)


def run_all(config):
    codes = [main(["--config", str(config), cmd]) for cmd in ("calibrate", "generate", "featurize")]
    codes.append(main(["--config", str(config), "train"]))
    codes.append(main(["--config", str(config), "eval"]))
    codes.append(main(["--config", str(config), "report"]))
    return codes


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    config = small_fixture(root)
    codes = run_all(config)
    return config, root / "out", codes


def test_full_pipeline_completes(pipeline_run, capsys):
    config, out, codes = pipeline_run
    assert codes == [0] * 6
    assert sorted(p.name for p in (out / "models").glob("*.swg.json")) == ["Z1.swg.json", "Z2.swg.json", "Z3.swg.json"]
    manifest = json.loads((out / "datasets" / "synthetic" / "manifest.json").read_text())
    assert len(manifest["datasets"]) == 12
    ds = ZoneDataset.load(out / manifest["datasets"][0]["path"])
    assert ds.ndvi_hist.shape == (364, 20) and ds.gdd_hist.shape == (364, 27)
    run = json.loads((out / "runs" / "Asyn" / "run.json").read_text())
    assert len(run["losses"]) == 3 and run["criterion"] == "loss"
    assert json.loads((out / "runs" / "AsynUsur" / "run.json").read_text())["criterion"] == "divergence"
    for combo in ("Asyn", "AsynUsur"):
        assert (out / "reports" / combo / "report.csv").exists()
        assert (out / "reports" / combo / "report_series.csv").exists()
    assert (out / "reports" / "summary.csv").read_text().startswith("combination,pre_emergence")


def test_calibrate_rerun_is_byte_identical(pipeline_run, tmp_path):
    config, out, _ = pipeline_run
    before = {p.name: p.read_bytes() for p in (out / "models").iterdir()}
    assert main(["--config", str(config), "--out", str(tmp_path / "again"), "calibrate"]) == 0
    after = {p.name: p.read_bytes() for p in (tmp_path / "again" / "models").iterdir()}
    assert before == after


def test_oracle_report_is_perfect(pipeline_run):
    config, _, _ = pipeline_run
    cfg = pipeline.load_config(config)
    _, _, test = pipeline._pools(cfg)
    assert evaluate(oracle_estimator, test).overall() == 1.0


def test_exit_codes(tmp_path, pipeline_run, capsys):
    config, _, _ = pipeline_run
    assert main(["--config", str(tmp_path / "missing.json"), "calibrate"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{\n oops\n}")
    assert main(["--config", str(bad), "calibrate"]) == 2
    assert main(["--config", str(config)]) == 2  # no subcommand
    assert main(["--config", str(config), "train", "--combination", "Both"]) == 2
    assert main(["--config", str(config), "--jobs", "0", "generate"]) == 2
    capsys.readouterr()


def test_invalid_weather_is_exit_3(tmp_path):
    config = small_fixture(tmp_path)
    lines = (tmp_path / "weather.csv").read_text().splitlines()
    cols = lines[5].split(",")
    cols[-1] = "-1.0"
    lines[5] = ",".join(cols)
    (tmp_path / "weather.csv").write_text("\n".join(lines) + "\n")
    assert main(["--config", str(config), "calibrate"]) == 3


def test_paired_combination_needs_surveyed_pool(pipeline_run, tmp_path):
    config, out, _ = pipeline_run
    fresh = tmp_path / "o"
    shutil.copytree(out / "models", fresh / "models")
    shutil.copytree(out / "datasets" / "synthetic", fresh / "datasets" / "synthetic")
    assert main(["--config", str(config), "--out", str(fresh), "train", "--combination", "AsynUsur"]) == 2


def test_empty_test_filter_is_validation_error(pipeline_run):
    config, _, _ = pipeline_run
    cfg = pipeline.load_config(config)
    cfg.test_filters = []
    with pytest.raises(pipeline.ValidationError):
        pipeline.run_eval(cfg, "Asyn")


def test_degenerate_station_listed(tmp_path):
    config = small_fixture(tmp_path)
    zone_path = tmp_path / "zones" / "Z1.json"
    doc = json.loads(zone_path.read_text())
    doc["station_ids"].append("tiny")
    doc["station_coords"]["tiny"] = [-34.5, -61.5]
    zone_path.write_text(json.dumps(doc))
    rows = [f"tiny,2000-01-0{d},20,10,150,0" for d in range(1, 6)]
    with (tmp_path / "weather.csv").open("a") as fh:
        fh.write("\n".join(rows) + "\n")
    assert main(["--config", str(config), "calibrate"]) == 0
    diag = json.loads((tmp_path / "out" / "models" / "diagnostics.json").read_text())
    assert "tiny" in diag["Z1"]["failed"]
    assert "tiny" not in diag["Z1"]["stations"]


def test_single_station_zone_has_scalar_correlations():
    zone = toy_zone("S", [("late", 335, 360)], 0.0, n_cells=2, n_stations=1)
    model = calibrate(procedural_archives(list(zone.station_ids), n_years=10, seed=1), zone.station_coords)
    for c in (model.occ_corr, model.amt_corr, model.res_corr):
        assert np.array_equal(c, np.eye(1))


def test_early_only_zone_skips_late_window():
    zone = toy_zone("E", [("early", 258, 285), ("late", 335, 360)], 1.0, n_cells=2)
    soils = {s.soil_id: s for s in TOY_SOILS}
    model = calibrate(procedural_archives(list(zone.station_ids), n_years=10, seed=2), zone.station_coords)
    weather = pipeline.swg.generate_season(model, zone, 364, 0)
    sims = pipeline.simulate_windows(zone, weather, soils, DEFAULT_CULTIVAR, pipeline.canopy.DEFAULT_OPTICS, 0, 0)
    assert list(sims) == ["early"]


def test_module_entry_point(pipeline_run):
    config, _, _ = pipeline_run
    res = subprocess.run([sys.executable, "-m", "cropsynth", "--config", str(config), "report"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("combination,")

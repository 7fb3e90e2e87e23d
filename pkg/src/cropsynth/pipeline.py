"""End-to-end orchestration: experiment config, generation, featurization,
training and evaluation over a directory layout.

Output layout under the output root::

    models/<zone>.swg.json
    datasets/<origin>/<zone>/<season>/   (ZoneDataset directories)
    datasets/<origin>/manifest.json
    runs/<combination>/                  (run.json, losses.csv, checkpoints)
    reports/<combination>/               (report.csv, report.json, report_series.csv)
    reports/summary.csv

Every random draw comes from :func:`cropsynth.swg.stream_seed` keyed by the
root seed and a path ``(zone, season, cell, window, purpose)``.
"""
import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import canopy, features, phenology, swg
from .errors import ConfigError, DegenerateClimateError, SchemaError, ValidationError
from .evaluation import combine_reports, evaluate
from .features import ZoneDataset
from .ingest import (
    STAGES, _read_csv, load_progress_reports, load_soil_profiles, load_weather_archives, load_zone_config,
)
from .seasons import SEASON_LENGTH, index_of_doy, week_end_indices
from .seqnet import NetConfig
from .training import TrainConfig, load_run, train

log = logging.getLogger(__name__)

NDVI_OBS_COLUMNS = ("zone_id", "season_id", "pixel_id", "doy", "ndvi")


# --- configuration -------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    base_dir: Path
    zones: list  # zone config paths
    weather: str
    soils: str
    output: str
    progress: str = None
    ndvi_obs: str = None
    cultivar: str = None
    seasons_per_zone: int = 99
    seed: int = 0
    network: NetConfig = field(default_factory=NetConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    combinations: tuple = ("Usur", "Asyn", "Asyn1Usur", "AsynUsur")
    target_zone: str = None
    val_fraction: float = 0.2
    # datasets matching any filter are kept out of training and used for evaluation
    test_filters: list = field(default_factory=list)
    jobs: int = 1

    def path(self, p):
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out(self):
        return self.path(self.output)


def _require(d, key, where):
    if key not in d:
        raise ConfigError(f"config: missing {where}.{key}")
    return d[key]


def config_from_dict(doc, base_dir=".", overrides=None):
    """Build an :class:`ExperimentConfig` from a decoded JSON document.

    ``overrides`` may set ``seed``, ``output`` and ``jobs`` (command-line flags).
    """
    paths = _require(doc, "paths", "")
    swg_doc = doc.get("swg", {})
    pheno = doc.get("phenology", {})
    tr = dict(doc.get("training", {}))
    ev = doc.get("evaluation", {})
    zones = _require(paths, "zones", "paths")
    if isinstance(zones, str):
        zones = [zones]
    try:
        net = NetConfig(**doc.get("network", {}))
        combos = tuple(tr.pop("combinations", ExperimentConfig.combinations))
        target_zone = tr.pop("target_zone", None)
        val_fraction = float(tr.pop("val_fraction", 0.2))
        tcfg = TrainConfig(**tr)
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from exc
    for c in combos:
        if c not in features.COMBINATIONS:
            raise ConfigError(f"config: unknown combination {c!r}")
    cfg = ExperimentConfig(
        base_dir=Path(base_dir), zones=list(zones), weather=_require(paths, "weather", "paths"),
        soils=_require(paths, "soils", "paths"), output=paths.get("output", "out"),
        progress=paths.get("progress"), ndvi_obs=paths.get("ndvi_obs"), cultivar=pheno.get("cultivar"),
        seasons_per_zone=int(swg_doc.get("seasons_per_zone", 99)), seed=int(swg_doc.get("seed", 0)),
        network=net, training=tcfg, combinations=combos, target_zone=target_zone, val_fraction=val_fraction,
        test_filters=list(ev.get("test_filters", [])), jobs=int(doc.get("jobs", 1)),
    )
    for k, v in (overrides or {}).items():
        if v is not None:
            setattr(cfg, k, v)
    if cfg.seasons_per_zone < 1:
        raise ConfigError("config: seasons_per_zone must be at least 1")
    if cfg.jobs < 1:
        raise ConfigError("config: jobs must be at least 1")
    return cfg


def load_config(path, overrides=None):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return config_from_dict(doc, path.parent, overrides)


def _existing(cfg, p, what):
    path = cfg.path(p)
    if path is None or not path.exists():
        raise ConfigError(f"{what} file {path} does not exist")
    return path


def load_inputs(cfg):
    """Zones, weather archives, soils and cultivar referenced by ``cfg``."""
    zones = [load_zone_config(_existing(cfg, z, "zone config")) for z in cfg.zones]
    ids = [z.zone_id for z in zones]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate zone ids in config")
    archives = load_weather_archives(_existing(cfg, cfg.weather, "weather"))
    soils = load_soil_profiles(_existing(cfg, cfg.soils, "soil"))
    cultivar = phenology.load_cultivar(_existing(cfg, cfg.cultivar, "cultivar")) if cfg.cultivar \
        else phenology.DEFAULT_CULTIVAR
    return zones, archives, soils, cultivar


# --- simulation of one zone-season ---------------------------------------------------

def _weights_needed(zone):
    return [w for w in zone.window_names if zone.window_weight(w) > 0]


def simulate_windows(zone, weather, soils, cultivar, optics, seed, season_key, windows=None, cells=None):
    """Pixel seasons and daily NDVI for every (cell, window).

    Returns ``{window: (list of PixelSeason, (n_cells, T) NDVI array)}``.
    """
    windows = _weights_needed(zone) if windows is None else windows
    cells = zone.grid_cells if cells is None else cells
    out = {w: ([], []) for w in windows}
    for cell in cells:
        if cell.soil_id not in soils:
            raise ValidationError(f"zone {zone.zone_id}, cell {cell.cell_id}: unknown soil {cell.soil_id}")
        profile = soils[cell.soil_id]
        wx = weather[cell.cell_id]
        trace = phenology.soil_trace(wx, profile)
        for w in windows:
            try:
                rng = np.random.default_rng(swg.stream_seed(seed, zone.zone_id, season_key, cell.cell_id, w, "crop"))
                season = phenology.simulate_pixel(cell, w, wx, cultivar, profile, zone, rng, trace)
                rng = np.random.default_rng(swg.stream_seed(seed, zone.zone_id, season_key, cell.cell_id, w, "ndvi"))
                nd = canopy.simulate_ndvi_series(season, profile, optics, rng)
            except ValidationError as exc:
                raise type(exc)(f"zone {zone.zone_id}, season {season_key}, cell {cell.cell_id}: {exc}") from exc
            out[w][0].append(season)
            out[w][1].append(nd)
    return {w: (s, np.array(n)) for w, (s, n) in out.items()}


def gdd_matrix(weather, cells):
    return np.array([swg.gdd(weather[c.cell_id].tmax_c, weather[c.cell_id].tmin_c) for c in cells])


def synthetic_zone_season(zone, model, soils, cultivar, seed, season_index, optics=canopy.DEFAULT_OPTICS,
                          T=SEASON_LENGTH):
    """One synthetic :class:`ZoneDataset`: weather, pixels, NDVI, histograms and weighted targets."""
    weather = swg.generate_season(model, zone, T, seed, season_index)
    sims = simulate_windows(zone, weather, soils, cultivar, optics, seed, season_index)
    days = week_end_indices(T)
    fragments = {w: features.window_fragment(nd, np.array([s.stage for s in seasons]), days, T)
                 for w, (seasons, nd) in sims.items()}
    return features.synthetic_dataset(zone, f"{season_index:03d}", fragments, gdd_matrix(weather, zone.grid_cells), T)


def _synthetic_job(args):
    return synthetic_zone_season(*args)


# --- surveyed inputs -----------------------------------------------------------------

def season_dates(zone, season_year, T=SEASON_LENGTH):
    start = np.datetime64(f"{int(season_year):04d}-01-01") + (zone.season_start_doy - 1)
    return start + np.arange(T)


def archive_season_weather(zone, archives, season_year, T=SEASON_LENGTH):
    """Historical weather of each grid cell (nearest station) for the season starting in ``season_year``."""
    dates = season_dates(zone, season_year, T)
    stations = [s for s in zone.station_ids if s in archives]
    if not stations:
        raise ConfigError(f"zone {zone.zone_id}: no weather archive for any of its stations")
    per_station = {}
    for sid in stations:
        a = archives[sid]
        i = int(np.searchsorted(a.dates, dates[0]))
        if i + T > len(a) or a.dates[i] != dates[0] or a.dates[i + T - 1] != dates[-1]:
            raise ValidationError(f"station {sid}: archive does not cover season {season_year}")
        sl = slice(i, i + T)
        per_station[sid] = (a.tmax_c[sl], a.tmin_c[sl], a.srad_wm2[sl], a.prcp_mm[sl])
    out = {}
    for c in zone.grid_cells:
        sid = swg.nearest_station(zone, c.lat, c.lon, stations)
        out[c.cell_id] = swg.WeatherSeries(c.cell_id, zone.season_start_doy, *(x.copy() for x in per_station[sid]))
    return out


def load_ndvi_obs(path, zones):
    """Read sparse per-pixel NDVI observations.

    Returns ``{(zone_id, season_id): [(day_indices, values), ...]}`` with pixels
    in sorted id order.
    """
    by_zone = {z.zone_id: z for z in zones}
    grouped = {}
    for lineno, row in _read_csv(path, NDVI_OBS_COLUMNS):
        zone = by_zone.get(row[0])
        if zone is None:
            continue
        try:
            day = int(index_of_doy(int(row[3]), zone.season_start_doy))
            val = float(row[4])
        except ValueError as exc:
            raise SchemaError(str(exc), path, lineno) from exc
        grouped.setdefault((row[0], row[1]), {}).setdefault(row[2], []).append((day, val))
    out = {}
    for key, pixels in grouped.items():
        series = []
        for pid in sorted(pixels):
            obs = sorted(pixels[pid])
            d = np.array([o[0] for o in obs])
            if (np.diff(d) <= 0).any():
                raise ValidationError(f"{path}: {key[0]}/{key[1]}/{pid}: repeated observation day")
            series.append((d, np.array([o[1] for o in obs])))
        out[key] = series
    return out


def surveyed_zone_season(zone, season_id, archives, report, ndvi_obs, T=SEASON_LENGTH):
    weather = archive_season_weather(zone, archives, int(season_id), T)
    return features.surveyed_dataset(zone.zone_id, season_id, zone.season_start_doy, ndvi_obs,
                                     gdd_matrix(weather, zone.grid_cells), report, T)


# --- dataset store -------------------------------------------------------------------

def dataset_dir(root, ds):
    return Path(root) / "datasets" / ds.origin / ds.zone_id / ds.season_id


def write_datasets(root, origin, datasets):
    entries = []
    for ds in datasets:
        d = ds.save(dataset_dir(root, ds))
        entries.append({"zone_id": ds.zone_id, "season_id": ds.season_id,
                        "path": str(d.relative_to(root)), "n_targets": int(len(ds.targets))})
    manifest = Path(root) / "datasets" / origin / "manifest.json"
    manifest.parent.mkdir(parents=True, exist_ok=True)
    manifest.write_text(json.dumps({"origin": origin, "datasets": entries}, indent=1, sort_keys=True) + "\n")
    return manifest


def read_datasets(root, origin):
    manifest = Path(root) / "datasets" / origin / "manifest.json"
    if not manifest.exists():
        return []
    doc = json.loads(manifest.read_text())
    return [ZoneDataset.load(Path(root) / e["path"]) for e in doc["datasets"]]


def matches(ds, flt):
    """Test-set filter: keys ``origin``, ``zones`` and ``seasons``; absent keys match everything."""
    if "origin" in flt and ds.origin != flt["origin"]:
        return False
    if flt.get("zones") is not None and ds.zone_id not in flt["zones"]:
        return False
    if flt.get("seasons") is not None and ds.season_id not in [str(s) for s in flt["seasons"]]:
        return False
    return True


def split_test(datasets, filters):
    test = [d for d in datasets if any(matches(d, f) for f in filters)]
    rest = [d for d in datasets if not any(matches(d, f) for f in filters)]
    return rest, test


# --- subcommands ---------------------------------------------------------------------

def run_calibrate(cfg):
    """Fit one weather model per zone; returns ``{zone_id: diagnostics}``."""
    zones, archives, _, _ = load_inputs(cfg)
    out = cfg.out / "models"
    out.mkdir(parents=True, exist_ok=True)
    diagnostics = {}
    for zone in zones:
        missing = [s for s in zone.station_ids if s not in archives]
        if missing:
            raise ValidationError(f"zone {zone.zone_id}: missing weather archive for station(s) {missing}")
        ok, failed = [], {}
        for sid in zone.station_ids:
            try:
                swg.calibrate_station(archives[sid])
                ok.append(archives[sid])
            except DegenerateClimateError as exc:
                failed[sid] = str(exc)
                log.warning("zone %s station %s: %s", zone.zone_id, sid, exc)
        if not ok:
            raise DegenerateClimateError(f"zone {zone.zone_id}: every station failed calibration: {failed}")
        model = swg.calibrate(ok, zone.station_coords or None)
        (out / f"{zone.zone_id}.swg.json").write_text(model.to_json() + "\n")
        diagnostics[zone.zone_id] = {"stations": [a.station_id for a in ok], "failed": failed,
                                     "wet_fraction": {a.station_id: float((a.prcp_mm >= swg.WET_THRESHOLD_MM).mean())
                                                      for a in ok}}
    (out / "diagnostics.json").write_text(json.dumps(diagnostics, indent=1, sort_keys=True) + "\n")
    return diagnostics


def load_models(cfg, zones):
    models = {}
    for zone in zones:
        p = cfg.out / "models" / f"{zone.zone_id}.swg.json"
        if not p.exists():
            raise ConfigError(f"no calibrated weather model for zone {zone.zone_id}; run calibrate first")
        models[zone.zone_id] = swg.SwgModel.from_json(p.read_text())
    return models


def run_generate(cfg):
    zones, _, soils, cultivar = load_inputs(cfg)
    models = load_models(cfg, zones)
    jobs = [(z, models[z.zone_id], soils, cultivar, cfg.seed, k)
            for z in zones for k in range(cfg.seasons_per_zone)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as ex:
            datasets = list(ex.map(_synthetic_job, jobs, chunksize=max(1, len(jobs) // (4 * cfg.jobs))))
    else:
        datasets = [_synthetic_job(j) for j in jobs]
    return write_datasets(cfg.out, "synthetic", datasets), datasets


def run_featurize(cfg):
    zones, archives, _, _ = load_inputs(cfg)
    reports = load_progress_reports(_existing(cfg, cfg.progress, "progress report"))
    obs = load_ndvi_obs(_existing(cfg, cfg.ndvi_obs, "NDVI observation"), zones)
    by_zone = {z.zone_id: z for z in zones}
    datasets = []
    for (zid, season), report in sorted(reports.items()):
        if zid not in by_zone:
            continue
        if (zid, season) not in obs:
            raise ValidationError(f"{zid}/{season}: progress report without NDVI observations")
        datasets.append(surveyed_zone_season(by_zone[zid], season, archives, report, obs[zid, season]))
    if not datasets:
        raise ValidationError("no surveyed zone-season could be featurized")
    return write_datasets(cfg.out, "surveyed", datasets), datasets


def _pools(cfg):
    sur = read_datasets(cfg.out, "surveyed")
    syn = read_datasets(cfg.out, "synthetic")
    sur_train, sur_test = split_test(sur, cfg.test_filters)
    syn_train, syn_test = split_test(syn, cfg.test_filters)
    return sur_train, syn_train, sur_test + syn_test


def run_train(cfg, combination, progress=None):
    sur, syn, _ = _pools(cfg)
    assembly = features.assemble(combination, sur, syn, cfg.target_zone, cfg.val_fraction, cfg.seed)
    out = cfg.out / "runs" / combination
    return train(assembly, cfg.network, cfg.training, cfg.seed, out_dir=out, progress=progress)


def run_eval(cfg, combination):
    if not cfg.test_filters:
        raise ValidationError("no test filter configured; nothing to evaluate")
    _, _, test = _pools(cfg)
    if not test:
        raise ValidationError("test filters match no dataset")
    run = load_run(cfg.out / "runs" / combination)
    report = evaluate(run, test)
    report.write(cfg.out / "reports" / combination)
    return report


def run_report(cfg):
    """Collect every evaluated combination into ``reports/summary.csv``."""
    root = cfg.out / "reports"
    paths = sorted(root.glob("*/report.json"))
    if not paths:
        raise ValidationError(f"no evaluation reports under {root}")
    rows = combine_reports(paths)
    with (root / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["combination", *STAGES, "overall"])
        for p, r in zip(paths, rows):
            w.writerow([p.parent.name, *("" if r[s] is None else f"{r[s]:.4f}" for s in STAGES), f"{r['overall']:.4f}"])
    return root / "summary.csv", rows


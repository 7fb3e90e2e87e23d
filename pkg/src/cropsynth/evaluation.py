"""Overlap-based F1 for crop progress and report tables."""
import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seqnet
from .errors import AlignmentError, UndefinedScoreError, ValidationError
from .features import mask_input
from .ingest import STAGES


@dataclass(frozen=True)
class StageTally:
    tp: float = 0.0
    fp: float = 0.0
    fn: float = 0.0

    def __add__(self, other):
        return StageTally(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def tally_stage(est, obs):
    """Overlap (tp), overestimate (fp) and underestimate (fn) summed over weeks."""
    est = np.asarray(est, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if est.shape != obs.shape:
        raise AlignmentError(f"estimate and observation lengths differ: {est.shape} vs {obs.shape}")
    return StageTally(float(np.minimum(est, obs).sum()),
                      float(np.maximum(est - obs, 0.0).sum()),
                      float(np.maximum(obs - est, 0.0).sum()))


def f1(tally):
    denom = tally.tp + 0.5 * (tally.fp + tally.fn)
    if denom <= 0:
        raise UndefinedScoreError("F1 is undefined for an all-zero tally")
    return tally.tp / denom


def net_f1(tallies):
    tallies = list(tallies)
    if not tallies:
        raise ValidationError("net F1 needs at least one tally")
    total = StageTally()
    for t in tallies:
        total = total + t
    return f1(total)


def _f1_or_nan(tally):
    try:
        return f1(tally)
    except UndefinedScoreError:
        return float("nan")


@dataclass
class Report:
    """Per-zone, per-stage tallies with derived F1 tables."""

    zones: list
    tallies: dict  # (zone, stage) -> StageTally
    series: list  # rows (zone, season, week, stage, est, obs)

    def f1(self, zone, stage):
        return _f1_or_nan(self.tallies[zone, stage])

    def net_s(self, zone):
        """Net F1 of one zone across stages."""
        return net_f1(self.tallies[zone, s] for s in STAGES)

    def net_z(self, stage):
        """Net F1 of one stage across zones."""
        return net_f1(self.tallies[z, stage] for z in self.zones)

    def overall(self):
        return net_f1(self.tallies.values())

    def summary(self):
        return {
            "zones": list(self.zones),
            "stages": list(STAGES),
            "f1": {z: {s: self.f1(z, s) for s in STAGES} for z in self.zones},
            "net_s": {z: _f1_or_nan(sum((self.tallies[z, s] for s in STAGES), StageTally())) for z in self.zones},
            "net_z": {s: _f1_or_nan(sum((self.tallies[z, s] for z in self.zones), StageTally())) for s in STAGES},
            "overall": self.overall(),
            "tallies": {f"{z}/{s}": [t.tp, t.fp, t.fn] for (z, s), t in sorted(self.tallies.items())},
        }

    def write(self, out_dir, prefix="report"):
        """Write ``<prefix>.csv``, ``<prefix>.json`` and ``<prefix>_series.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        summ = self.summary()
        with (out / f"{prefix}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["zone", *STAGES, "Net_S"])
            for z in self.zones:
                w.writerow([z, *(_fmt(summ["f1"][z][s]) for s in STAGES), _fmt(summ["net_s"][z])])
            w.writerow(["Net_Z", *(_fmt(summ["net_z"][s]) for s in STAGES), _fmt(summ["overall"])])
        (out / f"{prefix}.json").write_text(json.dumps(_jsonable(summ), indent=1, sort_keys=True) + "\n")
        with (out / f"{prefix}_series.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["zone", "season", "week", "stage", "est", "obs"])
            for z, season, week, stage, e, o in self.series:
                w.writerow([z, season, week, stage, repr(float(e)), repr(float(o))])
        return out


def _fmt(x):
    return "" if np.isnan(x) else f"{x:.4f}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and np.isnan(obj):
        return None
    return obj


def estimate_dataset(params, dataset, cfg):
    """Network estimates for every target week of one dataset, shape (W, 6)."""
    x = dataset.inputs()
    batch = np.stack([mask_input(x, d) for d in dataset.target_days])
    return seqnet.predict(params, batch, cfg)


def evaluate(estimator, datasets):
    """Score an estimator on datasets that carry weekly targets.

    Parameters
    ----------
    estimator : callable or TrainRun
        ``estimator(dataset) -> (W, 6)`` array of weekly estimates, or a
        trained run whose selected parameters are used.
    """
    if hasattr(estimator, "checkpoint"):
        ck = estimator.checkpoint
        fn = lambda ds: estimate_dataset(ck.params, ds, ck.cfg)  # noqa: E731
    else:
        fn = estimator
    datasets = list(datasets)
    if not datasets:
        raise ValidationError("no datasets to evaluate")
    zones = sorted({d.zone_id for d in datasets})
    tallies = {(z, s): StageTally() for z in zones for s in STAGES}
    series = []
    for ds in sorted(datasets, key=lambda d: (d.zone_id, d.season_id)):
        if len(ds.targets) == 0:
            raise ValidationError(f"{ds.zone_id}/{ds.season_id}: dataset has no targets")
        est = np.asarray(fn(ds), dtype=float)
        if est.shape != ds.targets.shape:
            raise AlignmentError(f"{ds.zone_id}/{ds.season_id}: estimate shape {est.shape} != {ds.targets.shape}")
        for k, stage in enumerate(STAGES):
            tallies[ds.zone_id, stage] = tallies[ds.zone_id, stage] + tally_stage(est[:, k], ds.targets[:, k])
        for w, week in enumerate(ds.target_weeks):
            for k, stage in enumerate(STAGES):
                series.append((ds.zone_id, ds.season_id, int(week), stage, est[w, k], ds.targets[w, k]))
    return Report(zones, tallies, series)


def oracle_estimator(dataset):
    return dataset.targets.copy()


def combine_reports(paths):
    """Side-by-side overall and per-stage net F1 of several JSON summaries."""
    rows = []
    for p in paths:
        doc = json.loads(Path(p).read_text())
        rows.append({"report": str(p), "overall": doc["overall"], **{s: doc["net_z"][s] for s in doc["stages"]}})
    return rows

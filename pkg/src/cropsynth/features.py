"""Zone-level histogram inputs, weekly targets and training-set assembly."""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigError, ValidationError
from .ingest import STAGES
from .seasons import DAYS_PER_WEEK, SEASON_LENGTH, index_of_doy, week_end_indices

NDVI_BINS = 20
GDD_BINS = 27
N_FEATURES = NDVI_BINS + GDD_BINS
N_STAGES = len(STAGES)

COMBINATIONS = ("Usur", "Asyn", "Asyn1Usur", "AsynUsur")


def interpolate_daily(days, values, n_days=None):
    """Linear interpolation of sparse observations onto every day index.

    Values outside the observed range are held at the nearest endpoint and
    negative results are set to zero.
    """
    days = np.asarray(days, dtype=float)
    values = np.asarray(values, dtype=float)
    if days.size < 2:
        raise ValidationError("interpolation needs at least two observations")
    if (np.diff(days) <= 0).any():
        raise ValidationError("observation days must be strictly increasing")
    if n_days is None:
        n_days = int(days[-1]) + 1
    out = np.interp(np.arange(n_days), days, values)
    return np.maximum(out, 0.0)


def _bin_index(values, kind):
    v = np.asarray(values, dtype=float)
    if kind == "ndvi":
        if (v < 0).any() or (v > 1).any():
            raise ValidationError("NDVI values must lie in [0, 1] before binning")
        return np.minimum((v * NDVI_BINS).astype(int), NDVI_BINS - 1), NDVI_BINS
    if kind == "gdd":
        if (v < 0).any():
            raise ValidationError("GDD values must be nonnegative")
        return np.minimum(np.floor(v).astype(int), GDD_BINS - 1), GDD_BINS
    raise ValueError(f"unknown histogram kind {kind!r}")


def histogram_day(values, kind, weights=None):
    """Fraction of pixels in each bin for one day.

    NDVI uses 20 bins of width 0.05 on [0, 1] with the last bin closed; GDD
    uses unit-width bins from 0 with bin 26 collecting everything >= 26.
    Optional ``weights`` give each pixel a share other than one.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValidationError("cannot histogram an empty pixel list")
    idx, nbins = _bin_index(values, kind)
    w = np.ones(values.size) if weights is None else np.asarray(weights, dtype=float)
    counts = np.bincount(idx, weights=w, minlength=nbins)
    return counts / w.sum()


def histogram_series(values, kind, weights=None):
    """Row-per-day histograms of a (n_pixels, n_days) matrix."""
    values = np.asarray(values, dtype=float)
    n_pix, n_days = values.shape
    idx, nbins = _bin_index(values, kind)
    w = np.ones(n_pix) if weights is None else np.asarray(weights, dtype=float)
    flat = idx.T + nbins * np.arange(n_days)[:, None]  # (n_days, n_pix)
    counts = np.bincount(flat.ravel(), weights=np.tile(w, n_days), minlength=nbins * n_days)
    return counts.reshape(n_days, nbins) / w.sum()


def stage_fractions(stages, weights=None):
    """Share of pixels in each of the six stages; ``stages`` is (n_pixels,) or (n_pixels, n_days)."""
    stages = np.asarray(stages)
    w = np.ones(stages.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    onehot = np.eye(N_STAGES)[stages]  # (..., 6)
    return np.tensordot(w, onehot, axes=(0, 0)) / w.sum()


@dataclass(eq=False)
class ZoneDataset:
    zone_id: str
    season_id: str
    origin: str  # "surveyed" or "synthetic"
    ndvi_hist: np.ndarray  # (T, 20)
    gdd_hist: np.ndarray  # (T, 27)
    target_weeks: np.ndarray  # (W,) int
    target_days: np.ndarray  # (W,) int, strictly increasing
    targets: np.ndarray  # (W, 6)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ndvi_hist = np.asarray(self.ndvi_hist, dtype=float)
        self.gdd_hist = np.asarray(self.gdd_hist, dtype=float)
        self.target_weeks = np.asarray(self.target_weeks, dtype=int)
        self.target_days = np.asarray(self.target_days, dtype=int)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1, N_STAGES)
        if self.ndvi_hist.shape != (self.T, NDVI_BINS) or self.gdd_hist.shape != (self.T, GDD_BINS):
            raise ValidationError("histogram shapes do not match (T, 20) and (T, 27)")
        if len(self.target_days) != len(self.targets) or len(self.target_weeks) != len(self.targets):
            raise ValidationError("target weeks, days and distributions differ in length")
        if (np.diff(self.target_days) <= 0).any():
            raise ValidationError("target day indices must be strictly increasing")
        if len(self.target_days) and (self.target_days[0] < 0 or self.target_days[-1] >= self.T):
            raise ValidationError("target day index outside the season")
        if (self.targets < -1e-12).any() or not np.allclose(self.targets.sum(axis=1), 1.0, atol=1e-9):
            raise ValidationError("targets must be distributions")

    @property
    def T(self):
        return len(self.ndvi_hist)

    @property
    def key(self):
        return (self.origin, self.zone_id, self.season_id)

    def inputs(self):
        return np.hstack([self.ndvi_hist, self.gdd_hist])

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {
            "zone_id": self.zone_id, "season_id": self.season_id, "origin": self.origin, "T": self.T,
            "week_day_indices": [int(x) for x in self.target_days], **self.meta,
        }
        (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
        np.savetxt(d / "ndvi_hist.csv", self.ndvi_hist, delimiter=",", fmt="%.17g")
        np.savetxt(d / "gdd_hist.csv", self.gdd_hist, delimiter=",", fmt="%.17g")
        tgt = np.column_stack([self.target_weeks, self.target_days, self.targets])
        header = "week_index,day_index," + ",".join(STAGES)
        np.savetxt(d / "targets.csv", tgt, delimiter=",", header=header, comments="",
                   fmt=["%d", "%d"] + ["%.17g"] * N_STAGES)
        return d

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        meta = json.loads((d / "meta.json").read_text())
        T = int(meta.pop("T"))
        ndvi = np.loadtxt(d / "ndvi_hist.csv", delimiter=",", ndmin=2)
        gdd = np.loadtxt(d / "gdd_hist.csv", delimiter=",", ndmin=2)
        tgt = np.loadtxt(d / "targets.csv", delimiter=",", skiprows=1, ndmin=2)
        if len(ndvi) != T:
            raise ValidationError(f"{d}: expected {T} histogram rows, found {len(ndvi)}")
        extra = {k: v for k, v in meta.items() if k not in ("zone_id", "season_id", "origin", "week_day_indices")}
        return cls(meta["zone_id"], meta["season_id"], meta["origin"], ndvi, gdd,
                   tgt[:, 0].astype(int), tgt[:, 1].astype(int), tgt[:, 2:], extra)


def _pad_rows(m, T):
    m = np.asarray(m, dtype=float)
    if len(m) >= T:
        return m[:T]
    return np.vstack([m, np.zeros((T - len(m), m.shape[1]))])


@dataclass(frozen=True, eq=False)
class WindowFragment:
    """Pixel simulations of one planting window, summarised at zone level."""

    ndvi_hist: np.ndarray  # (T, 20) normalised
    n_pixels: int
    target_days: np.ndarray
    targets: np.ndarray  # (W, 6)


def window_fragment(ndvi_matrix, stage_matrix, target_days, T=SEASON_LENGTH):
    """Summarise (n_pixels, n_days) NDVI and stage matrices of one window."""
    ndvi_matrix = np.maximum(np.asarray(ndvi_matrix, dtype=float), 0.0)
    hist = _pad_rows(histogram_series(ndvi_matrix, "ndvi"), T)
    stages = np.asarray(stage_matrix)[:, target_days]
    return WindowFragment(hist, len(ndvi_matrix), np.asarray(target_days), stage_fractions(stages))


def weight_windows(early, late, early_fraction):
    """Blend early and late window fragments by the zone's planting split.

    Targets are the convex combination of the two windows. The NDVI histogram
    pools both pixel sets with every pixel weighted by its window's share over
    that window's pixel count, which for normalised histograms is the same
    convex combination.
    """
    if early is None or late is None:
        only = early if late is None else late
        return only.ndvi_hist.copy(), only.target_days.copy(), only.targets.copy()
    if not np.array_equal(early.target_days, late.target_days):
        raise AlignmentError("early and late fragments cover different weeks")
    f = float(early_fraction)
    hist = f * early.ndvi_hist + (1 - f) * late.ndvi_hist
    tgt = f * early.targets + (1 - f) * late.targets
    return hist, early.target_days.copy(), tgt


def synthetic_dataset(zone, season_id, fragments, gdd_matrix, T=SEASON_LENGTH):
    """Assemble a synthetic :class:`ZoneDataset`.

    Parameters
    ----------
    fragments : dict
        window name -> WindowFragment.
    gdd_matrix : (n_cells, n_days) array
        Daily GDD per grid cell.
    """
    early = fragments.get("early") if zone.early_fraction > 0 else None
    late = fragments.get("late") if zone.early_fraction < 1 else None
    ndvi_hist, days, tgt = weight_windows(early, late, zone.early_fraction)
    gdd_hist = _pad_rows(histogram_series(gdd_matrix, "gdd"), T)
    return ZoneDataset(zone.zone_id, str(season_id), "synthetic", ndvi_hist, gdd_hist,
                       days // DAYS_PER_WEEK, days, tgt)


def surveyed_dataset(zone_id, season_id, start_doy, ndvi_obs, gdd_matrix, report, T=SEASON_LENGTH):
    """Assemble a surveyed :class:`ZoneDataset`.

    Parameters
    ----------
    ndvi_obs : list of (day_indices, values)
        Sparse per-pixel NDVI observations, already restricted to crop pixels.
    gdd_matrix : (n_pixels, n_days) array
    report : ProgressReport
    """
    daily = np.array([interpolate_daily(d, v, T) for d, v in ndvi_obs])
    ndvi_hist = histogram_series(np.clip(daily, 0.0, 1.0), "ndvi")
    gdd_hist = _pad_rows(histogram_series(gdd_matrix, "gdd"), T)
    days = index_of_doy(np.asarray(report.week_end_doy), start_doy)
    order = np.argsort(days)
    days = days[order]
    keep = days < T
    dist = report.distributions()[order][keep]
    days = days[keep]
    return ZoneDataset(zone_id, str(season_id), "surveyed", ndvi_hist, gdd_hist,
                       days // DAYS_PER_WEEK, days, dist)


def mask_input(x, end_day):
    """Zero every input row after ``end_day``; returns a new array."""
    out = np.array(x, dtype=float, copy=True)
    out[end_day + 1:] = 0.0
    return out


def mask_through_week(dataset, week_index):
    """Network input for in-season estimation at target ``week_index``.

    Rows for days after that target's week-end day are all-zero.
    """
    if not 0 <= week_index < len(dataset.target_days):
        raise IndexError(f"week {week_index} outside 0..{len(dataset.target_days) - 1}")
    return mask_input(dataset.inputs(), int(dataset.target_days[week_index]))


def synthetic_week_days(T=SEASON_LENGTH):
    return week_end_indices(T)


# --- training-set assembly ------------------------------------------------------------

@dataclass
class Assembly:
    combination: str
    train_surveyed: list
    train_synthetic: list
    val_surveyed: list
    val_synthetic: list
    target_zone: str = None

    @property
    def paired(self):
        return self.combination == "AsynUsur"

    @property
    def criterion(self):
        return "divergence" if self.combination in ("Asyn1Usur", "AsynUsur") else "loss"

    @property
    def train(self):
        """Merged training pool; for paired batching this is the synthetic pool."""
        if self.paired:
            return list(self.train_synthetic)
        return list(self.train_surveyed) + list(self.train_synthetic)

    @property
    def validation(self):
        return list(self.val_surveyed) + list(self.val_synthetic)


def split_by_season(datasets, val_fraction=0.2, rng=None):
    """Hold out whole growing seasons: every zone of a validation season goes to validation."""
    rng = rng if rng is not None else np.random.default_rng(0)
    seasons = sorted({d.season_id for d in datasets})
    if len(seasons) < 2:
        return list(datasets), []
    n_val = min(max(int(round(val_fraction * len(seasons))), 1), len(seasons) - 1)
    val = {seasons[i] for i in rng.permutation(len(seasons))[:n_val]}
    return [d for d in datasets if d.season_id not in val], [d for d in datasets if d.season_id in val]


def assemble(combination, surveyed, synthetic, target_zone=None, val_fraction=0.2, seed=0):
    """Build train/validation pools for one of the four training combinations.

    ``Usur`` uses surveyed data only, ``Asyn`` synthetic only, ``Asyn1Usur``
    all surveyed data plus synthetic data of ``target_zone``, and ``AsynUsur``
    everything with separate pools for paired batching.
    """
    if combination not in COMBINATIONS:
        raise ConfigError(f"unknown training combination {combination!r}")
    surveyed = [d for d in surveyed] if combination != "Asyn" else []
    if combination == "Usur":
        synthetic = []
    elif combination == "Asyn1Usur":
        if target_zone is None:
            raise ConfigError("Asyn1Usur needs a target zone")
        synthetic = [d for d in synthetic if d.zone_id == target_zone]
    if combination in ("Usur", "Asyn1Usur", "AsynUsur") and not surveyed:
        raise ConfigError(f"{combination} needs a surveyed pool")
    if combination in ("Asyn", "Asyn1Usur", "AsynUsur") and not synthetic:
        raise ConfigError(f"{combination} needs a synthetic pool")
    rng = np.random.default_rng(seed)
    tr_s, va_s = split_by_season(surveyed, val_fraction, rng)
    tr_a, va_a = split_by_season(synthetic, val_fraction, rng)
    return Assembly(combination, tr_s, tr_a, va_s, va_a, target_zone)

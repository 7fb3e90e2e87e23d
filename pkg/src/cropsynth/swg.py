"""Multisite Richardson-type stochastic weather generator.

Per station and calendar month the generator holds

* a first-order Markov chain for wet/dry occurrence (``p01``, ``p11``),
* a two-component mixed exponential for wet-day amounts,
* wet/dry conditional means and standard deviations of (tmax, tmin, srad),
  whose standardized residuals follow ``z_t = phi @ z_{t-1} + b @ e_t``.

Stations are tied together by correlating the standard-normal streams that
drive occurrence, amounts and residual innovations.
"""
import json
import logging
import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import rankdata

from .errors import ConfigError, DegenerateClimateError, ValidationError
from .ingest import make_archive
from .seasons import doy_of_index, month_of_doy

log = logging.getLogger(__name__)

WET_THRESHOLD_MM = 0.1
MIN_WET_DAYS = 20
MIN_RESIDUAL_DAYS = 30
MIN_OVERLAP_DAYS = 30
CORRELATION_LENGTH_KM = 300.0
PSD_FLOOR = 1e-6
RIDGE = 1e-6
SPINUP_DAYS = 60
GDD_BASE_C = 8.0
GDD_CAP_C = 34.0
MIN_DIURNAL_RANGE_C = 0.1

DRY, WET = 0, 1


def gdd(tmax_c, tmin_c):
    """Daily growing degree days with an 8 degC base and tmax capped at 34 degC.

    Works elementwise on arrays.

    >>> gdd(30, 20), gdd(40, 20), gdd(10, 2)
    (17.0, 19.0, 0.0)
    """
    tmax = np.asarray(tmax_c, dtype=float)
    tmin = np.asarray(tmin_c, dtype=float)
    if (tmax < tmin).any():
        raise ValueError("tmax must not be below tmin")
    capped = np.minimum(tmax, GDD_CAP_C)
    out = np.maximum((capped + tmin) / 2.0 - GDD_BASE_C, 0.0)
    return float(out) if out.ndim == 0 else out


# --- occurrence ---------------------------------------------------------------

def _adjacent(month):
    return [(month - 2) % 12 + 1, month, month % 12 + 1]


def _transition_counts(archive, months):
    wet = archive.prcp_mm >= WET_THRESHOLD_MM
    consecutive = np.diff(archive.dates).astype(int) == 1
    in_month = np.isin(archive.months[1:], months)
    sel = consecutive & in_month
    prev, cur = wet[:-1][sel], wet[1:][sel]
    return (
        int(np.sum(~prev & cur)), int(np.sum(~prev)),
        int(np.sum(prev & cur)), int(np.sum(prev)),
    )


def fit_occurrence(archive, month):
    """Wet-given-dry and wet-given-wet transition probabilities for a month.

    Transitions are attributed to the month of the second day. Empty
    denominators fall back to the month pooled with its neighbours. A wet state
    that is never observed even after pooling gets ``p11 = p01``.
    """
    d2w, from_dry, w2w, from_wet = _transition_counts(archive, [month])
    if from_dry == 0 or from_wet == 0:
        pd2w, pfrom_dry, pw2w, pfrom_wet = _transition_counts(archive, _adjacent(month))
        if from_dry == 0:
            d2w, from_dry = pd2w, pfrom_dry
        if from_wet == 0:
            w2w, from_wet = pw2w, pfrom_wet
    if from_dry == 0 and from_wet == 0:
        raise DegenerateClimateError(f"station {archive.station_id} month {month}: no day-to-day transitions")
    if from_dry == 0:
        raise DegenerateClimateError(f"station {archive.station_id} month {month}: no dry days")
    p01 = d2w / from_dry
    if from_wet == 0:
        log.warning("station %s month %d: no wet days; using p11 = p01", archive.station_id, month)
        return p01, p01
    return p01, w2w / from_wet


def stationary_wet_probability(p01, p11):
    denom = 1.0 + p01 - p11
    return p01 / denom if denom > 0 else 1.0


# --- amounts --------------------------------------------------------------------

@dataclass(frozen=True)
class AmountFit:
    alpha: float
    beta1_mm: float
    beta2_mm: float
    loglik: float
    n_iter: int
    converged: bool

    @property
    def mean(self):
        return self.alpha * self.beta1_mm + (1 - self.alpha) * self.beta2_mm


def mixed_exponential_loglik(x, alpha, beta1, beta2):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        l1 = math.log(alpha) - math.log(beta1) - x / beta1 if alpha > 0 else np.full_like(x, -np.inf)
        l2 = math.log(1 - alpha) - math.log(beta2) - x / beta2 if alpha < 1 else np.full_like(x, -np.inf)
    return float(np.sum(np.logaddexp(l1, l2)))


def fit_mixed_exponential(x, max_iter=200, tol=1e-8):
    """Maximum-likelihood mixed exponential by EM.

    Starts from alpha=0.5, beta1=0.5*mean, beta2=1.5*mean and stops when the
    log-likelihood changes by less than ``tol``. On hitting ``max_iter`` the
    best iterate seen is returned with ``converged=False``.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0 or (x < 0).any():
        raise ValidationError("mixed exponential fit needs nonnegative amounts")
    mean = float(x.mean())
    if mean <= 0:
        raise DegenerateClimateError("all amounts are zero")
    alpha, b1, b2 = 0.5, 0.5 * mean, 1.5 * mean
    ll = mixed_exponential_loglik(x, alpha, b1, b2)
    best = (ll, alpha, b1, b2)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        l1 = math.log(alpha) - math.log(b1) - x / b1
        l2 = math.log(1 - alpha) - math.log(b2) - x / b2
        r = np.exp(l1 - np.logaddexp(l1, l2))
        s1 = r.sum()
        s2 = x.size - s1
        alpha = min(max(s1 / x.size, 1e-12), 1 - 1e-12)
        b1 = float(r @ x / s1) if s1 > 1e-300 else mean
        b2 = float((1 - r) @ x / s2) if s2 > 1e-300 else mean
        b1, b2 = max(b1, 1e-9), max(b2, 1e-9)
        new_ll = mixed_exponential_loglik(x, alpha, b1, b2)
        if new_ll > best[0]:
            best = (new_ll, alpha, b1, b2)
        if abs(new_ll - ll) < tol:
            converged = True
            ll = new_ll
            break
        ll = new_ll
    ll, alpha, b1, b2 = best
    if not converged:
        log.info("mixed exponential EM did not converge in %d iterations", max_iter)
    if b1 > b2:
        alpha, b1, b2 = 1 - alpha, b2, b1
    return AmountFit(float(alpha), float(b1), float(b2), float(ll), it, converged)


def _wet_amounts(archive, months):
    sel = np.isin(archive.months, months) & (archive.prcp_mm >= WET_THRESHOLD_MM)
    return archive.prcp_mm[sel]


def fit_amounts(archive, month):
    """Mixed-exponential wet-day amount parameters for one station and month."""
    x = _wet_amounts(archive, [month])
    if x.size < MIN_WET_DAYS:
        x = _wet_amounts(archive, _adjacent(month))
    if x.size < MIN_WET_DAYS:
        raise DegenerateClimateError(
            f"station {archive.station_id} month {month}: only {x.size} wet days after pooling"
        )
    return fit_mixed_exponential(x)


def mixed_exponential_ppf(u, alpha, beta1, beta2, iters=80):
    """Inverse CDF of the mixed exponential, by bisection on a guaranteed bracket."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0 - 1e-15)
    alpha, beta1, beta2 = np.broadcast_arrays(alpha, beta1, beta2)
    tail = -np.log1p(-u)
    lo = np.minimum(beta1, beta2) * tail
    hi = np.maximum(beta1, beta2) * tail
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        cdf = 1.0 - alpha * np.exp(-mid / beta1) - (1.0 - alpha) * np.exp(-mid / beta2)
        below = cdf < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


# --- residual autoregression -------------------------------------------------------

def wet_flags(archive):
    return (archive.prcp_mm >= WET_THRESHOLD_MM).astype(int)


def _moment_table(archive):
    """Conditional mean/sd of (tmax, tmin, srad) for each month and wet state.

    Returns arrays of shape (12, 2, 3); state index 0 = dry, 1 = wet.
    """
    x = archive.channels()
    months = archive.months
    wet = wet_flags(archive)
    mean = np.empty((12, 2, 3))
    sd = np.empty((12, 2, 3))
    for m in range(1, 13):
        for s in (DRY, WET):
            sel = (months == m) & (wet == s)
            if sel.sum() < MIN_RESIDUAL_DAYS:
                sel = np.isin(months, _adjacent(m)) & (wet == s)
            if sel.sum() < MIN_RESIDUAL_DAYS:
                sel = np.isin(months, _adjacent(m))
                if sel.sum() < MIN_RESIDUAL_DAYS:
                    raise DegenerateClimateError(
                        f"station {archive.station_id} month {m}: fewer than {MIN_RESIDUAL_DAYS} days"
                    )
                log.debug("station %s month %d state %d: pooled wet and dry moments", archive.station_id, m, s)
            mean[m - 1, s] = x[sel].mean(axis=0)
            sd[m - 1, s] = np.maximum(x[sel].std(axis=0, ddof=1), 1e-6)
    return mean, sd


def standardized_residuals(archive, mean=None, sd=None):
    if mean is None:
        mean, sd = _moment_table(archive)
    idx_m = archive.months - 1
    idx_s = wet_flags(archive)
    return (archive.channels() - mean[idx_m, idx_s]) / sd[idx_m, idx_s]


def _psd_clip(s, floor=0.0):
    s = 0.5 * (s + s.T)
    w, v = np.linalg.eigh(s)
    return (v * np.maximum(w, floor)) @ v.T


def _cholesky_psd(s):
    s = _psd_clip(s)
    jitter = 0.0
    scale = max(float(np.trace(s)) / len(s), 1.0)
    for _ in range(8):
        try:
            return np.linalg.cholesky(s + jitter * np.eye(len(s)))
        except np.linalg.LinAlgError:
            jitter = 1e-12 * scale if jitter == 0.0 else jitter * 100
    raise np.linalg.LinAlgError("matrix not positive semidefinite after repair")


def fit_var1(z_prev, z_curr):
    """Least-squares first-order vector autoregression.

    Returns ``phi`` and ``b`` with ``phi = M1 @ inv(M0)`` and
    ``b @ b.T = C0 - phi @ M1.T``, where ``M0`` is the lag-0 moment of the
    previous-day residuals, ``M1`` the lag-1 cross moment and ``C0`` the lag-0
    moment of the current-day residuals.
    """
    z_prev = np.asarray(z_prev, dtype=float)
    z_curr = np.asarray(z_curr, dtype=float)
    n = len(z_prev)
    m0 = z_prev.T @ z_prev / n
    m1 = z_curr.T @ z_prev / n
    c0 = z_curr.T @ z_curr / n
    if np.linalg.cond(m0) > 1e12:
        m0 = m0 + RIDGE * np.eye(len(m0))
    phi = np.linalg.solve(m0.T, m1.T).T
    bbt = c0 - phi @ m1.T
    return phi, _cholesky_psd(bbt)


def _stabilize(phi, b, max_radius=0.99):
    radius = max(abs(np.linalg.eigvals(phi)))
    if radius < max_radius:
        return phi, b
    # Shrink and rebuild the innovation so the stationary variance stays near one.
    phi = phi * (max_radius / radius)
    bbt = np.eye(len(phi)) - phi @ phi.T
    return phi, _cholesky_psd(bbt)


def fit_residual_ar(archive, month, wet, mean=None, sd=None):
    """Conditional moments and AR(1) parameters for (tmax, tmin, srad).

    Parameters
    ----------
    archive : WeatherArchive
    month : int
        Calendar month 1..12.
    wet : bool
        Fit the wet-day (True) or dry-day (False) regime.

    Returns
    -------
    mean, sd : (3,) arrays
    phi, b : (3, 3) arrays
    """
    if mean is None:
        mean, sd = _moment_table(archive)
    z = standardized_residuals(archive, mean, sd)
    state = WET if wet else DRY
    consecutive = np.diff(archive.dates).astype(int) == 1
    flags = wet_flags(archive)[1:]
    months = archive.months[1:]
    sel = consecutive & (months == month) & (flags == state)
    if sel.sum() < MIN_RESIDUAL_DAYS:
        sel = consecutive & np.isin(months, _adjacent(month)) & (flags == state)
    if sel.sum() < MIN_RESIDUAL_DAYS:
        sel = consecutive & np.isin(months, _adjacent(month))
    if sel.sum() < MIN_RESIDUAL_DAYS:
        raise DegenerateClimateError(f"station {archive.station_id} month {month}: too few residual pairs")
    phi, b = fit_var1(z[:-1][sel], z[1:][sel])
    return mean[month - 1, state], sd[month - 1, state], phi, b


# --- spatial structure -----------------------------------------------------------------

def haversine_km(a, b):
    lat1, lon1, lat2, lon2 = map(math.radians, (*a, *b))
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * 6371.0 * math.asin(math.sqrt(min(h, 1.0)))


def repair_correlation(c, floor=PSD_FLOOR):
    """Clip eigenvalues at ``floor`` and rescale to a unit diagonal."""
    c = _psd_clip(np.asarray(c, dtype=float), floor)
    d = np.sqrt(np.diag(c))
    c = c / np.outer(d, d)
    np.fill_diagonal(c, 1.0)
    return c


def _normal_scores(x):
    return ndtri((rankdata(x) - 0.5) / len(x))


def _pearson(a, b):
    if a.std() == 0 or b.std() == 0:
        return None
    return float(np.corrcoef(a, b)[0, 1])


@dataclass
class SpatialFit:
    occ_corr: np.ndarray
    amt_corr: np.ndarray
    res_corr: np.ndarray
    warnings: list = field(default_factory=list)


def fit_spatial(archives, coords=None, residuals=None):
    """Inter-station correlation matrices for occurrence, amounts and residuals.

    Parameters
    ----------
    archives : list of WeatherArchive
    coords : dict, optional
        station_id -> (lat, lon), used for the distance-decay default when a
        pair shares fewer than 30 usable days.
    residuals : list of (n, 3) arrays, optional
        Precomputed standardized residuals aligned with each archive.
    """
    k = len(archives)
    occ, amt, res = np.eye(k), np.eye(k), np.eye(k)
    notes = []
    if residuals is None:
        residuals = [standardized_residuals(a) for a in archives]
    coords = coords or {}

    def fallback(i, j, what):
        a, b = archives[i].station_id, archives[j].station_id
        if a in coords and b in coords:
            val = math.exp(-haversine_km(coords[a], coords[b]) / CORRELATION_LENGTH_KM)
        else:
            val = 0.0
        msg = f"{what} correlation {a}-{b}: too little overlap, using {val:.3f}"
        log.warning(msg)
        notes.append(msg)
        return val

    for i in range(k):
        for j in range(i + 1, k):
            common, ia, ib = np.intersect1d(archives[i].dates, archives[j].dates, return_indices=True)
            pi, pj = archives[i].prcp_mm[ia], archives[j].prcp_mm[ib]
            wi, wj = pi >= WET_THRESHOLD_MM, pj >= WET_THRESHOLD_MM
            r = _pearson(wi.astype(float), wj.astype(float)) if len(common) >= MIN_OVERLAP_DAYS else None
            occ[i, j] = occ[j, i] = fallback(i, j, "occurrence") if r is None else r

            both = wi & wj
            r = None
            if both.sum() >= MIN_OVERLAP_DAYS:
                r = _pearson(_normal_scores(pi[both]), _normal_scores(pj[both]))
            amt[i, j] = amt[j, i] = fallback(i, j, "amount") if r is None else r

            r = None
            if len(common) >= MIN_OVERLAP_DAYS:
                zi = residuals[i][ia][:, :2].T.ravel()
                zj = residuals[j][ib][:, :2].T.ravel()
                r = _pearson(zi, zj)
            res[i, j] = res[j, i] = fallback(i, j, "residual") if r is None else r
    return SpatialFit(repair_correlation(occ), repair_correlation(amt), repair_correlation(res), notes)


# --- model ----------------------------------------------------------------------

@dataclass
class StationMonthParams:
    p01: float
    p11: float
    alpha: float
    beta1_mm: float
    beta2_mm: float
    mean_wet: np.ndarray
    mean_dry: np.ndarray
    sd_wet: np.ndarray
    sd_dry: np.ndarray
    phi_wet: np.ndarray
    b_wet: np.ndarray
    phi_dry: np.ndarray
    b_dry: np.ndarray

    _ARRAYS = ("mean_wet", "mean_dry", "sd_wet", "sd_dry", "phi_wet", "b_wet", "phi_dry", "b_dry")

    def to_dict(self):
        d = {k: float(getattr(self, k)) for k in ("p01", "p11", "alpha", "beta1_mm", "beta2_mm")}
        for k in self._ARRAYS:
            d[k] = np.asarray(getattr(self, k)).ravel().tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {k: float(d[k]) for k in ("p01", "p11", "alpha", "beta1_mm", "beta2_mm")}
        for k in cls._ARRAYS:
            a = np.array(d[k], dtype=float)
            kw[k] = a.reshape(3, 3) if k.startswith(("phi", "b_")) else a
        return cls(**kw)


@dataclass
class SwgModel:
    stations: dict  # station_id -> list of 12 StationMonthParams
    station_ids: tuple
    occ_corr: np.ndarray
    amt_corr: np.ndarray
    res_corr: np.ndarray
    station_coords: dict = field(default_factory=dict)

    def __post_init__(self):
        self.occ_chol = _cholesky_psd(self.occ_corr)
        self.amt_chol = _cholesky_psd(self.amt_corr)
        self.res_chol = _cholesky_psd(self.res_corr)

    def to_json(self):
        doc = {
            "format": "cropsynth.swg/1",
            "station_ids": list(self.station_ids),
            "station_coords": {k: list(v) for k, v in self.station_coords.items()},
            "stations": {sid: [p.to_dict() for p in self.stations[sid]] for sid in self.station_ids},
            "occ_corr": self.occ_corr.tolist(),
            "amt_corr": self.amt_corr.tolist(),
            "res_corr": self.res_corr.tolist(),
            "occ_chol": self.occ_chol.tolist(),
            "amt_chol": self.amt_chol.tolist(),
            "res_chol": self.res_chol.tolist(),
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        return cls(
            stations={sid: [StationMonthParams.from_dict(p) for p in ps] for sid, ps in doc["stations"].items()},
            station_ids=tuple(doc["station_ids"]),
            occ_corr=np.array(doc["occ_corr"]),
            amt_corr=np.array(doc["amt_corr"]),
            res_corr=np.array(doc["res_corr"]),
            station_coords={k: tuple(v) for k, v in doc.get("station_coords", {}).items()},
        )

    def subset(self, station_ids):
        idx = [self.station_ids.index(s) for s in station_ids]
        sel = np.ix_(idx, idx)
        return SwgModel(
            {s: self.stations[s] for s in station_ids}, tuple(station_ids),
            self.occ_corr[sel], self.amt_corr[sel], self.res_corr[sel],
            {s: self.station_coords[s] for s in station_ids if s in self.station_coords},
        )


def calibrate_station(archive):
    """Fit the 12 monthly parameter sets of one station."""
    mean, sd = _moment_table(archive)
    params = []
    for m in range(1, 13):
        p01, p11 = fit_occurrence(archive, m)
        amounts = fit_amounts(archive, m)
        fitted = {}
        for state in (DRY, WET):
            _, _, phi, b = fit_residual_ar(archive, m, state == WET, mean, sd)
            fitted[state] = _stabilize(phi, b)
        params.append(StationMonthParams(
            p01=p01, p11=p11, alpha=amounts.alpha, beta1_mm=amounts.beta1_mm, beta2_mm=amounts.beta2_mm,
            mean_wet=mean[m - 1, WET], mean_dry=mean[m - 1, DRY],
            sd_wet=sd[m - 1, WET], sd_dry=sd[m - 1, DRY],
            phi_wet=fitted[WET][0], b_wet=fitted[WET][1],
            phi_dry=fitted[DRY][0], b_dry=fitted[DRY][1],
        ))
    return params, (mean, sd)


def calibrate(archives, coords=None):
    """Calibrate a full multisite model.

    Parameters
    ----------
    archives : list of WeatherArchive
    coords : dict, optional
        station_id -> (lat, lon).

    Returns
    -------
    SwgModel
    """
    if not archives:
        raise ValidationError("no weather archives to calibrate on")
    stations, residuals = {}, []
    for a in archives:
        params, (mean, sd) = calibrate_station(a)
        stations[a.station_id] = params
        residuals.append(standardized_residuals(a, mean, sd))
    spatial = fit_spatial(archives, coords, residuals)
    return SwgModel(
        stations, tuple(a.station_id for a in archives),
        spatial.occ_corr, spatial.amt_corr, spatial.res_corr,
        dict(coords or {}),
    )


# --- generation ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WeatherSeries:
    cell_id: str
    start_doy: int
    tmax_c: np.ndarray
    tmin_c: np.ndarray
    srad_wm2: np.ndarray
    prcp_mm: np.ndarray

    def __len__(self):
        return len(self.tmax_c)

    @property
    def doy_index(self):
        return np.arange(len(self))

    @property
    def doy(self):
        return doy_of_index(self.doy_index, self.start_doy)

    def to_archive(self, first_date):
        dates = np.datetime64(first_date, "D") + np.arange(len(self))
        return make_archive(self.cell_id, dates, self.tmax_c, self.tmin_c, self.srad_wm2, self.prcp_mm)


def stream_seed(root_seed, *keys):
    """Derive an independent RNG seed from the root seed and a path of keys.

    String keys are reduced with CRC-32 so the derivation is stable across
    processes and Python versions.
    """
    words = [int(root_seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k))
    return np.random.SeedSequence(words)


def _stack(model, station_ids):
    ps = [model.stations[s] for s in station_ids]

    def get(attr):
        return np.array([[getattr(p[m], attr) for p in ps] for m in range(12)])

    arr = {k: get(k) for k in ("p01", "p11", "alpha", "beta1_mm", "beta2_mm")}
    arr["mean"] = np.stack([get("mean_dry"), get("mean_wet")], axis=1)  # (12, 2, K, 3)
    arr["sd"] = np.stack([get("sd_dry"), get("sd_wet")], axis=1)
    arr["phi"] = np.stack([get("phi_dry"), get("phi_wet")], axis=1)  # (12, 2, K, 3, 3)
    arr["b"] = np.stack([get("b_dry"), get("b_wet")], axis=1)
    return arr


def simulate_stations(model, station_ids, start_doy, n_days, rng, spinup=SPINUP_DAYS):
    """Generate daily weather at the given stations.

    Returns a dict of (n_days, K) arrays: tmax, tmin, srad, prcp and wet.
    """
    missing = [s for s in station_ids if s not in model.stations]
    if missing:
        raise ConfigError(f"weather model has no parameters for stations {missing}")
    sub = model.subset(station_ids)
    k = len(station_ids)
    total = spinup + n_days
    arr = _stack(sub, station_ids)
    doys = doy_of_index(np.arange(total) - spinup, start_doy)
    mi = month_of_doy(doys) - 1

    w_occ = rng.standard_normal((total, k)) @ sub.occ_chol.T
    w_amt = rng.standard_normal((total, k)) @ sub.amt_chol.T
    e_res = np.einsum("tkc,jk->tjc", rng.standard_normal((total, k, 3)), sub.res_chol)
    u0 = rng.random(k)

    u_occ = ndtr(w_occ)
    wet = np.zeros((total, k), dtype=bool)
    p_stat = np.array([stationary_wet_probability(a, b) for a, b in zip(arr["p01"][mi[0]], arr["p11"][mi[0]])])
    prev = u0 < p_stat
    for t in range(total):
        p = np.where(prev, arr["p11"][mi[t]], arr["p01"][mi[t]])
        prev = u_occ[t] < p
        wet[t] = prev

    amount = mixed_exponential_ppf(ndtr(w_amt), arr["alpha"][mi], arr["beta1_mm"][mi], arr["beta2_mm"][mi])
    prcp = np.where(wet, np.maximum(amount, WET_THRESHOLD_MM), 0.0)

    state = wet.astype(int)
    kk = np.arange(k)
    phi = arr["phi"][mi[:, None], state, kk[None, :]]  # (T, K, 3, 3)
    b = arr["b"][mi[:, None], state, kk[None, :]]
    innov = np.einsum("tkij,tkj->tki", b, e_res)
    z = np.zeros((total, k, 3))
    cur = np.zeros((k, 3))
    for t in range(total):
        cur = np.einsum("kij,kj->ki", phi[t], cur) + innov[t]
        z[t] = cur
    x = arr["mean"][mi[:, None], state, kk[None, :]] + arr["sd"][mi[:, None], state, kk[None, :]] * z

    tmax, tmin, srad = x[..., 0], x[..., 1], np.maximum(x[..., 2], 0.0)
    lo, hi = np.minimum(tmax, tmin), np.maximum(tmax, tmin)
    hi = np.maximum(hi, lo + MIN_DIURNAL_RANGE_C)
    keep = slice(spinup, None)
    return {
        "tmax": hi[keep], "tmin": lo[keep], "srad": srad[keep], "prcp": prcp[keep],
        "wet": wet[keep], "z": z[keep], "state": state[keep], "month": mi[keep] + 1,
    }


def nearest_station(zone, lat, lon, stations=None):
    stations = tuple(zone.station_ids if stations is None else stations)
    if len(stations) == 1:
        return stations[0]
    return min(stations, key=lambda s: (haversine_km((lat, lon), zone.station_coords[s]), s))


def generate_season(model, zone, n_days, seed, season_index=0):
    """Synthetic weather for every grid cell of a zone over one season.

    Deterministic in ``(model, zone, n_days, seed, season_index)``. Cells take
    the weather of their nearest station among those present in ``model``.

    Returns
    -------
    dict
        cell_id -> WeatherSeries
    """
    stations = [s for s in zone.station_ids if s in model.stations]
    if not stations:
        raise ConfigError(f"zone {zone.zone_id}: no station of this zone is in the weather model")
    cell_station = {c.cell_id: nearest_station(zone, c.lat, c.lon, stations) for c in zone.grid_cells}
    rng = np.random.default_rng(stream_seed(seed, zone.zone_id, season_index, "weather"))
    out = simulate_stations(model, stations, zone.season_start_doy, n_days, rng)
    col = {s: i for i, s in enumerate(stations)}
    series = {}
    for cid, sid in cell_station.items():
        i = col[sid]
        series[cid] = WeatherSeries(
            cid, zone.season_start_doy,
            out["tmax"][:, i].copy(), out["tmin"][:, i].copy(),
            out["srad"][:, i].copy(), out["prcp"][:, i].copy(),
        )
    return series


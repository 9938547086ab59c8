"""Calibrated daily predictions at new sites and on a fine raster grid.

A new site is handled by observation-vector augmentation: its observation is
treated as always missing, so the shared daily state path is unchanged and
the prediction is the state estimate plus the site's offset.  Validation
metrics compare predictions against the daily monitoring series and the
interval-averaged observations.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from scarr import covariates as cov
from scarr.data_model import (
    Dataset,
    RasterGrid,
    fmt_num,
    interval_mean,
)
from scarr.errors import DataError
from scarr.step1 import (
    LANDUSE_SCALE,
    POP_DENSITY_SCALE,
    StepOneFit,
    additive_bias_c_tilde,
    gamma_hat,
)
from scarr.step2 import (
    DlmInputs,
    DlmParams,
    StateEstimate,
    kalman_filter,
    kalman_smoother,
)


def covariate_value(name: str, static: dict, season: dict,
                    spec: cov.BufferSpec = cov.BufferSpec()) -> float:
    """Value of one design column from static covariates + a season basis."""
    if name == "intercept":
        return 1.0
    if name == "pop_density_10k":
        return static["pop_density"] / POP_DENSITY_SCALE
    if name in season:
        return season[name]
    if name == "elevation_m":
        return static["elevation"]
    labels = spec.ring_labels()
    if name.startswith("ttv_"):
        rest = name[4:]
        for qi, q in enumerate(cov.QUADRANTS):
            if rest.startswith(q + "_"):
                return float(static["ttv_quadrant"][qi][labels.index(rest[len(q) + 1:])])
        return float(static["ttv"][labels.index(rest)])
    if name.startswith("lu_"):
        body = name[3:]
        for cat in static["lu_area"]:
            if body == f"{cat}_0-2km":
                return float(np.sum(static["lu_area"][cat])) / LANDUSE_SCALE
            if body.startswith(cat + "_"):
                lab = body[len(cat) + 1:]
                return float(static["lu_area"][cat][labels.index(lab)]) / LANDUSE_SCALE
    raise DataError(f"covariate_value: unknown design column {name!r}")


def c_tilde_for_day(fit: StepOneFit, static: dict, dyr: float,
                    spec: cov.BufferSpec = cov.BufferSpec()) -> float:
    """Additive bias at one location for one day's seasonal position."""
    season = dict(zip(cov.SEASON_NAMES, cov.seasonal_basis(dyr)))
    values = {
        nm: covariate_value(nm, static, season, spec)
        for nm in fit.names
        if nm != "cmaq"
    }
    return additive_bias_c_tilde(fit, values)


def build_dlm_inputs(dataset: Dataset, fit: StepOneFit,
                     spec: cov.BufferSpec = cov.BufferSpec()):
    """Assemble (DlmInputs, site order, day range) from the dense-time sites.

    Days where the gridded-model value is unavailable have the observation
    masked as missing as well.
    """
    dense = sorted(dataset.sites_with_role("dense_time"), key=lambda s: s.id)
    if not dense:
        raise DataError("build_dlm_inputs: no dense_time sites in dataset")
    T = 0
    for ser in dataset.cmaq.series.values():
        T = max(T, int(ser.days.max()) if ser.days.size else 0)
    for s in dense:
        ser = dataset.daily_series.get(s.id)
        if ser is not None and ser.days.size:
            T = max(T, int(ser.days.max()))
    if T == 0:
        raise DataError("build_dlm_inputs: no daily data present")

    segments = cov.segmentize([(p.vertices, p.adt) for p in dataset.traffic])
    n = len(dense)
    y = np.full((T, n), np.nan)
    c_t = np.full((T, n), np.nan)
    y1 = np.full((T, n), np.nan)
    for j, site in enumerate(dense):
        static = cov.site_static_covariates(dataset, site, segments, spec)
        ser = dataset.daily_series.get(site.id)
        if ser is not None:
            y[ser.days - 1, j] = ser.values
        pid = static["cmaq_pixel"]
        if pid is not None and pid in dataset.cmaq.series:
            cser = dataset.cmaq.series[pid]
            y1[cser.days - 1, j] = cser.values
        for day in range(1, T + 1):
            c_t[day - 1, j] = c_tilde_for_day(
                fit, static, dataset.manifest.dyr(day), spec
            )
        y[~np.isfinite(y1[:, j]), j] = np.nan
    return DlmInputs(y=y, c_tilde=c_t, y1=y1), [s.id for s in dense], T


@dataclass
class SitePrediction:
    site_id: str
    days: np.ndarray
    pred: np.ndarray
    ci_half: np.ndarray

    @property
    def n_days(self) -> int:
        return len(self.days)


def state_path(params: DlmParams, inputs: DlmInputs, smoothed: bool = False):
    """(mean, variance) arrays of the shared daily state."""
    if smoothed:
        est = kalman_smoother(params, inputs)
        return est.smoothed_mean, est.smoothed_var, est
    est = kalman_filter(params, inputs)
    return est.filtered_mean, est.filtered_var, est


def predict_series(
    params: DlmParams,
    a_mean: np.ndarray,
    a_var: np.ndarray,
    c_tilde: np.ndarray,
    y1: np.ndarray,
    include_obs_noise: bool = True,
):
    """Prediction and 95% CI half-width for one site's offset series."""
    if not (np.all(np.isfinite(c_tilde)) and np.all(np.isfinite(y1))):
        raise DataError("predict_series: missing additive-bias or gridded value")
    pred = a_mean + params.beta_c * c_tilde + params.gamma_hat * y1
    var = a_var + (params.sigma_z**2 if include_obs_noise else 0.0)
    return pred, 1.96 * np.sqrt(np.clip(var, 0.0, None))


def predict_site(
    site_id: str,
    params: DlmParams,
    inputs: DlmInputs,
    c_tilde_new: np.ndarray,
    y1_new: np.ndarray,
    days=None,
    smoothed: bool = False,
    include_obs_noise: bool = True,
) -> SitePrediction:
    """Augmented-observation prediction at a new site.

    The new site's observation column is always missing, so the state path
    equals the un-augmented fit; only the offset differs.
    """
    a_mean, a_var, _ = state_path(params, inputs, smoothed=smoothed)
    if days is None:
        days = np.arange(1, inputs.n_days + 1)
    days = np.asarray(days, dtype=int)
    idx = days - 1
    if idx.min() < 0 or idx.max() >= inputs.n_days:
        raise DataError("predict_site: requested day outside fitted range")
    pred, half = predict_series(
        params, a_mean[idx], a_var[idx],
        np.asarray(c_tilde_new, dtype=float)[idx],
        np.asarray(y1_new, dtype=float)[idx],
        include_obs_noise=include_obs_noise,
    )
    return SitePrediction(site_id, days, pred, half)


def predict_grid(
    dataset: Dataset,
    fit: StepOneFit,
    params: DlmParams,
    inputs: DlmInputs,
    n_cols: int,
    n_rows: int,
    x_ll: float,
    y_ll: float,
    cell_size: float,
    days,
    smoothed: bool = False,
    spec: cov.BufferSpec = cov.BufferSpec(),
    nodata: float = -9999.0,
):
    """One RasterGrid of predicted concentration per requested day.

    Pixels outside the coarse-grid coverage (or outside every census tract)
    are nodata.  Returns {day: RasterGrid}.
    """
    a_mean, a_var, _ = state_path(params, inputs, smoothed=smoothed)
    days = [int(d) for d in days]
    for d in days:
        if d < 1 or d > inputs.n_days:
            raise DataError(f"predict_grid: day {d} outside fitted range")
    segments = cov.segmentize([(p.vertices, p.adt) for p in dataset.traffic])
    half_cell = dataset.cmaq.cell_size / 2.0

    grids = {d: np.full((n_rows, n_cols), nodata) for d in days}
    template = RasterGrid(n_cols, n_rows, x_ll, y_ll, cell_size, nodata,
                          np.zeros((n_rows, n_cols)))
    from scarr.data_model import SiteRecord, nearest_cmaq_centroid

    for r in range(n_rows):
        for c_i in range(n_cols):
            px, py = template.cell_centroid(r, c_i)
            pixel_site = SiteRecord(f"px_{r}_{c_i}", px, py, "prediction")
            if dataset.cmaq.pixel_ids.size == 0:
                continue
            pid = nearest_cmaq_centroid(pixel_site, dataset.cmaq)
            k = int(np.where(dataset.cmaq.pixel_ids == pid)[0][0])
            if (
                abs(dataset.cmaq.xs[k] - px) > half_cell
                or abs(dataset.cmaq.ys[k] - py) > half_cell
            ):
                continue  # outside coarse-grid coverage
            try:
                static = cov.site_static_covariates(dataset, pixel_site, segments, spec)
            except DataError:
                continue  # e.g. outside every census tract
            cser = dataset.cmaq.series.get(pid)
            if cser is None:
                continue
            for d in days:
                y1_val, n_used = interval_mean(cser, d, d)
                if n_used == 0:
                    continue
                ct = c_tilde_for_day(fit, static, dataset.manifest.dyr(d), spec)
                grids[d][r, c_i] = (
                    a_mean[d - 1] + params.beta_c * ct + params.gamma_hat * y1_val
                )
    return {
        d: RasterGrid(n_cols, n_rows, x_ll, y_ll, cell_size, nodata, grids[d])
        for d in days
    }


@dataclass
class MetricsReport:
    per_site: dict  # site_id -> {"r": .., "mse": .., "r_raw": .., "mse_raw": ..}
    mspe: float = math.nan
    mspe_raw: float = math.nan


def pearson_r(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0:
        return math.nan
    return float(a @ b) / den


def metrics(
    predictions: dict,
    observations: dict,
    raw: dict | None = None,
    interval_pairs=None,
    raw_interval_pairs=None,
) -> MetricsReport:
    """Per-site correlation and MSE, plus MSPE over interval observations.

    predictions/observations/raw map site_id -> (days, values) aligned
    arrays (NaN = missing); interval_pairs is a list of
    (predicted interval mean, observed interval value).
    """
    per_site = {}
    for sid, (days_p, vals_p) in predictions.items():
        if sid not in observations:
            continue
        days_o, vals_o = observations[sid]
        common = np.intersect1d(days_p, days_o)
        ip = np.searchsorted(days_p, common)
        io = np.searchsorted(days_o, common)
        vp, vo = np.asarray(vals_p)[ip], np.asarray(vals_o)[io]
        ok = np.isfinite(vp) & np.isfinite(vo)
        if not ok.any():
            raise DataError(f"metrics: no overlapping days for site {sid}")
        vp, vo = vp[ok], vo[ok]
        entry = {
            "mse": float(np.mean((vp - vo) ** 2)),
            "r": pearson_r(vp, vo) if len(vp) >= 2 else math.nan,
            "n": int(len(vp)),
        }
        if raw and sid in raw:
            days_r, vals_r = raw[sid]
            ir = np.searchsorted(days_r, common)
            vr = np.asarray(vals_r)[ir][ok]
            ok_r = np.isfinite(vr)
            entry["mse_raw"] = float(np.mean((vr[ok_r] - vo[ok_r]) ** 2))
            entry["r_raw"] = (
                pearson_r(vr[ok_r], vo[ok_r]) if ok_r.sum() >= 2 else math.nan
            )
        per_site[sid] = entry
    report = MetricsReport(per_site=per_site)
    if interval_pairs:
        arr = np.asarray(interval_pairs, dtype=float)
        report.mspe = float(np.mean((arr[:, 0] - arr[:, 1]) ** 2))
    if raw_interval_pairs:
        arr = np.asarray(raw_interval_pairs, dtype=float)
        report.mspe_raw = float(np.mean((arr[:, 0] - arr[:, 1]) ** 2))
    return report


def write_site_predictions(preds, path: str, header_lines=()) -> None:
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("site_id,day,pred,ci_lo,ci_hi\n")
        for p in preds:
            for d, v, h in zip(p.days, p.pred, p.ci_half):
                fh.write(
                    f"{p.site_id},{int(d)},{fmt_num(v)},{fmt_num(v - h)},{fmt_num(v + h)}\n"
                )


def write_metrics(report: MetricsReport, path: str, header_lines=()) -> None:
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("site_id,r,mse,r_raw,mse_raw\n")
        for sid in sorted(report.per_site):
            e = report.per_site[sid]
            fh.write(
                f"{sid},{fmt_num(e.get('r', math.nan))},{fmt_num(e['mse'])},"
                f"{fmt_num(e.get('r_raw', math.nan))},{fmt_num(e.get('mse_raw', math.nan))}\n"
            )
        fh.write(
            f"OVERALL_MSPE,{fmt_num(report.mspe)},NA,{fmt_num(report.mspe_raw)},NA\n"
        )


def raster_day_filename(day: int) -> str:
    return f"no2_day{day:04d}.asc"


def write_prediction_rasters(grids: dict, out_dir: str) -> list:
    from scarr.data_model import write_raster

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for day in sorted(grids):
        path = os.path.join(out_dir, raster_day_filename(day))
        write_raster(grids[day], path)
        paths.append(path)
    return paths

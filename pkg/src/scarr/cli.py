"""Command-line entry point orchestrating the pipeline.

Subcommands: simulate, features, fit-step1, fit-step2, predict, validate.
Configuration is plain key=value text (``step1_config.txt`` /
``step2_config.txt`` / ``predict_config.txt`` inside the dataset directory);
flags override config keys.  Logs go to stderr only; every data product
carries a header comment with the toolkit version and config hash.

Exit codes: 0 success, 2 config error, 3 data error, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import os
import sys

import numpy as np

from scarr import __version__, covariates as cov, oracle, prediction, step1, step2
from scarr.data_model import (
    interval_mean,
    load_dataset,
    nearest_cmaq_centroid,
    read_keyvalue,
    write_dataset,
)
from scarr.errors import ConfigError, ConvergenceError, DataError

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _config_hash(kv: dict) -> str:
    blob = "\n".join(f"{k}={kv[k]}" for k in sorted(kv))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _header(kv: dict) -> list:
    return [f"scarr {__version__}", f"config_hash={_config_hash(kv)}"]


def _out_dir(dataset_dir: str, out: str | None) -> str:
    d = out or os.path.join(dataset_dir, "out")
    os.makedirs(d, exist_ok=True)
    return d


def _read_optional_config(dataset_dir: str, name: str, override: str | None) -> dict:
    path = override or os.path.join(dataset_dir, name)
    if os.path.exists(path):
        return read_keyvalue(path)
    return {}


def _jobs(args) -> int:
    if getattr(args, "jobs", None):
        return max(int(args.jobs), 1)
    env = os.environ.get("SCARR_JOBS")
    return max(int(env), 1) if env else 1


def cmd_simulate(args) -> int:
    cfg = oracle.SimulationConfig(seed=args.seed)
    if args.days:
        cfg = dataclasses.replace(cfg, n_days=args.days)
    dataset, truth = oracle.simulate_step1_dataset(cfg)
    os.makedirs(args.out, exist_ok=True)
    write_dataset(dataset, args.out)
    oracle.write_truth(truth, os.path.join(args.out, "truth.txt"))
    _log(f"simulate: wrote dataset with {len(dataset.sites)} sites to {args.out}")
    return 0


def cmd_features(args) -> int:
    dataset = load_dataset(args.dataset)
    rows, warnings = cov.build_covariates(dataset)
    for w in warnings:
        _log(f"features: warning: {w}")
    out = _out_dir(args.dataset, args.out)
    cov.write_covariates(rows, os.path.join(out, "covariates.csv"))
    _log(f"features: wrote {len(rows)} covariate rows")
    return 0


def _run_step1(dataset, kv):
    cfg = step1.parse_step1_config(kv)
    rows, warnings = cov.build_covariates(dataset, cfg.buffer_spec)
    for w in warnings:
        _log(f"fit-step1: warning: {w}")
    drows = step1.design_rows_from_covariates(dataset, rows)
    design = step1.assemble_design(dataset, drows, cfg)
    for w in design.warnings:
        _log(f"fit-step1: warning: {w}")
    if design.rank_deficient:
        raise DataError("design matrix is rank deficient")
    report = step1.collinearity_report(design.X, design.names, cfg.collinearity_threshold)
    for a, b, r in report:
        _log(f"fit-step1: collinearity |r|={abs(r):.3f} between {a} and {b}")

    if cfg.error_model == "independent":
        fitter = step1.fit_ols
    else:
        def fitter(X, y, names):
            return step1.fit_gls(
                X, y, design.coords, names, kind=cfg.error_model, nu=cfg.matern_nu
            )

    if cfg.run_selection:
        retained, fit = step1.backward_buffer_selection(design, cfg.alpha, fitter)
        kept = {g: len(cols) for g, cols in retained.items()}
        _log(f"fit-step1: retained buffer rings {kept}")
    else:
        fit = fitter(design.X, design.y, design.names)

    if cfg.error_model == "independent":
        idx = [design.names.index(nm) for nm in fit.names]
        press, rmspe = step1.loocv_press(fit, design.X[:, idx], design.y)
        fit.press, fit.rmspe = press, rmspe
    return cfg, fit


def cmd_fit_step1(args) -> int:
    dataset = load_dataset(args.dataset)
    kv = _read_optional_config(args.dataset, "step1_config.txt", args.config)
    if args.alpha is not None:
        kv["alpha"] = str(args.alpha)
    cfg, fit = _run_step1(dataset, kv)
    out = _out_dir(args.dataset, args.out)
    step1.write_step1_fit(fit, os.path.join(out, "step1_fit.txt"), _header(kv))
    _log(
        f"fit-step1: n={fit.n} R2={fit.r2:.4f} RMSE={fit.rmse:.4f} "
        f"gamma_hat={step1.gamma_hat(fit):.4f}"
    )
    return 0


def cmd_fit_step2(args) -> int:
    dataset = load_dataset(args.dataset)
    out = _out_dir(args.dataset, args.out)
    fit_path = os.path.join(out, "step1_fit.txt")
    if not os.path.exists(fit_path):
        raise DataError(f"missing Step I fit: {fit_path} (run fit-step1 first)")
    s1fit = step1.read_step1_fit(fit_path)
    kv = _read_optional_config(args.dataset, "step2_config.txt", args.config)
    cfg = step2.parse_step2_config(kv)
    inputs, site_ids, T = prediction.build_dlm_inputs(dataset, s1fit)
    _log(f"fit-step2: {len(site_ids)} sites x {T} days")
    params = step2.fit_mle(inputs, gamma_hat=step1.gamma_hat(s1fit), config=cfg)
    step2.write_step2_fit(params, os.path.join(out, "step2_fit.txt"), _header(kv))
    est = step2.kalman_smoother(params, inputs)
    step2.write_state_path(est, os.path.join(out, "state_path.csv"), _header(kv))
    se = params.se
    _log(
        "fit-step2: sigma_z=%.3f (%s) sigma_a=%.3f psi_a=%.3f beta_c=%.3f "
        "mu_a_dropped=%s loglik=%.3f"
        % (
            params.sigma_z,
            f"{se['sigma_z']:.3f}" if "sigma_z" in se else "n/a",
            params.sigma_a, params.psi_a, params.beta_c,
            params.mu_a_dropped, params.loglik,
        )
    )
    return 0


def _load_fits(dataset_dir, out):
    s1_path = os.path.join(out, "step1_fit.txt")
    s2_path = os.path.join(out, "step2_fit.txt")
    for p in (s1_path, s2_path):
        if not os.path.exists(p):
            raise DataError(f"missing fit file: {p}")
    return step1.read_step1_fit(s1_path), step2.read_step2_fit(s2_path)


def _site_prediction(dataset, s1fit, params, inputs, site, segments,
                     days, smoothed):
    static = cov.site_static_covariates(dataset, site, segments)
    T = inputs.n_days
    c_new = np.array(
        [prediction.c_tilde_for_day(s1fit, static, dataset.manifest.dyr(d))
         for d in range(1, T + 1)]
    )
    pid = static["cmaq_pixel"]
    y1_new = np.full(T, np.nan)
    if pid is not None and pid in dataset.cmaq.series:
        ser = dataset.cmaq.series[pid]
        y1_new[ser.days - 1] = ser.values
    usable = [d for d in days if np.isfinite(y1_new[d - 1])]
    if not usable:
        raise DataError(f"predict: no usable days for site {site.id}")
    return prediction.predict_site(
        site.id, params, inputs, c_new, y1_new, days=usable, smoothed=smoothed
    )


def cmd_predict(args) -> int:
    dataset = load_dataset(args.dataset)
    out = _out_dir(args.dataset, args.out)
    s1fit, params = _load_fits(args.dataset, out)
    kv = _read_optional_config(args.dataset, "predict_config.txt", args.config)
    smoothed = bool(args.smoothed) or kv.get("smoothed", "false") == "true"
    inputs, site_ids, T = prediction.build_dlm_inputs(dataset, s1fit)
    segments = cov.segmentize([(p.vertices, p.adt) for p in dataset.traffic])
    days = list(range(1, T + 1))

    targets = sorted(
        dataset.sites_with_role("dense_time") + dataset.sites_with_role("prediction"),
        key=lambda s: s.id,
    )
    preds = []
    for site in targets:
        preds.append(
            _site_prediction(dataset, s1fit, params, inputs, site, segments,
                             days, smoothed)
        )
    prediction.write_site_predictions(
        preds, os.path.join(out, "site_predictions.csv"), _header(kv)
    )
    _log(f"predict: wrote daily predictions for {len(preds)} sites")

    grid_days = [int(d) for d in kv.get("grid_days", "").split() if d]
    if grid_days:
        n_cols = int(kv.get("grid_ncols", "16"))
        n_rows = int(kv.get("grid_nrows", "16"))
        cell = float(kv.get("grid_cell_size", "3000"))
        x_ll = float(kv.get("grid_xll", "0"))
        y_ll = float(kv.get("grid_yll", "0"))
        grids = prediction.predict_grid(
            dataset, s1fit, params, inputs, n_cols, n_rows, x_ll, y_ll, cell,
            grid_days, smoothed=smoothed,
        )
        paths = prediction.write_prediction_rasters(grids, os.path.join(out, "rasters"))
        _log(f"predict: wrote {len(paths)} raster(s)")
    return 0


def _compute_metrics(dataset, s1fit, params, inputs, smoothed):
    segments = cov.segmentize([(p.vertices, p.adt) for p in dataset.traffic])
    T = inputs.n_days
    days_all = list(range(1, T + 1))

    predictions, observations, raw = {}, {}, {}
    for site in sorted(dataset.sites_with_role("dense_time"), key=lambda s: s.id):
        ser = dataset.daily_series.get(site.id)
        if ser is None:
            continue
        p = _site_prediction(dataset, s1fit, params, inputs, site, segments,
                             days_all, smoothed)
        predictions[site.id] = (p.days, p.pred)
        observations[site.id] = (ser.days, ser.values)
        pid = nearest_cmaq_centroid(site, dataset.cmaq)
        cser = dataset.cmaq.series.get(pid)
        if cser is not None:
            raw[site.id] = (cser.days, cser.values)

    interval_pairs, raw_pairs = [], []
    for obs in dataset.interval_obs:
        site = dataset.sites[obs.site_id]
        try:
            p = _site_prediction(
                dataset, s1fit, params, inputs, site, segments,
                list(range(obs.t_start, obs.t_end + 1)), smoothed,
            )
        except DataError:
            continue
        interval_pairs.append((float(np.mean(p.pred)), obs.value))
        pid = nearest_cmaq_centroid(site, dataset.cmaq)
        cser = dataset.cmaq.series.get(pid)
        if cser is not None:
            m, n_used = interval_mean(cser, obs.t_start, obs.t_end)
            if n_used:
                raw_pairs.append((m, obs.value))
    return prediction.metrics(
        predictions, observations, raw, interval_pairs, raw_pairs
    )


def cmd_validate(args) -> int:
    dataset = load_dataset(args.dataset)
    out = _out_dir(args.dataset, args.out)
    s1fit, params = _load_fits(args.dataset, out)
    kv = _read_optional_config(args.dataset, "predict_config.txt", args.config)
    smoothed = bool(args.smoothed) or kv.get("smoothed", "false") == "true"
    inputs, _, _ = prediction.build_dlm_inputs(dataset, s1fit)
    report = _compute_metrics(dataset, s1fit, params, inputs, smoothed)
    metrics_path = os.path.join(out, "metrics.csv")
    prediction.write_metrics(report, metrics_path, _header(kv))
    _log(f"validate: MSPE={report.mspe:.4f} (raw grid {report.mspe_raw:.4f})")
    if args.golden:
        with open(metrics_path, "rb") as fh:
            got = fh.read()
        with open(args.golden, "rb") as fh:
            want = fh.read()
        if got != want:
            _log("validate: metrics differ from golden file")
            return EXIT_DATA
        _log("validate: metrics match golden file")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scarr",
        description="Two-step spatiotemporal calibration of gridded air-quality output",
    )
    parser.add_argument("--version", action="version", version=f"scarr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=True):
        if dataset:
            p.add_argument("dataset", help="dataset directory")
        p.add_argument("--out", help="output directory (default: <dataset>/out)")
        p.add_argument("--config", help="config file overriding the dataset's")
        p.add_argument("--jobs", type=int, help="worker cap (env SCARR_JOBS)")

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=int, help="length of the daily record")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("features", help="compute Step I covariates")
    common(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("fit-step1", help="fit the calibration regression")
    common(p)
    p.add_argument("--alpha", type=float, help="selection significance level")
    p.set_defaults(func=cmd_fit_step1)

    p = sub.add_parser("fit-step2", help="fit the dynamic state-space model")
    common(p)
    p.set_defaults(func=cmd_fit_step2)

    p = sub.add_parser("predict", help="predict at sites and on the raster grid")
    common(p)
    p.add_argument("--smoothed", action="store_true",
                   help="use smoothed instead of filtered states")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("validate", help="compute metrics; compare to a golden file")
    common(p)
    p.add_argument("--smoothed", action="store_true")
    p.add_argument("--golden", help="golden metrics file for byte comparison")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage errors already
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        _log(f"error: config: {exc}")
        return EXIT_CONFIG
    except DataError as exc:
        _log(f"error: data: {exc}")
        return EXIT_DATA
    except ConvergenceError as exc:
        _log(f"error: numeric: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

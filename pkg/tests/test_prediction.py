import math

import numpy as np
import pytest

from scarr import covariates as cov
from scarr.data_model import RasterGrid
from scarr.errors import DataError
from scarr.prediction import (
    build_dlm_inputs,
    c_tilde_for_day,
    covariate_value,
    metrics,
    pearson_r,
    predict_grid,
    predict_series,
    predict_site,
    raster_day_filename,
    state_path,
    write_metrics,
    write_prediction_rasters,
    write_site_predictions,
)
from scarr.step1 import (
    assemble_design,
    design_rows_from_covariates,
    fit_ols,
)
from scarr.step2 import DlmInputs, DlmParams, kalman_filter


@pytest.fixture(scope="module")
def mini_fit(mini_dataset):
    ds, _ = mini_dataset
    rows, _ = cov.build_covariates(ds)
    drows = design_rows_from_covariates(ds, rows)
    design = assemble_design(ds, drows)
    return fit_ols(design.X, design.y, design.names)


STATIC = {
    "ttv": np.arange(1.0, 8.0),
    "ttv_quadrant": np.arange(28.0).reshape(4, 7),
    "lu_area": {"forest": np.array([10.0, 20.0, 30.0])},
    "pop_density": 25_000.0,
    "elevation": 120.0,
    "cmaq_pixel": 1,
}
SEASON = dict(zip(cov.SEASON_NAMES, (0.1, 0.2, 0.3, 0.4)))


class TestCovariateValue:
    def test_intercept(self):
        assert covariate_value("intercept", STATIC, SEASON) == 1.0

    def test_pop_density_scaled(self):
        assert covariate_value("pop_density_10k", STATIC, SEASON) == pytest.approx(2.5)

    def test_season(self):
        assert covariate_value("cos_2pi_dyr", STATIC, SEASON) == 0.2

    def test_elevation(self):
        assert covariate_value("elevation_m", STATIC, SEASON) == 120.0

    def test_ttv_ring(self):
        assert covariate_value("ttv_1-2km", STATIC, SEASON) == 3.0

    def test_ttv_quadrant_ring(self):
        # NW is quadrant row 1; 0.5-1km is ring column 1
        assert covariate_value("ttv_NW_0.5-1km", STATIC, SEASON) == 8.0

    def test_landuse_combined_scaled(self):
        assert covariate_value("lu_forest_0-2km", STATIC, SEASON) == pytest.approx(0.06)

    def test_landuse_per_ring(self):
        assert covariate_value("lu_forest_1-2km", STATIC, SEASON) == pytest.approx(0.03)

    def test_unknown_column(self):
        with pytest.raises(DataError, match="unknown design column"):
            covariate_value("mystery", STATIC, SEASON)


class TestCTilde:
    def test_matches_manual_dot_product(self, mini_fit):
        dyr = 0.37
        season = dict(zip(cov.SEASON_NAMES, cov.seasonal_basis(dyr)))
        expected = sum(
            b * covariate_value(nm, STATIC, season)
            for nm, b in zip(mini_fit.names, mini_fit.beta)
            if nm != "cmaq"
        )
        assert c_tilde_for_day(mini_fit, STATIC, dyr) == pytest.approx(
            expected, rel=1e-12
        )

    def test_excludes_gridded_term(self, mini_fit):
        # changing the CMAQ coefficient must not change the additive bias
        import copy

        other = copy.deepcopy(mini_fit)
        other.beta = other.beta.copy()
        other.beta[other.names.index("cmaq")] += 100.0
        assert c_tilde_for_day(mini_fit, STATIC, 0.5) == c_tilde_for_day(
            other, STATIC, 0.5
        )


class TestBuildDlmInputs:
    def test_shapes_and_order(self, mini_dataset, mini_fit):
        ds, _ = mini_dataset
        inputs, site_ids, T = build_dlm_inputs(ds, mini_fit)
        assert T == 90
        assert site_ids == sorted(site_ids)
        assert inputs.y.shape == (90, 4)
        assert np.all(np.isfinite(inputs.c_tilde))

    def test_observation_masked_without_gridded_value(self, mini_dataset, mini_fit):
        ds, _ = mini_dataset
        inputs, _, _ = build_dlm_inputs(ds, mini_fit)
        present = np.isfinite(inputs.y)
        assert np.all(np.isfinite(inputs.y1[present]))

    def test_requires_dense_sites(self, mini_dataset, mini_fit):
        import copy

        ds, _ = mini_dataset
        ds2 = copy.copy(ds)
        ds2.sites = {k: v for k, v in ds.sites.items() if v.role != "dense_time"}
        with pytest.raises(DataError, match="no dense_time sites"):
            build_dlm_inputs(ds2, mini_fit)


def small_state_problem(rng, T=30, n=3):
    params = DlmParams(1.5, 2.0, 0.6, mu_a=0.0, beta_c=0.7, gamma_hat=0.5)
    y = rng.normal(12, 4, size=(T, n))
    y[rng.uniform(size=(T, n)) < 0.1] = np.nan
    c = rng.normal(5, 1, size=(T, n))
    y1 = rng.uniform(2, 15, size=(T, n))
    return params, DlmInputs(y=y, c_tilde=c, y1=y1)


class TestAugmentation:
    def test_all_missing_column_leaves_state_unchanged(self, rng):
        params, inputs = small_state_problem(rng)
        T, n = inputs.y.shape
        aug = DlmInputs(
            y=np.column_stack([inputs.y, np.full(T, np.nan)]),
            c_tilde=np.column_stack([inputs.c_tilde, np.zeros(T)]),
            y1=np.column_stack([inputs.y1, np.zeros(T)]),
        )
        base = kalman_filter(params, inputs)
        plus = kalman_filter(params, aug)
        np.testing.assert_allclose(plus.filtered_mean, base.filtered_mean, atol=1e-12)
        np.testing.assert_allclose(plus.filtered_var, base.filtered_var, atol=1e-12)
        assert plus.loglik == pytest.approx(base.loglik, abs=1e-12)

    def test_predict_site_is_state_plus_offset(self, rng):
        params, inputs = small_state_problem(rng)
        T = inputs.n_days
        c_new = rng.normal(4, 1, size=T)
        y1_new = rng.uniform(2, 15, size=T)
        p = predict_site("new", params, inputs, c_new, y1_new)
        a_mean, a_var, _ = state_path(params, inputs)
        expected = a_mean + params.beta_c * c_new + params.gamma_hat * y1_new
        np.testing.assert_allclose(p.pred, expected, rtol=1e-12)
        np.testing.assert_allclose(
            p.ci_half, 1.96 * np.sqrt(a_var + params.sigma_z**2), rtol=1e-12
        )

    def test_smoothed_option(self, rng):
        params, inputs = small_state_problem(rng)
        T = inputs.n_days
        c_new = np.zeros(T)
        y1_new = np.ones(T)
        pf = predict_site("new", params, inputs, c_new, y1_new, smoothed=False)
        ps = predict_site("new", params, inputs, c_new, y1_new, smoothed=True)
        assert not np.allclose(pf.pred, ps.pred)

    def test_day_outside_range(self, rng):
        params, inputs = small_state_problem(rng)
        with pytest.raises(DataError, match="outside fitted range"):
            predict_site("new", params, inputs, np.zeros(30), np.ones(30), days=[31])

    def test_predict_series_rejects_missing_offsets(self):
        params = DlmParams(1.0, 1.0, 0.5)
        with pytest.raises(DataError):
            predict_series(params, np.zeros(2), np.ones(2),
                           np.array([1.0, np.nan]), np.ones(2))

    def test_exclude_obs_noise_narrows_ci(self, rng):
        params, inputs = small_state_problem(rng)
        T = inputs.n_days
        wide = predict_site("n", params, inputs, np.zeros(T), np.ones(T))
        narrow = predict_site("n", params, inputs, np.zeros(T), np.ones(T),
                              include_obs_noise=False)
        assert np.all(narrow.ci_half < wide.ci_half)


class TestPredictGrid:
    def test_grid_days_and_nodata(self, mini_dataset, mini_fit, rng):
        ds, _ = mini_dataset
        inputs, _, T = build_dlm_inputs(ds, mini_fit)
        params = DlmParams(3.0, 4.0, 0.6, mu_a=0.0, beta_c=0.7, gamma_hat=0.5)
        # grid straddles the domain edge: left half outside coarse coverage
        grids = predict_grid(
            ds, mini_fit, params, inputs,
            n_cols=8, n_rows=4, x_ll=-24_000.0, y_ll=18_000.0, cell_size=6_000.0,
            days=[10, 40],
        )
        assert set(grids) == {10, 40}
        for g in grids.values():
            assert isinstance(g, RasterGrid)
            left = g.values[:, :3]
            assert np.all(left == g.nodata_value)
            inside = g.values[:, 5:]
            assert np.all(inside != g.nodata_value)
            assert np.all(inside > 0)

    def test_day_out_of_range(self, mini_dataset, mini_fit):
        ds, _ = mini_dataset
        inputs, _, T = build_dlm_inputs(ds, mini_fit)
        params = DlmParams(3.0, 4.0, 0.6)
        with pytest.raises(DataError, match="outside fitted range"):
            predict_grid(ds, mini_fit, params, inputs, 2, 2, 0, 0, 1000.0, [T + 1])

    def test_raster_writer(self, tmp_path, mini_dataset, mini_fit):
        ds, _ = mini_dataset
        inputs, _, _ = build_dlm_inputs(ds, mini_fit)
        params = DlmParams(3.0, 4.0, 0.6, beta_c=0.7, gamma_hat=0.5)
        grids = predict_grid(
            ds, mini_fit, params, inputs, 4, 4, 12_000.0, 12_000.0, 6_000.0, [7]
        )
        paths = write_prediction_rasters(grids, str(tmp_path))
        assert paths == [str(tmp_path / "no2_day0007.asc")]
        assert (tmp_path / "no2_day0007.asc").read_text().startswith("ncols 4")


class TestMetrics:
    def test_pearson_r(self):
        a = np.array([1.0, 2.0, 3.0])
        assert pearson_r(a, 2 * a + 1) == pytest.approx(1.0)
        assert pearson_r(a, -a) == pytest.approx(-1.0)
        assert math.isnan(pearson_r(a, np.ones(3)))

    def test_hand_example(self):
        days = np.arange(1, 5)
        preds = {"s": (days, np.array([1.0, 2.0, 3.0, 4.0]))}
        obs = {"s": (days, np.array([1.0, 2.0, 3.0, 8.0]))}
        raw = {"s": (days, np.array([0.0, 0.0, 0.0, 0.0]))}
        rep = metrics(preds, obs, raw, interval_pairs=[(2.0, 3.0), (4.0, 4.0)])
        assert rep.per_site["s"]["mse"] == pytest.approx(16.0 / 4)
        assert rep.per_site["s"]["mse_raw"] == pytest.approx((1 + 4 + 9 + 64) / 4)
        assert rep.mspe == pytest.approx(0.5)

    def test_missing_overlap_raises(self):
        preds = {"s": (np.array([1, 2]), np.array([np.nan, np.nan]))}
        obs = {"s": (np.array([1, 2]), np.array([1.0, 2.0]))}
        with pytest.raises(DataError, match="no overlapping days"):
            metrics(preds, obs)

    def test_skips_sites_without_observations(self):
        preds = {"s": (np.array([1]), np.array([1.0]))}
        rep = metrics(preds, {})
        assert rep.per_site == {}

    def test_metrics_csv_format(self, tmp_path):
        days = np.arange(1, 4)
        rep = metrics(
            {"s": (days, np.array([1.0, 2.0, 3.0]))},
            {"s": (days, np.array([1.0, 2.5, 3.0]))},
            interval_pairs=[(1.0, 2.0)],
        )
        path = tmp_path / "metrics.csv"
        write_metrics(rep, str(path), header_lines=["hdr"])
        lines = path.read_text().splitlines()
        assert lines[0] == "# hdr"
        assert lines[1] == "site_id,r,mse,r_raw,mse_raw"
        assert lines[-1].startswith("OVERALL_MSPE,1")

    def test_site_predictions_csv(self, tmp_path, rng):
        params, inputs = small_state_problem(rng)
        T = inputs.n_days
        p = predict_site("s1", params, inputs, np.zeros(T), np.ones(T))
        path = tmp_path / "preds.csv"
        write_site_predictions([p], str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "site_id,day,pred,ci_lo,ci_hi"
        assert len(lines) == T + 1
        first = lines[1].split(",")
        assert first[0] == "s1" and first[1] == "1"
        assert float(first[2]) - float(first[3]) == pytest.approx(
            float(p.ci_half[0]), rel=1e-9
        )


def test_raster_day_filename():
    assert raster_day_filename(7) == "no2_day0007.asc"
    assert raster_day_filename(365) == "no2_day0365.asc"

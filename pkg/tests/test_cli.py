import os
import shutil

import pytest

from scarr import __version__
from scarr.cli import EXIT_CONFIG, EXIT_DATA, main


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One full CLI pipeline run, shared by all tests in this module."""
    d = str(tmp_path_factory.mktemp("pipeline") / "ds")
    assert main(["simulate", "--seed", "7", "--days", "90", "--out", d]) == 0
    assert main(["features", d]) == 0
    assert main(["fit-step1", d]) == 0
    assert main(["fit-step2", d]) == 0
    assert main(["predict", d]) == 0
    assert main(["validate", d]) == 0
    return d


class TestPipeline:
    def test_all_products_written(self, pipeline_dir):
        out = os.path.join(pipeline_dir, "out")
        for name in (
            "covariates.csv", "step1_fit.txt", "step2_fit.txt",
            "state_path.csv", "site_predictions.csv", "metrics.csv",
        ):
            assert os.path.exists(os.path.join(out, name)), name

    def test_output_headers_carry_version_and_hash(self, pipeline_dir):
        path = os.path.join(pipeline_dir, "out", "step1_fit.txt")
        text = open(path).read()
        assert f"# scarr {__version__}" in text
        assert "# config_hash=" in text

    def test_step1_fit_reparses(self, pipeline_dir):
        from scarr.step1 import gamma_hat, read_step1_fit

        fit = read_step1_fit(os.path.join(pipeline_dir, "out", "step1_fit.txt"))
        assert fit.n == 40
        assert "cmaq" in fit.names
        assert 0.0 < fit.r2 <= 1.0
        assert abs(gamma_hat(fit)) < 5.0

    def test_step2_fit_reparses(self, pipeline_dir):
        from scarr.step2 import read_step2_fit

        p = read_step2_fit(os.path.join(pipeline_dir, "out", "step2_fit.txt"))
        assert p.sigma_z > 0
        assert 0 <= p.psi_a < 1

    def test_refit_is_byte_deterministic(self, pipeline_dir, tmp_path):
        src = os.path.join(pipeline_dir, "out", "step1_fit.txt")
        saved = tmp_path / "step1_fit.txt"
        shutil.copy(src, saved)
        assert main(["fit-step1", pipeline_dir]) == 0
        assert open(src, "rb").read() == saved.read_bytes()

    def test_simulate_is_byte_deterministic(self, pipeline_dir, tmp_path):
        d2 = str(tmp_path / "ds2")
        assert main(["simulate", "--seed", "7", "--days", "90", "--out", d2]) == 0
        for name in ("sites.csv", "daily_series.csv", "cmaq_daily.csv"):
            a = open(os.path.join(pipeline_dir, name), "rb").read()
            b = open(os.path.join(d2, name), "rb").read()
            assert a == b, name

    def test_validate_against_matching_golden(self, pipeline_dir, tmp_path):
        metrics = os.path.join(pipeline_dir, "out", "metrics.csv")
        golden = tmp_path / "golden.csv"
        shutil.copy(metrics, golden)
        assert main(["validate", pipeline_dir, "--golden", str(golden)]) == 0

    def test_validate_against_tampered_golden(self, pipeline_dir, tmp_path):
        metrics = os.path.join(pipeline_dir, "out", "metrics.csv")
        golden = tmp_path / "tampered.csv"
        golden.write_bytes(open(metrics, "rb").read() + b"extra\n")
        assert main(["validate", pipeline_dir, "--golden", str(golden)]) == EXIT_DATA

    def test_predict_writes_rasters_when_configured(self, pipeline_dir):
        cfg = os.path.join(pipeline_dir, "predict_config.txt")
        with open(cfg, "w") as fh:
            fh.write("grid_days=5 20\n")
            fh.write("grid_ncols=6\ngrid_nrows=6\ngrid_cell_size=8000\n")
            fh.write("grid_xll=0\ngrid_yll=0\n")
        try:
            assert main(["predict", pipeline_dir]) == 0
            rasters = os.path.join(pipeline_dir, "out", "rasters")
            assert sorted(os.listdir(rasters)) == [
                "no2_day0005.asc", "no2_day0020.asc",
            ]
        finally:
            os.remove(cfg)

    def test_smoothed_predict(self, pipeline_dir):
        assert main(["predict", pipeline_dir, "--smoothed"]) == 0


class TestErrorExits:
    def test_missing_dataset_is_data_error(self, tmp_path):
        assert main(["features", str(tmp_path / "nowhere")]) == EXIT_DATA

    def test_bad_config_key_is_config_error(self, pipeline_dir, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("not_a_real_key=1\n")
        assert main(["fit-step1", pipeline_dir, "--config", str(bad)]) == EXIT_CONFIG

    def test_fit_step2_requires_step1(self, tmp_path):
        d = str(tmp_path / "fresh")
        assert main(["simulate", "--seed", "3", "--days", "60", "--out", d]) == 0
        assert main(["fit-step2", d]) == EXIT_DATA

    def test_usage_error_exit_code(self, capsys):
        assert main(["no-such-command"]) == 2
        capsys.readouterr()

    def test_version_flag(self, capsys):
        assert main(["--version"]) == 0
        assert __version__ in capsys.readouterr().out


def test_console_script_installed():
    assert shutil.which("scarr") is not None

import os

import numpy as np
import pytest

from spinshuffle.arrayio import read_array
from spinshuffle.config import PipelineConfig, load_config
from spinshuffle.pipeline import PipelineError, run_pipeline

SMALL = dict(nx=32, ny=32, n_echoes=8, ensemble_size=64, subspace_k=2,
             max_iters=40, accel=3.0)


def small_config(tmp_path, **kw):
    args = dict(SMALL)
    args.update(kw)
    return PipelineConfig(output_dir=str(tmp_path), **args)


class TestRunPipeline:
    def test_outputs_written(self, tmp_path):
        cfg = small_config(tmp_path)
        report = run_pipeline(cfg)
        for name in ("labels", "truth_images", "ensemble", "basis", "masks",
                     "kspace", "coefficients", "images", "t2_map", "rho_map",
                     "singular_values"):
            assert (tmp_path / f"{name}.hdr").exists()
            assert (tmp_path / f"{name}.dat").exists()
        assert (tmp_path / "metrics.csv").exists()
        assert (tmp_path / "objective_trace.csv").exists()
        assert load_config(str(tmp_path / "resolved_config.ini")) == cfg
        assert report.image_nrmse < 0.5

    def test_bit_identical_rerun(self, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        run_pipeline(small_config(out_a))
        run_pipeline(small_config(out_b))
        for name in ("kspace", "coefficients", "images", "t2_map", "masks"):
            raw_a = (out_a / f"{name}.dat").read_bytes()
            raw_b = (out_b / f"{name}.dat").read_bytes()
            assert raw_a == raw_b, name

    def test_noiseless_fully_sampled_full_basis_identity(self, tmp_path):
        # consistency chain: accel 1, K = T, no noise, plain least squares
        cfg = small_config(tmp_path, accel=1.0, subspace_k=8,
                           noise_sigma=0.0, solver="cg", lam=0.0,
                           max_iters=10, tolerance=1e-12)
        report = run_pipeline(cfg)
        assert report.image_nrmse < 1e-6
        for rid, t2_true, mean, bias, std in report.region_stats:
            assert abs(bias) < 0.1

    def test_center_out_mode_runs(self, tmp_path):
        cfg = small_config(tmp_path, ordering="center-out", accel=2.0)
        report = run_pipeline(cfg)
        masks = read_array(str(tmp_path / "masks")).real > 0.5
        # single-pass ordering: every location acquired at most once
        assert masks.sum(axis=0).max() <= 1
        assert np.isfinite(report.image_nrmse)

    def test_stage_failure_reports_stage(self, tmp_path):
        cfg = small_config(tmp_path, solver="does-not-exist")
        with pytest.raises(PipelineError, match="reconstruct"):
            run_pipeline(cfg)

    def test_mask_echo_layout(self, tmp_path):
        cfg = small_config(tmp_path)
        run_pipeline(cfg)
        masks = read_array(str(tmp_path / "masks"))
        assert masks.shape == (cfg.n_echoes, cfg.nx, cfg.ny)

#!/usr/bin/env python3
"""
Pytest tests for evaluation
Per-image reports, the entropy baseline and configuration sweeps
"""

import json

import pytest
import numpy as np
import pandas as pd
import sys
import os

# Add project root to path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.codec import Codec
from src.config import ModelConfig
from src.exceptions import ConfigError
from src.evaluation import (COMPONENTS, REPORT_COLUMNS, EvalReport, ImageReport, dataset_entropy, eval_bpsp,
                            evaluate_image, first_order_entropy, load_sweep_spec, read_report, sweep)
from src.network import HierarchicalModel
from src.preproc import RgbImage, write_image

TINY = dict(N=8, K=2, C_f=4, C_d=2, levels=3, mixtures=2, res_blocks=1)


@pytest.fixture(scope="module")
def codec():
    return Codec.from_model(HierarchicalModel(ModelConfig(**TINY)))


@pytest.fixture
def rng():
    return np.random.default_rng(4)


@pytest.fixture
def image_dir(tmp_path, rng):
    data = tmp_path / "images"
    data.mkdir()
    for i in range(2):
        write_image(str(data / f"{i:03d}.png"), RgbImage(rng.integers(0, 256, size=(9, 12, 3), dtype=np.uint8)))
    return data


class TestEntropyBaseline:
    """First-order residual entropy"""

    def test_constant_image(self):
        img = RgbImage(np.full((16, 16, 3), 90, dtype=np.uint8))
        assert first_order_entropy(img) < 0.05

    def test_noise_is_near_eight_bits(self, rng):
        img = RgbImage(rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8))
        assert 7.9 < first_order_entropy(img) <= 8.0

    def test_padding_is_excluded(self):
        img = RgbImage(np.full((3, 5, 3), 200, dtype=np.uint8))
        # Corner Y residual plus zeros; padding to 8x8 would add many more zeros
        p = 1 / 45
        expected = -(p * np.log2(p) + (1 - p) * np.log2(1 - p))
        assert first_order_entropy(img) == pytest.approx(expected)

    def test_dataset_entropy(self, image_dir):
        (image_dir / "broken.png").write_bytes(b"nope")
        frame = dataset_entropy(str(image_dir))
        assert list(frame["image"]) == ["000.png", "001.png"]
        assert frame["bpsp"].between(6.5, 8.0).all()


@pytest.mark.integration
class TestEvalReport:
    """Real compression of a directory"""

    def test_evaluate_image(self, codec, rng):
        report = evaluate_image(codec, "x", RgbImage(rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)))
        assert report.lossless
        components = [getattr(report, c) for c in COMPONENTS]
        assert sum(components) + report.header_bpsp == pytest.approx(report.bpsp)

    def test_header_is_outside_the_loss_terms(self, codec, image_dir):
        means = eval_bpsp(str(image_dir), codec).mean()
        assert means["header_bpsp"] > 0
        assert means[list(COMPONENTS)].sum() < means["bpsp"]
        assert means[list(COMPONENTS)].sum() + means["header_bpsp"] == pytest.approx(means["bpsp"])

    def test_failures_are_recorded(self, codec, image_dir):
        (image_dir / "broken.png").write_bytes(b"nope")
        report = eval_bpsp(str(image_dir), codec)
        assert len(report.images) == 3
        assert [r.image for r in report.failures] == ["broken.png"]
        assert "ImageFormatError" in report.failures[0].error
        ok = [r.bpsp for r in report.images if r.error is None]
        assert report.mean_bpsp == pytest.approx(np.mean(ok))

    def test_csv_round_trip(self, codec, image_dir, tmp_path):
        report = eval_bpsp(str(image_dir), codec)
        path = str(tmp_path / "report.csv")
        report.to_csv(path)
        frame = read_report(path)
        assert list(frame.columns) == list(REPORT_COLUMNS)
        np.testing.assert_allclose(frame["bpsp"], [r.bpsp for r in report.images])
        assert frame["lossless"].all()

    def test_failed_row_frame(self):
        frame = EvalReport([ImageReport(image="a.png", error="boom")]).to_frame()
        assert frame.loc[0, "error"] == "boom"
        assert np.isnan(frame.loc[0, "bpsp"])

    @pytest.mark.slow
    def test_parallel_matches_serial(self, codec, image_dir):
        serial = eval_bpsp(str(image_dir), codec).to_frame()
        parallel = eval_bpsp(str(image_dir), codec, workers=2).to_frame()
        pd.testing.assert_series_equal(serial["bpsp"], parallel["bpsp"])


class TestSweep:
    """Train-and-evaluate over configuration overrides"""

    def write_spec(self, tmp_path, image_dir, runs):
        path = tmp_path / "sweep.json"
        path.write_text(json.dumps({"data": str(image_dir), "base": TINY, "train": {"epochs": 1}, "runs": runs}))
        return str(path)

    def test_spec_needs_runs(self, tmp_path):
        path = tmp_path / "sweep.json"
        path.write_text(json.dumps({"data": "x", "runs": []}))
        with pytest.raises(ConfigError):
            load_sweep_spec(str(path))

    def test_unreadable_spec(self, tmp_path):
        with pytest.raises(ConfigError):
            load_sweep_spec(str(tmp_path / "missing.json"))

    @pytest.mark.integration
    def test_runs_and_failures(self, tmp_path, image_dir):
        spec = self.write_spec(tmp_path, image_dir, [{"name": "k1", "K": 1}, {"name": "bad", "levels": 7}])
        report_path = str(tmp_path / "sweep.csv")
        frame = sweep(spec, report_path, work_dir=str(tmp_path / "work"))
        assert list(frame["run"]) == ["k1", "bad"]
        assert frame.loc[0, "bpsp"] > 0 and pd.isna(frame.loc[0, "error"])
        assert np.isnan(frame.loc[1, "bpsp"]) and "levels" in frame.loc[1, "error"]
        assert os.path.exists(str(tmp_path / "work" / "k1.gtns"))
        assert list(read_report(report_path)["run"]) == ["k1", "bad"]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

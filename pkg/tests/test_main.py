#!/usr/bin/env python3
"""
Pytest tests for the glc command line
"""

import json

import pytest
import numpy as np
import sys
import os

# Add project root to path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.checkpoint import save_checkpoint
from src.config import ModelConfig, TrainConfig, save_run_config
from src.main import build_parser, main
from src.network import HierarchicalModel
from src.preproc import RgbImage, read_image, write_image

TINY = ModelConfig(N=8, K=2, C_f=4, C_d=2, levels=3, mixtures=2, res_blocks=1)


@pytest.fixture
def workspace(tmp_path):
    rng = np.random.default_rng(12)
    data = tmp_path / "data"
    data.mkdir()
    for i in range(2):
        write_image(str(data / f"{i:03d}.png"), RgbImage(rng.integers(0, 256, size=(10, 9, 3), dtype=np.uint8)))
    model = HierarchicalModel(TINY)
    save_checkpoint(str(tmp_path / "model.gtns"), model.state_dict(), TINY)
    return tmp_path


class TestParser:
    """Argument parsing"""

    def test_compress_arguments(self):
        args = build_parser().parse_args(["compress", "--in", "a.png", "--model", "m", "--out", "a.glc", "--verify"])
        assert (args.input, args.model, args.out, args.verify) == ("a.png", "m", "a.glc", True)

    def test_train_defaults(self):
        args = build_parser().parse_args(["train", "--data", "d", "--out", "m"])
        assert args.profile == "desk" and args.config is None and args.seed is None

    def test_command_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


@pytest.mark.integration
class TestCommands:
    """Subcommands end to end on a tiny model"""

    def test_compress_and_decompress(self, workspace, capsys):
        image = str(workspace / "data" / "000.png")
        container = str(workspace / "a.glc")
        restored = str(workspace / "a.png")
        model = str(workspace / "model.gtns")
        assert main(["compress", "--in", image, "--model", model, "--out", container, "--verify"]) == 0
        assert "bpsp" in capsys.readouterr().out
        assert main(["decompress", "--in", container, "--model", model, "--out", restored]) == 0
        np.testing.assert_array_equal(read_image(restored).pixels, read_image(image).pixels)

    def test_eval_writes_report(self, workspace):
        report = str(workspace / "report.csv")
        code = main(["eval", "--data", str(workspace / "data"), "--model", str(workspace / "model.gtns"),
                     "--report", report])
        assert code == 0
        assert os.path.exists(report)

    def test_eval_reports_failures(self, workspace):
        (workspace / "data" / "bad.png").write_bytes(b"bad")
        code = main(["eval", "--data", str(workspace / "data"), "--model", str(workspace / "model.gtns")])
        assert code == 1

    def test_entropy_baseline(self, workspace, capsys):
        assert main(["entropy-baseline", "--data", str(workspace / "data")]) == 0
        assert "first-order entropy" in capsys.readouterr().out

    def test_train_from_config(self, workspace):
        config = str(workspace / "run.json")
        save_run_config(config, TINY, TrainConfig(epochs=1))
        out = str(workspace / "trained.gtns")
        assert main(["train", "--data", str(workspace / "data"), "--out", out, "--config", config, "--seed", "4"]) == 0
        with open(f"{out}.json") as f:
            assert json.load(f)["config"]["seed"] == 4

    def test_inspect(self, workspace):
        out = workspace / "inspect"
        assert main(["inspect", "--in", str(workspace / "data" / "001.png"), "--model",
                     str(workspace / "model.gtns"), "--out", str(out)]) == 0
        assert (out / "cluster_map.ppm").exists()

    def test_missing_model_exits_with_error(self, workspace):
        code = main(["compress", "--in", str(workspace / "data" / "000.png"), "--model",
                     str(workspace / "nope.gtns"), "--out", str(workspace / "x.glc")])
        assert code == 1

    def test_mismatched_sidecar_exits_with_error(self, workspace):
        sidecar = workspace / "model.gtns.json"
        settings = json.loads(sidecar.read_text())
        settings["config"]["mixtures"] = 3
        sidecar.write_text(json.dumps(settings))
        code = main(["compress", "--in", str(workspace / "data" / "000.png"), "--model",
                     str(workspace / "model.gtns"), "--out", str(workspace / "x.glc")])
        assert code == 1
        assert not (workspace / "x.glc").exists()

    def test_wrong_model_exits_with_error(self, workspace):
        container = str(workspace / "a.glc")
        main(["compress", "--in", str(workspace / "data" / "000.png"), "--model", str(workspace / "model.gtns"),
              "--out", container])
        other = HierarchicalModel(ModelConfig(**{**TINY.to_dict(), "seed": 9}))
        save_checkpoint(str(workspace / "other.gtns"), other.state_dict(), other.config)
        code = main(["decompress", "--in", container, "--model", str(workspace / "other.gtns"),
                     "--out", str(workspace / "x.png")])
        assert code == 1


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

"""
Evaluation
Real-compression bpsp reports, the first-order entropy baseline and
configuration sweeps written as CSV.
"""

import json
import logging
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy.stats import entropy

from .codec import Codec
from .config import ModelConfig, TrainConfig
from .exceptions import CodecError, ConfigError
from .preproc import preprocess, read_image
from .trainer import Trainer, list_images

logger = logging.getLogger(__name__)

COMPONENTS = ("L_r", "L_zQ1", "L_cluster", "L_raw")
REPORT_COLUMNS = ("image", "height", "width", "bpsp", *COMPONENTS, "header_bpsp",
                  "encode_seconds", "decode_seconds", "lossless", "error")


@dataclass
class ImageReport:
    image: str
    height: int = 0
    width: int = 0
    bpsp: float = math.nan
    L_r: float = math.nan
    L_zQ1: float = math.nan
    L_cluster: float = math.nan
    L_raw: float = math.nan
    header_bpsp: float = math.nan
    encode_seconds: float = math.nan
    decode_seconds: float = math.nan
    lossless: Optional[bool] = None
    error: Optional[str] = None


@dataclass
class EvalReport:
    """
    Per-image rows plus dataset means (failed images excluded from the means)

    bpsp is the full container size. The four loss-term columns cover the coded
    sections only; the fixed container header is reported separately as
    header_bpsp, so L_r + L_zQ1 + L_cluster + L_raw + header_bpsp == bpsp. Terms a
    model does not have (L_zQ1 below three levels) stay NaN.
    """
    images: List[ImageReport] = field(default_factory=list)

    def to_frame(self):
        return pd.DataFrame([asdict(r) for r in self.images], columns=list(REPORT_COLUMNS))

    def mean(self):
        frame = self.to_frame()
        ok = frame[frame["error"].isna()]
        return ok[["bpsp", *COMPONENTS, "header_bpsp", "encode_seconds", "decode_seconds"]].mean()

    @property
    def mean_bpsp(self):
        return float(self.mean()["bpsp"])

    @property
    def failures(self):
        return [r for r in self.images if r.error is not None]

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)
        logger.info(f"💾 Wrote report for {len(self.images)} images to {path}")


def evaluate_image(codec, name, img):
    """Compress and decompress one image for real and record sizes and timings"""
    data, stats = codec.compress(img)
    start = time.perf_counter()
    restored = codec.decompress(data)
    decode_seconds = time.perf_counter() - start
    components = stats.component_bpsp()
    return ImageReport(
        image=name,
        height=img.height,
        width=img.width,
        bpsp=stats.bpsp,
        header_bpsp=components.pop("header_bpsp"),
        encode_seconds=stats.encode_seconds,
        decode_seconds=decode_seconds,
        lossless=bool(np.array_equal(restored.pixels, img.pixels)),
        **{k: v for k, v in components.items() if k in COMPONENTS},
    )


def _evaluate_path(codec, path):
    name = os.path.basename(path)
    try:
        report = evaluate_image(codec, name, read_image(path))
        if not report.lossless:
            logger.error(f"❌ {name}: decoded image differs from the original")
        return report
    except CodecError as e:
        logger.error(f"❌ {name}: {e}")
        return ImageReport(image=name, error=f"{type(e).__name__}: {e}")


def eval_bpsp(data_dir, codec, workers=1):
    """
    Evaluate a codec on every image in a directory

    Args:
        data_dir (str): Image directory
        codec (Codec): Model to evaluate
        workers (int): Processes to spread images over

    Returns:
        EvalReport: One row per image; failures are recorded, not raised
    """
    paths = list_images(data_dir)
    if workers > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_evaluate_path, [codec] * len(paths), paths))
    else:
        rows = [_evaluate_path(codec, path) for path in paths]
    report = EvalReport(rows)
    if len(report.failures) < len(rows):
        logger.info(f"📊 Mean {report.mean_bpsp:.4f} bpsp over {len(rows) - len(report.failures)} images")
    return report


def first_order_entropy(img, N=8):
    """
    Shannon entropy of the residual histogram, in bits per sub-pixel

    Only residuals inside the original image count; padding is excluded.
    """
    stack = preprocess(img, N)
    mask = np.broadcast_to(stack.valid_mask()[:, None], stack.symbols.shape)
    counts = np.bincount(stack.symbols[mask].reshape(-1), minlength=256)
    return float(entropy(counts, base=2))


def dataset_entropy(data_dir):
    """
    First-order entropy for each image in data_dir

    Returns:
        pd.DataFrame: image, bpsp (unreadable images are skipped)
    """
    rows = []
    for path in list_images(data_dir):
        try:
            rows.append({"image": os.path.basename(path), "bpsp": first_order_entropy(read_image(path))})
        except CodecError as e:
            logger.warning(f"⚠️ Skipping {path}: {e}")
    frame = pd.DataFrame(rows, columns=["image", "bpsp"])
    if len(frame):
        logger.info(f"First-order entropy baseline: {frame['bpsp'].mean():.4f} bpsp")
    return frame


def load_sweep_spec(path):
    """
    Read a sweep spec

    {"data": DIR, "eval_data": DIR (optional), "base": {...model overrides},
     "train": {...train overrides}, "runs": [{"name": ..., ...model overrides}, ...]}
    """
    try:
        with open(path) as f:
            spec = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read sweep spec {path}: {e}") from e
    if "data" not in spec or not spec.get("runs"):
        raise ConfigError("sweep spec needs 'data' and a non-empty 'runs' list")
    return spec


def sweep(spec_path, report_path=None, work_dir=None):
    """
    Train and evaluate each configuration of a sweep spec

    Returns:
        pd.DataFrame: One row per run with mean bpsp and components; failed runs carry an error
    """
    spec = load_sweep_spec(spec_path)
    base = spec.get("base", {})
    train_config = TrainConfig.from_dict(spec.get("train", {}))
    eval_dir = spec.get("eval_data", spec["data"])
    work_dir = work_dir or tempfile.mkdtemp(prefix="glc-sweep-")
    os.makedirs(work_dir, exist_ok=True)

    rows = []
    for i, run in enumerate(spec["runs"]):
        run = dict(run)
        name = run.pop("name", f"run{i}")
        row = {"run": name, **base, **run}
        try:
            model_config = ModelConfig.from_dict({**base, **run})
            trainer = Trainer(model_config, train_config)
            trainer.train(spec["data"], os.path.join(work_dir, f"{name}.gtns"))
            report = eval_bpsp(eval_dir, Codec.from_model(trainer.model))
            means = report.mean()
            row.update({"bpsp": means["bpsp"], **{c: means[c] for c in COMPONENTS}, "error": None})
        except CodecError as e:
            logger.error(f"❌ Sweep run {name} failed: {e}")
            row.update({"bpsp": math.nan, **{c: math.nan for c in COMPONENTS}, "error": str(e)})
        rows.append(row)

    frame = pd.DataFrame(rows)
    if report_path:
        frame.to_csv(report_path, index=False)
        logger.info(f"💾 Wrote sweep table to {report_path}")
    return frame


def read_report(path):
    """Parse an eval or sweep CSV; absent components come back as NaN"""
    frame = pd.read_csv(path)
    for column in ("bpsp", *COMPONENTS):
        if column in frame:
            frame[column] = pd.to_numeric(frame[column], errors="coerce")
    return frame
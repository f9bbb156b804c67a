"""
Cluster Inspection
Dump what the clustering module sees for one image: a patch map coloured by
cluster, the shared latents per cluster and the rebuilt top-level features.
"""

import logging
import os

import numpy as np
from matplotlib import colormaps
from PIL import Image

from .network import dequantize
from .preproc import preprocess, rct_forward, residual_forward, write_residual_pgm
from .tensor import no_grad

logger = logging.getLogger(__name__)


def cluster_palette(K):
    """K distinct RGB colours (uint8) from matplotlib's categorical maps"""
    cmap = colormaps["tab10" if K <= 10 else "tab20"]
    colours = [cmap(i % cmap.N)[:3] for i in range(K)]
    return (np.array(colours) * 255).round().astype(np.uint8)


def to_gray(values):
    """Map [-1, 1] to 8-bit gray"""
    return np.clip(np.round((np.asarray(values, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def tile(blocks, columns, gap=1):
    """
    Arrange n equally sized 2-D blocks on a grid with a one-pixel black gap

    Args:
        blocks (np.ndarray): n x h x w
        columns (int): Blocks per row
    """
    n, h, w = blocks.shape
    rows = -(-n // columns)
    canvas = np.zeros((rows * (h + gap) - gap, columns * (w + gap) - gap), dtype=blocks.dtype)
    for i in range(n):
        r, c = divmod(i, columns)
        canvas[r * (h + gap):r * (h + gap) + h, c * (w + gap):c * (w + gap) + w] = blocks[i]
    return canvas


def cluster_map(labels, grid, N, dims):
    """H x W x 3 image with every patch painted in its argmax cluster colour"""
    rows, cols = grid
    palette = cluster_palette(labels.K)
    assignment = labels.hard_assignment().reshape(rows, cols)
    painted = palette[assignment].repeat(N, axis=0).repeat(N, axis=1)
    H, W = dims
    return np.ascontiguousarray(painted[:H, :W])


def inspect(img, codec, out_dir):
    """
    Write cluster diagnostics for one image

    Args:
        img (RgbImage): Image to analyse
        codec (Codec): Model with clustering (levels >= 2)
        out_dir (str): Output directory

    Returns:
        dict: Name -> written path(s)
    """
    config = codec.config
    model = codec.model
    os.makedirs(out_dir, exist_ok=True)
    outputs = {}

    stack = preprocess(img, config.N)
    residuals = residual_forward(rct_forward(img))
    outputs["residuals"] = write_residual_pgm(out_dir, residuals)

    if not config.uses_clustering:
        logger.warning("Model has no clustering level; only residual dumps were written")
        return outputs

    with no_grad():
        encoded = model.encode(stack)
        top = model.top_input(encoded.labels, encoded.shared).data

    path = os.path.join(out_dir, "cluster_map.ppm")
    Image.fromarray(cluster_map(encoded.labels, stack.grid, config.N, stack.orig_dims)).save(path)
    outputs["cluster_map"] = path

    side = config.latent_side(config.levels)
    shared = dequantize(encoded.shared, config.quant_levels).reshape(config.K, config.C_d, side, side)
    outputs["shared_latents"] = []
    for k in range(config.K):
        path = os.path.join(out_dir, f"shared_latent_k{k}.pgm")
        Image.fromarray(tile(to_gray(shared[k]), columns=config.C_d)).save(path)
        outputs["shared_latents"].append(path)

    # Patch-grid mosaics of each top-level channel, laid out like the image
    outputs["top_features"] = []
    for channel in range(config.C_d):
        plane = unpatchify_plane(top[:, channel], stack.grid)
        path = os.path.join(out_dir, f"top_features_c{channel}.pgm")
        Image.fromarray(to_gray(plane)).save(path)
        outputs["top_features"].append(path)

    counts = np.bincount(encoded.labels.hard_assignment(), minlength=config.K)
    logger.info(f"🔍 Cluster sizes {counts.tolist()}; wrote diagnostics to {out_dir}")
    return outputs


def unpatchify_plane(blocks, grid):
    """P x s x s -> (rows*s) x (cols*s) in raster patch order"""
    rows, cols = grid
    P, s, _ = blocks.shape
    return blocks.reshape(rows, cols, s, s).transpose(0, 2, 1, 3).reshape(rows * s, cols * s)

#!/usr/bin/env python3
"""
🎨 Toy Corpus Generator
Write a seeded set of small synthetic images for desk-scale training and evaluation

Usage:
    python scripts/make_toy_corpus.py --out data/toy
    python scripts/make_toy_corpus.py --out data/toy --count 32 --size 96 --seed 7
"""

import argparse
import logging
import os
import sys

import numpy as np

sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from src.log_setup import setup_logging
from src.preproc import RgbImage, write_image

logger = logging.getLogger(__name__)

KINDS = ("gradient", "stripes", "glyphs", "noise", "two_region")


def gradient(rng, h, w):
    y, x = np.mgrid[0:h, 0:w]
    start = rng.integers(0, 256, size=3)
    slope = rng.uniform(-2, 2, size=(2, 3))
    img = start + y[..., None] * slope[0] + x[..., None] * slope[1]
    return np.mod(np.round(img), 256)


def stripes(rng, h, w):
    period = int(rng.integers(2, 12))
    colours = rng.integers(0, 256, size=(2, 3))
    axis = np.mgrid[0:h, 0:w][int(rng.integers(0, 2))]
    return colours[(axis // period) % 2]


def glyphs(rng, h, w):
    """Dark blocky 'text' on a light page"""
    img = np.full((h, w, 3), 235)
    cell = 6
    for r in range(1, h // cell - 1, 2):
        for c in range(1, w // cell - 1):
            if rng.random() < 0.7:
                mask = rng.random((cell - 1, cell - 1)) < 0.45
                block = img[r * cell:r * cell + cell - 1, c * cell:c * cell + cell - 1]
                block[mask] = 20
    return img


def noise(rng, h, w):
    return rng.integers(0, 256, size=(h, w, 3))


def two_region(rng, h, w):
    """Noisy top half over a flat bottom half"""
    img = np.empty((h, w, 3))
    img[:h // 2] = rng.integers(0, 256, size=(h // 2, w, 3))
    img[h // 2:] = rng.integers(0, 256, size=3)
    return img


GENERATORS = {"gradient": gradient, "stripes": stripes, "glyphs": glyphs, "noise": noise, "two_region": two_region}


def make_corpus(out_dir, count, size, seed):
    """
    Write `count` PNG images cycling through every kind

    Returns:
        list: Written paths
    """
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        kind = KINDS[i % len(KINDS)]
        h = int(rng.integers(size // 2, size + 1))
        w = int(rng.integers(size // 2, size + 1))
        img = RgbImage(np.asarray(GENERATORS[kind](rng, h, w), dtype=np.int64).astype(np.uint8))
        path = os.path.join(out_dir, f"{i:03d}_{kind}.png")
        write_image(path, img)
        paths.append(path)
    logger.info(f"✅ Wrote {len(paths)} images to {out_dir}")
    return paths


def main():
    """Main entry point"""
    parser = argparse.ArgumentParser(description='Generate a synthetic training corpus')
    parser.add_argument('--out', required=True, help='Output directory')
    parser.add_argument('--count', type=int, default=16, help='Number of images')
    parser.add_argument('--size', type=int, default=96, help='Largest image side')
    parser.add_argument('--seed', type=int, default=0, help='Random seed')

    args = parser.parse_args()
    setup_logging(json_lines=False)
    make_corpus(args.out, args.count, args.size, args.seed)


if __name__ == "__main__":
    main()

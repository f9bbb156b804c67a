"""
Image Preprocessing
Reversible transforms applied before modelling: integer colour transform,
MED prediction residuals wrapped mod 256, zero padding and patch stacking.
"""

import logging
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import ConfigError, ImageFormatError

logger = logging.getLogger(__name__)

CHANNELS = ("Y", "Cr", "Cb")


@dataclass
class RgbImage:
    """H x W x 3 array of 8-bit samples"""
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ImageFormatError(f"expected H x W x 3 samples, got shape {pixels.shape}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ImageFormatError("image must have at least one pixel")
        if pixels.dtype != np.uint8:
            if np.any((pixels < 0) | (pixels > 255)) or not np.all(np.equal(np.mod(pixels, 1), 0)):
                raise ImageFormatError("samples must be integers in [0, 255]")
            pixels = pixels.astype(np.uint8)
        self.pixels = pixels

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass
class YccImage:
    """Y, Cr, Cb planes as H x W x 3 uint8; Cr/Cb are stored mod 256"""
    planes: np.ndarray

    @property
    def height(self):
        return self.planes.shape[0]

    @property
    def width(self):
        return self.planes.shape[1]


@dataclass
class ResidualStack:
    """
    P x 3 x N x N residual symbols in raster patch order

    orig_dims is the (H, W) of the image before padding; grid is (rows, cols) of patches.
    """
    symbols: np.ndarray
    N: int
    orig_dims: tuple

    @property
    def P(self):
        return self.symbols.shape[0]

    @property
    def grid(self):
        return patch_grid(self.orig_dims, self.N)

    def valid_mask(self):
        """P x N x N boolean mask of positions inside the original image"""
        rows, cols = self.grid
        H, W = self.orig_dims
        inside = np.zeros((rows * self.N, cols * self.N), dtype=bool)
        inside[:H, :W] = True
        return inside.reshape(rows, self.N, cols, self.N).transpose(0, 2, 1, 3).reshape(-1, self.N, self.N)


def patch_grid(dims, N):
    """(ceil(H/N), ceil(W/N))"""
    H, W = dims
    return -(-H // N), -(-W // N)


def rct_forward(img):
    """
    RGB -> YCrCb as an integer lifting pair on the 256-symbol alphabet

        Cr = (R - G) mod 256, Cb = (B - G) mod 256, Y = (G + floor((Cr + Cb + 2) / 4)) mod 256

    Args:
        img (RgbImage): Input image

    Returns:
        YccImage: Planes in Y, Cr, Cb order
    """
    rgb = img.pixels.astype(np.int32)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    cr = (r - g) % 256
    cb = (b - g) % 256
    y = (g + (cr + cb + 2) // 4) % 256
    return YccImage(np.stack([y, cr, cb], axis=-1).astype(np.uint8))


def rct_inverse(ycc):
    """Exact inverse of rct_forward"""
    planes = ycc.planes.astype(np.int32)
    y, cr, cb = planes[..., 0], planes[..., 1], planes[..., 2]
    g = (y - (cr + cb + 2) // 4) % 256
    r = (cr + g) % 256
    b = (cb + g) % 256
    return RgbImage(np.stack([r, g, b], axis=-1).astype(np.uint8))


def med_predict(a, b, c):
    """
    Median edge detector

    min(a, b) if c >= max(a, b); max(a, b) if c <= min(a, b); otherwise a + b - c.
    a is the left neighbour, b the one above, c the one above-left. Accepts
    scalars or arrays.
    """
    a, b, c = np.asarray(a), np.asarray(b), np.asarray(c)
    high = np.maximum(a, b)
    low = np.minimum(a, b)
    pred = np.where(c >= high, low, np.where(c <= low, high, a + b - c))
    return int(pred) if pred.ndim == 0 else pred


def _predict_all(x):
    """MED predictions for every pixel of an H x W x C integer array"""
    pred = np.zeros_like(x)
    pred[1:, 1:] = med_predict(x[1:, :-1], x[:-1, 1:], x[:-1, :-1])
    pred[0, 1:] = x[0, :-1]
    pred[1:, 0] = x[:-1, 0]
    return pred


def residual_forward(ycc):
    """
    Per-channel MED residuals, (x - x_hat) mod 256

    Returns:
        np.ndarray: H x W x 3 uint8 residual image
    """
    x = ycc.planes.astype(np.int32)
    return ((x - _predict_all(x)) % 256).astype(np.uint8)


def residual_inverse(residuals):
    """
    Rebuild the YCrCb planes from MED residuals

    Pixels on the anti-diagonal i + j = d only depend on diagonals < d, so each
    diagonal is restored in one vectorised step; the result equals a raster scan.

    Args:
        residuals (np.ndarray): H x W x 3 residual image

    Returns:
        YccImage: Reconstructed planes
    """
    r = np.asarray(residuals).astype(np.int32)
    H, W = r.shape[:2]
    x = np.zeros_like(r)
    for d in range(H + W - 1):
        i = np.arange(max(0, d - W + 1), min(d, H - 1) + 1)
        j = d - i
        left = x[i, np.maximum(j - 1, 0)]
        above = x[np.maximum(i - 1, 0), j]
        corner = x[np.maximum(i - 1, 0), np.maximum(j - 1, 0)]

        pred = med_predict(left, above, corner)
        pred = np.where((i == 0)[:, None] & (j > 0)[:, None], left, pred)
        pred = np.where((j == 0)[:, None] & (i > 0)[:, None], above, pred)
        pred = np.where(((i == 0) & (j == 0))[:, None], 0, pred)

        x[i, j] = (r[i, j] + pred) % 256
    return YccImage(x.astype(np.uint8))


def pad_to_multiple(ycc, N):
    """Zero-pad right and bottom so both sides are multiples of N"""
    rows, cols = patch_grid((ycc.height, ycc.width), N)
    padded = np.zeros((rows * N, cols * N, 3), dtype=np.uint8)
    padded[:ycc.height, :ycc.width] = ycc.planes
    return YccImage(padded)


def _check_patch_side(N):
    if N < 8 or N % 8 != 0:
        raise ConfigError(f"patch side N={N} must be a positive multiple of 8")


def patchify(residuals, N, orig_dims=None):
    """
    Cut an H x W x 3 residual image into raster-ordered N x N patches

    Args:
        residuals (np.ndarray): Residual image (zero-padded here if needed)
        N (int): Patch side, a multiple of 8
        orig_dims (tuple): (H, W) to record; defaults to the residual image size

    Returns:
        ResidualStack: P x 3 x N x N symbols
    """
    _check_patch_side(N)
    residuals = np.asarray(residuals, dtype=np.uint8)
    H, W = residuals.shape[:2]
    if orig_dims is None:
        orig_dims = (H, W)
    rows, cols = patch_grid((H, W), N)
    padded = np.zeros((rows * N, cols * N, 3), dtype=np.uint8)
    padded[:H, :W] = residuals
    symbols = padded.reshape(rows, N, cols, N, 3).transpose(0, 2, 4, 1, 3).reshape(rows * cols, 3, N, N)
    return ResidualStack(np.ascontiguousarray(symbols), N, tuple(int(v) for v in orig_dims))


def unpatchify(stack):
    """Reassemble patches and strip the padding back to orig_dims"""
    rows, cols = stack.grid
    N = stack.N
    if stack.P != rows * cols:
        raise ConfigError(f"stack holds {stack.P} patches but dims {stack.orig_dims} need {rows * cols}")
    full = stack.symbols.reshape(rows, cols, 3, N, N).transpose(0, 3, 1, 4, 2).reshape(rows * N, cols * N, 3)
    H, W = stack.orig_dims
    return np.ascontiguousarray(full[:H, :W])


def preprocess(img, N):
    """RGB image -> ResidualStack (colour transform, zero pad, MED residuals, patches)"""
    _check_patch_side(N)
    ycc = rct_forward(img)
    padded = pad_to_multiple(ycc, N)
    stack = patchify(residual_forward(padded), N, orig_dims=(img.height, img.width))
    logger.debug(f"Preprocessed {img.height}x{img.width} image into {stack.P} patches of {N}x{N}")
    return stack


def postprocess(stack):
    """
    Inverse of preprocess

    MED only looks left and up, so residuals inside the original area do not
    depend on the padding and the cropped residual image inverts on its own.
    """
    return rct_inverse(residual_inverse(unpatchify(stack)))


def read_image(path):
    """
    Read an 8-bit PNG or PPM as an RgbImage

    Grayscale and palette images are expanded to RGB; alpha and 16-bit images are refused.
    """
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "P"):
                im = im.convert("RGB")
            if im.mode != "RGB":
                raise ImageFormatError(f"{path}: unsupported mode {im.mode} (need 8-bit RGB)")
            return RgbImage(np.array(im, dtype=np.uint8))
    except (OSError, UnidentifiedImageError) as e:
        raise ImageFormatError(f"cannot read image {path}: {e}") from e


def write_image(path, img):
    """Write PNG or PPM depending on the extension"""
    Image.fromarray(np.ascontiguousarray(img.pixels)).save(path)


def write_residual_pgm(out_dir, residuals, stem="residual"):
    """
    Dump each residual channel as a binary PGM for inspection

    Returns:
        list: Written file paths
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for ch, name in enumerate(CHANNELS):
        path = os.path.join(out_dir, f"{stem}_{name}.pgm")
        Image.fromarray(np.ascontiguousarray(residuals[..., ch])).save(path)
        paths.append(path)
    return paths

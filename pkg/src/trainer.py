"""
Model Training
RMSProp over the hierarchical model, one image per step, minimising the
coded size of residuals and latents in bits per sub-pixel.
"""

import logging
import math
import os
from glob import glob

import numpy as np

from .checkpoint import save_checkpoint
from .exceptions import ImageFormatError, TrainingDivergedError
from .network import HierarchicalModel
from .preproc import ResidualStack, preprocess, read_image
from .tensor import backward

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".ppm", ".pgm")


class RMSProp:
    """
    sq <- alpha * sq + (1 - alpha) * g^2;  p <- p - lr * g / (sqrt(sq) + eps)

    Args:
        parameters (dict): name -> leaf Tensor
        alpha (float): Smoothing constant
        eps (float): Denominator floor
    """

    def __init__(self, parameters, alpha=0.99, eps=1e-8):
        self.parameters = parameters
        self.alpha = alpha
        self.eps = eps
        self.square_avg = {name: np.zeros_like(t.data) for name, t in parameters.items()}

    def step(self, grads, lr):
        for name, tensor in self.parameters.items():
            g = grads[name]
            avg = self.square_avg[name]
            avg *= self.alpha
            avg += (1 - self.alpha) * g * g
            tensor.data = (tensor.data - lr * g / (np.sqrt(avg) + self.eps)).astype(tensor.data.dtype)


def clip_by_global_norm(grads, max_norm):
    """Scale all gradients together so their joint L2 norm is at most max_norm"""
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm is None or norm <= max_norm or norm == 0:
        return grads, norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


def list_images(data_dir):
    """Sorted image files directly inside data_dir"""
    paths = [p for p in sorted(glob(os.path.join(data_dir, "*"))) if p.lower().endswith(IMAGE_EXTENSIONS)]
    if not paths:
        logger.warning(f"No images found in {data_dir}")
    return paths


def load_images(paths):
    """Read every path, skipping unreadable files with a warning"""
    images = []
    for path in paths:
        try:
            images.append((os.path.basename(path), read_image(path)))
        except ImageFormatError as e:
            logger.warning(f"⚠️ Skipping {path}: {e}")
    return images


def crop_patches(stack, max_patches, rng):
    """
    Random subset of patches for one step

    Returns:
        tuple: (P' x 3 x N x N symbols, P' x N x N validity mask)
    """
    mask = stack.valid_mask()
    if max_patches is None or stack.P <= max_patches:
        return stack.symbols, mask
    keep = np.sort(rng.choice(stack.P, size=max_patches, replace=False))
    return stack.symbols[keep], mask[keep]


class Trainer:
    """
    Runs the training loop and writes a checkpoint after every epoch

    Args:
        model_config (ModelConfig): Architecture
        train_config (TrainConfig): Optimiser and schedule
        model (HierarchicalModel): Optional model to continue from
    """

    def __init__(self, model_config, train_config, model=None):
        self.model_config = model_config.validate()
        self.train_config = train_config.validate()
        self.model = model or HierarchicalModel(model_config)
        self.parameters = self.model.parameters()
        self.optimizer = RMSProp(self.parameters, train_config.rmsprop_alpha, train_config.rmsprop_eps)
        self.rng = np.random.default_rng(train_config.seed)
        self.step_count = 0
        self.history = []

    def train_step(self, img, lr, epoch=0):
        """
        One optimiser step on one image

        Returns:
            dict: Loss terms in bpsp (L_raw reported, not differentiated) and the gradient norm
        """
        stack = img if isinstance(img, ResidualStack) else preprocess(img, self.model_config.N)
        symbols, mask = crop_patches(stack, self.train_config.max_patches, self.rng)
        subpixels = 3 * max(int(mask.sum()), 1)

        result = self.model.forward_full(symbols, mask)
        loss = result.total * (1.0 / subpixels)
        terms = {name: t.item() / subpixels for name, t in result.terms.items()}
        terms["L_raw"] = result.raw_bits / subpixels
        terms["loss"] = loss.item()

        if not all(math.isfinite(v) for v in terms.values()):
            logger.error(f"❌ Non-finite loss at step {self.step_count}: {terms}")
            raise TrainingDivergedError(self.step_count, terms)

        grads = backward(loss, self.parameters)
        grads, norm = clip_by_global_norm(grads, self.train_config.grad_clip)
        if not math.isfinite(norm):
            raise TrainingDivergedError(self.step_count, {**terms, "grad_norm": norm})
        self.optimizer.step(grads, lr)

        terms["grad_norm"] = norm
        if self.step_count % self.train_config.log_every == 0:
            logger.info("train_step", extra={"event": "train_step", "epoch": epoch, "step": self.step_count,
                                             "lr": lr, **{k: round(v, 6) for k, v in terms.items()}})
        self.step_count += 1
        return terms

    def train(self, data_dir, out_path):
        """
        Train on every readable image in data_dir

        Args:
            data_dir (str): Directory of PNG/PPM images
            out_path (str): Checkpoint path, rewritten after each epoch

        Returns:
            bytes: Fingerprint of the final checkpoint
        """
        images = load_images(list_images(data_dir))
        if not images:
            raise ImageFormatError(f"no readable training images in {data_dir}")
        stacks = [(name, preprocess(img, self.model_config.N)) for name, img in images]
        logger.info(f"🔍 Training on {len(stacks)} images for {self.train_config.epochs} epochs")

        fingerprint = None
        for epoch in range(self.train_config.epochs):
            lr = self.train_config.lr_at(epoch)
            order = self.rng.permutation(len(stacks))
            losses = [self.train_step(stacks[i][1], lr, epoch)["loss"] for i in order]
            mean_loss = float(np.mean(losses))
            self.history.append(mean_loss)
            logger.info(f"Epoch {epoch + 1}/{self.train_config.epochs}: mean loss {mean_loss:.4f} bpsp, lr {lr:.2e}")
            fingerprint = save_checkpoint(
                out_path, self.model.state_dict(), self.model_config,
                extra={"epoch": epoch + 1, "mean_loss_bpsp": mean_loss, "train": self.train_config.to_dict()},
            )
        logger.info(f"✅ Training complete, checkpoint at {out_path}")
        return fingerprint


def train(data_dir, out_path, model_config, train_config):
    """Train a fresh model and write its checkpoint"""
    return Trainer(model_config, train_config).train(data_dir, out_path)
